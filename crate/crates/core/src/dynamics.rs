//! Reversible gradient dynamics and the rank-one decay analysis.
//!
//! The gradient of a reversible layer has the structure
//! `G(W) = (1/N) Σ (Aᵢ − Bᵢ·W·Cᵢ)`. Under `W_{t+1} = W_t + α·G_t` this gives
//! the linear recursion `vec(G_{t+1}) = (I − α·S)·vec(G_t)` with
//! `S = (1/N) Σ Cᵢ ⊗ Bᵢ` and column-stacking `vec`. The component of `G` along
//! the smallest eigenspace of `S` shrinks slowest, so the fraction of energy
//! outside the best rank-one approximation, `κ(t)`, decays like
//! `((1−αλ₂)/(1−αλ₁))^{2t}`.

use serde::Serialize;
use thiserror::Error;

use crate::exec::Execution;
use crate::linalg::{gaussian_matrix, kron, random_orthogonal, svd, sym_eigen, sym_eigvals, LinalgError, Matrix};

/// Below this gradient norm the trajectory has converged to a fixed point.
pub const HALT_GRAD_FNORM: f64 = 1e-14;
/// Above this gradient norm the recursion is declared divergent.
pub const DIVERGENCE_GRAD_FNORM: f64 = 1e12;
/// `κ` values at or below this are dominated by round-off and skipped by the fit.
pub const KAPPA_FLOOR: f64 = 1e-13;
/// The slope fit uses the last 60% of the trace.
pub const TAIL_FRACTION: f64 = 0.6;
pub const MIN_TAIL_STEPS: usize = 50;
/// Eigenvalues closer than this multiple of `‖S‖₂` are treated as equal.
pub const DISTINCT_GAP: f64 = 1e-8;

const SYM_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("negative requested eigenvalue {0}")]
    NegativeEigenvalue(f64),
    #[error("steps must be at least 1")]
    NoSteps,
    #[error("diverged at step {step}: ‖G‖_F = {grad_fnorm:e}; reduce alpha (currently {alpha}, stable for alpha ≤ {stable_alpha:e})")]
    Divergence {
        step: usize,
        grad_fnorm: f64,
        alpha: f64,
        stable_alpha: f64,
    },
    #[error("S has no two distinct eigenvalues (gap ≤ {gap:e}); the decay bound is vacuous")]
    NoDistinctPair { gap: f64 },
    #[error("only {found} tail steps with κ > {KAPPA_FLOOR:e}, need {MIN_TAIL_STEPS}")]
    InsufficientTail { found: usize },
    #[error("initial gradient has no component in the slowest eigenspace")]
    DegenerateStart,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSystem {
    pub a_list: Vec<Matrix>,
    pub b_list: Vec<Matrix>,
    pub c_list: Vec<Matrix>,
    pub w0: Matrix,
    pub alpha: f64,
}

fn check_psd(what: &str, i: usize, m: &Matrix, dim: usize) -> Result<()> {
    if m.shape() != (dim, dim) {
        return Err(DynamicsError::InvalidSystem(format!("{what}[{i}] is {:?}, expected {dim}x{dim}", m.shape())));
    }
    let asym = m.sub(&m.transpose())?.max_abs();
    if asym > SYM_TOL {
        return Err(DynamicsError::InvalidSystem(format!("{what}[{i}] asymmetric by {asym:e}")));
    }
    let min = sym_eigvals(m)?[0];
    if min < -SYM_TOL {
        return Err(DynamicsError::InvalidSystem(format!("{what}[{i}] has eigenvalue {min:e} < 0")));
    }
    Ok(())
}

impl DynamicsSystem {
    pub fn new(a_list: Vec<Matrix>, b_list: Vec<Matrix>, c_list: Vec<Matrix>, w0: Matrix, alpha: f64) -> Result<Self> {
        let sys = Self { a_list, b_list, c_list, w0, alpha };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a_list.len();
        if n == 0 || self.b_list.len() != n || self.c_list.len() != n {
            return Err(DynamicsError::InvalidSystem(format!(
                "list lengths A={}, B={}, C={} must agree and be positive",
                n,
                self.b_list.len(),
                self.c_list.len()
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(DynamicsError::InvalidSystem(format!("alpha must be positive, got {}", self.alpha)));
        }
        let (rows, cols) = self.w0.shape();
        for (i, a) in self.a_list.iter().enumerate() {
            if a.shape() != (rows, cols) {
                return Err(DynamicsError::InvalidSystem(format!("A[{i}] is {:?}, W is {:?}", a.shape(), (rows, cols))));
            }
        }
        for i in 0..n {
            check_psd("B", i, &self.b_list[i], rows)?;
            check_psd("C", i, &self.c_list[i], cols)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.a_list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_list.is_empty()
    }

    /// `(1/N) Σ (Aᵢ − Bᵢ·W·Cᵢ)`.
    pub fn gradient(&self, w: &Matrix) -> Result<Matrix> {
        let mut g = Matrix::zeros(w.rows(), w.cols());
        for ((a, b), c) in self.a_list.iter().zip(&self.b_list).zip(&self.c_list) {
            g.axpy(1.0, a)?;
            g.axpy(-1.0, &b.matmul(w)?.matmul(c)?)?;
        }
        Ok(g.scale(1.0 / self.len() as f64))
    }

    /// `(1/N) Σ Bᵢ·G·Cᵢ`, the change of `G` per unit step.
    pub fn apply_operator(&self, g: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(g.rows(), g.cols());
        for (b, c) in self.b_list.iter().zip(&self.c_list) {
            out.axpy(1.0, &b.matmul(g)?.matmul(c)?)?;
        }
        Ok(out.scale(1.0 / self.len() as f64))
    }

    /// `S = (1/N) Σ Cᵢ ⊗ Bᵢ`.
    pub fn s_matrix(&self) -> Result<Matrix> {
        let mut s: Option<Matrix> = None;
        for (b, c) in self.b_list.iter().zip(&self.c_list) {
            let term = kron(c, b)?;
            match s.as_mut() {
                Some(acc) => acc.axpy(1.0, &term)?,
                None => s = Some(term),
            }
        }
        Ok(s.expect("validated nonempty").scale(1.0 / self.len() as f64))
    }

    /// `2/λ_max(S)`, the largest step with nonincreasing `‖G‖_F`.
    pub fn max_stable_alpha(&self) -> Result<f64> {
        let vals = sym_eigvals(&self.s_matrix()?)?;
        Ok(2.0 / vals.last().copied().unwrap_or(0.0))
    }
}

/// Target eigenvalues for the generated `Bᵢ` and `Cᵢ`.
///
/// A list shorter than the dimension is padded with its last entry, so
/// `[1, 2]` on a 6×6 block means `(1, 2, 2, 2, 2, 2)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSpec {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Use one eigenbasis for all `Bᵢ` (and one for all `Cᵢ`).
    pub shared_basis: bool,
}

impl SpectrumSpec {
    fn expand(values: &[f64], dim: usize) -> Result<Vec<f64>> {
        if values.is_empty() {
            return Err(DynamicsError::InvalidSystem("empty spectrum".into()));
        }
        if values.len() > dim {
            return Err(DynamicsError::InvalidSystem(format!("{} eigenvalues for dimension {dim}", values.len())));
        }
        if let Some(&bad) = values.iter().find(|&&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(DynamicsError::NegativeEigenvalue(bad));
        }
        let last = *values.last().expect("nonempty");
        Ok((0..dim).map(|i| values.get(i).copied().unwrap_or(last)).collect())
    }
}

fn psd_with_spectrum(values: &[f64], seed: u64) -> Matrix {
    if values.iter().all(|&v| v == values[0]) {
        return Matrix::identity(values.len()).scale(values[0]);
    }
    let q = random_orthogonal(values.len(), seed);
    let m = q.matmul(&Matrix::diag(values)).and_then(|x| x.matmul_t(&q)).expect("square shapes agree");
    // Exact symmetry; the product is symmetric only up to round-off.
    let t = m.transpose();
    m.add(&t).expect("same shape").scale(0.5)
}

/// Seeded system with `Bᵢ = QᵢΛ_BQᵢᵀ`, `Cᵢ = PᵢΛ_CPᵢᵀ`, Gaussian `Aᵢ` and `W₀`.
pub fn make_system(n: usize, m: usize, count: usize, spectrum: &SpectrumSpec, alpha: f64, seed: u64) -> Result<DynamicsSystem> {
    if n == 0 || m == 0 || count == 0 {
        return Err(DynamicsError::InvalidSystem(format!("n={n}, m={m}, N={count} must be positive")));
    }
    let b_vals = SpectrumSpec::expand(&spectrum.b, n)?;
    let c_vals = SpectrumSpec::expand(&spectrum.c, m)?;
    let base = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let sub = |tag: u64, i: usize| base.wrapping_add(tag * 1_000_003 + i as u64);
    let basis_index = |i: usize| if spectrum.shared_basis { 0 } else { i };
    let b_list = (0..count).map(|i| psd_with_spectrum(&b_vals, sub(1, basis_index(i)))).collect();
    let c_list = (0..count).map(|i| psd_with_spectrum(&c_vals, sub(2, basis_index(i)))).collect();
    let a_list = (0..count).map(|i| gaussian_matrix(n, m, sub(3, i))).collect();
    let w0 = gaussian_matrix(n, m, sub(4, 0));
    DynamicsSystem::new(a_list, b_list, c_list, w0, alpha)
}

/// The reference system: `n = m = 6`, `N = 2`, `α = 0.01`, shared `B`
/// eigenbasis with spectrum `(1, 2, …, 2)` and `C = I`.
pub fn standard_system(seed: u64) -> Result<DynamicsSystem> {
    let spectrum = SpectrumSpec { b: vec![1.0, 2.0], c: vec![1.0], shared_basis: true };
    make_system(6, 6, 2, &spectrum, 0.01, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsStep {
    pub step: usize,
    pub w: Matrix,
    pub g: Matrix,
    pub grad_fnorm: f64,
    pub kappa: f64,
    pub stable_rank: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTrace {
    pub steps: Vec<DynamicsStep>,
    /// `‖G‖_F` fell below [`HALT_GRAD_FNORM`] before the step budget ran out.
    pub halted_early: bool,
}

impl DynamicsTrace {
    pub fn kappa_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.kappa).collect()
    }

    pub fn sr_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.stable_rank).collect()
    }

    /// First step whose gradient norm exceeds its predecessor's by more than
    /// `rel_tol`, if any.
    pub fn first_norm_increase(&self, rel_tol: f64) -> Option<usize> {
        self.steps
            .windows(2)
            .find(|w| w[1].grad_fnorm > w[0].grad_fnorm * (1.0 + rel_tol))
            .map(|w| w[1].step)
    }
}

/// `(κ, stable rank)` from one SVD; both zero for a zero matrix.
fn rank_statistics(g: &Matrix) -> Result<(f64, f64)> {
    if g.fro_norm() == 0.0 {
        return Ok((0.0, 0.0));
    }
    let dec = svd(g)?;
    let total = dec.total_energy();
    let kappa = (dec.tail_energy(1) / total).clamp(0.0, 1.0);
    Ok((kappa, (total.sqrt() / dec.s[0]).max(1.0)))
}

/// Iterates `W_{t+1} = W_t + α·G_t` for up to `steps` recorded steps.
pub fn simulate(sys: &DynamicsSystem, steps: usize) -> Result<DynamicsTrace> {
    if steps == 0 {
        return Err(DynamicsError::NoSteps);
    }
    sys.validate()?;
    let mut w = sys.w0.clone();
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let g = sys.gradient(&w)?;
        let grad_fnorm = g.fro_norm();
        if !(grad_fnorm <= DIVERGENCE_GRAD_FNORM) {
            return Err(DynamicsError::Divergence {
                step,
                grad_fnorm,
                alpha: sys.alpha,
                stable_alpha: sys.max_stable_alpha()?,
            });
        }
        let (kappa, stable_rank) = rank_statistics(&g)?;
        let mut w_next = w.clone();
        w_next.axpy(sys.alpha, &g)?;
        out.push(DynamicsStep { step, w, g, grad_fnorm, kappa, stable_rank });
        if grad_fnorm < HALT_GRAD_FNORM {
            return Ok(DynamicsTrace { steps: out, halted_early: step + 1 < steps });
        }
        w = w_next;
    }
    Ok(DynamicsTrace { steps: out, halted_early: false })
}

/// Simulates independent systems, in parallel when `exec` allows.
pub fn simulate_many(systems: &[DynamicsSystem], steps: usize, exec: Execution) -> Vec<Result<DynamicsTrace>> {
    exec.map_collect(systems.len(), |i| simulate(&systems[i], steps))
}

/// Least-squares line through `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    LineFit { slope, intercept: my - slope * mx, r_squared }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `c₁ = (1 − αλ₂)/(1 − αλ₁)`.
    pub predicted_ratio: f64,
    /// Least-squares slope of `ln κ(t)` per step over the tail window.
    pub measured_slope: f64,
    pub kappa_series: Vec<f64>,
    pub sr_series: Vec<f64>,
    #[serde(skip)]
    pub fit: LineFit,
    /// Steps used by the fit.
    #[serde(skip)]
    pub tail_steps: Vec<usize>,
}

impl DecayReport {
    /// `2·ln c₁`, the per-step decrement of `ln κ` implied by the spectrum.
    pub fn predicted_slope(&self) -> f64 {
        2.0 * self.predicted_ratio.ln()
    }

    pub fn relative_slope_error(&self) -> f64 {
        ((self.measured_slope - self.predicted_slope()) / self.predicted_slope()).abs()
    }
}

/// `(λ₁, λ₂, gap)`: the two smallest distinct eigenvalues of `S` and the gap used.
pub fn smallest_distinct_pair(s: &Matrix) -> Result<(f64, f64, f64)> {
    let vals = sym_eigvals(s)?;
    let norm = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let gap = DISTINCT_GAP * norm;
    let lambda1 = vals[0];
    vals.iter()
        .copied()
        .find(|&v| v - lambda1 > gap)
        .map(|lambda2| (lambda1, lambda2, gap))
        .ok_or(DynamicsError::NoDistinctPair { gap })
}

/// Step indices used for the slope fit.
pub fn tail_window(trace: &DynamicsTrace) -> Vec<usize> {
    let total = trace.steps.len();
    let start = total - ((total as f64) * TAIL_FRACTION).floor() as usize;
    (start..total).filter(|&i| trace.steps[i].kappa > KAPPA_FLOOR).collect()
}

pub fn analyze(sys: &DynamicsSystem, trace: &DynamicsTrace) -> Result<DecayReport> {
    let (lambda1, lambda2, _) = smallest_distinct_pair(&sys.s_matrix()?)?;
    let predicted_ratio = (1.0 - sys.alpha * lambda2) / (1.0 - sys.alpha * lambda1);
    let tail = tail_window(trace);
    if tail.len() < MIN_TAIL_STEPS {
        return Err(DynamicsError::InsufficientTail { found: tail.len() });
    }
    let xs: Vec<f64> = tail.iter().map(|&i| trace.steps[i].step as f64).collect();
    let ys: Vec<f64> = tail.iter().map(|&i| trace.steps[i].kappa.ln()).collect();
    let fit = fit_line(&xs, &ys);
    Ok(DecayReport {
        lambda1,
        lambda2,
        predicted_ratio,
        measured_slope: fit.slope,
        kappa_series: trace.kappa_series(),
        sr_series: trace.sr_series(),
        fit,
        tail_steps: tail.iter().map(|&i| trace.steps[i].step).collect(),
    })
}

/// `c₁^{2(t−t₀)}·c₂` with `c₂ = ‖g₀^⊥‖²/‖g₀^∥‖²`, where `g₀^∥` is the part of
/// `vec(G_{t₀})` in the `λ₁` eigenspace of `S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaBound {
    pub t0: usize,
    pub c1: f64,
    pub c2: f64,
}

impl KappaBound {
    pub fn at(&self, step: usize) -> f64 {
        self.c1.powf(2.0 * (step as f64 - self.t0 as f64)) * self.c2
    }
}

pub fn kappa_bound(sys: &DynamicsSystem, trace: &DynamicsTrace, t0: usize) -> Result<KappaBound> {
    let s = sys.s_matrix()?;
    let (lambda1, lambda2, gap) = smallest_distinct_pair(&s)?;
    let eig = sym_eigen(&s)?;
    let g0 = trace
        .steps
        .get(t0)
        .ok_or_else(|| DynamicsError::InvalidSystem(format!("t0 = {t0} beyond trace")))?
        .g
        .vec_col_major();
    let mut parallel_sq = 0.0;
    for (k, &val) in eig.values.iter().enumerate() {
        if val - lambda1 <= gap {
            let coef: f64 = (0..g0.len()).map(|i| eig.vectors.get(i, k) * g0[i]).sum();
            parallel_sq += coef * coef;
        }
    }
    let total_sq: f64 = g0.iter().map(|x| x * x).sum();
    if parallel_sq <= f64::EPSILON * total_sq {
        return Err(DynamicsError::DegenerateStart);
    }
    let c1 = (1.0 - sys.alpha * lambda2) / (1.0 - sys.alpha * lambda1);
    Ok(KappaBound { t0, c1, c2: (total_sq - parallel_sq).max(0.0) / parallel_sq })
}

/// `‖vec(G_{t+1}) − (I − αS)·vec(G_t)‖₂` for consecutive trace steps.
pub fn vec_form_residual(sys: &DynamicsSystem, s: &Matrix, g_t: &Matrix, g_next: &Matrix) -> Result<f64> {
    let v = g_t.vec_col_major();
    let sv = s.matmul(&Matrix::column(&v))?;
    let predicted: Vec<f64> = v.iter().enumerate().map(|(i, x)| x - sys.alpha * sv.get(i, 0)).collect();
    let actual = g_next.vec_col_major();
    Ok(predicted.iter().zip(&actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag_system(b: &[f64], alpha: f64, w0: Matrix) -> DynamicsSystem {
        let (n, m) = w0.shape();
        DynamicsSystem::new(vec![Matrix::zeros(n, m)], vec![Matrix::diag(b)], vec![Matrix::identity(m)], w0, alpha).unwrap()
    }

    #[test]
    fn fixed_point_is_constant() {
        let sys0 = standard_system(3).unwrap();
        let w_star = gaussian_matrix(6, 6, 9);
        let a_list = sys0.b_list.iter().zip(&sys0.c_list).map(|(b, c)| b.matmul(&w_star).unwrap().matmul(c).unwrap()).collect();
        let sys = DynamicsSystem::new(a_list, sys0.b_list, sys0.c_list, w_star.clone(), 0.01).unwrap();
        let trace = simulate(&sys, 20).unwrap();
        assert!(trace.halted_early || trace.steps.iter().all(|s| s.grad_fnorm < 1e-12));
        assert!(trace.steps.iter().all(|s| s.w.sub(&w_star).unwrap().max_abs() < 1e-12));
    }

    #[test]
    fn identity_system_decays_geometrically() {
        let w0 = gaussian_matrix(3, 4, 1);
        let alpha = 0.05;
        let sys = diag_system(&[1.0, 1.0, 1.0], alpha, w0.clone());
        let trace = simulate(&sys, 60).unwrap();
        for s in &trace.steps {
            let expected = w0.scale((1.0 - alpha).powi(s.step as i32));
            assert!(s.w.sub(&expected).unwrap().max_abs() <= 1e-10, "step {}", s.step);
            assert!(s.g.add(&s.w).unwrap().max_abs() <= 1e-12);
        }
    }

    #[test]
    fn two_by_two_log_kappa_is_affine() {
        let sys = diag_system(&[1.0, 2.0], 0.05, gaussian_matrix(2, 3, 2));
        let trace = simulate(&sys, 300).unwrap();
        let report = analyze(&sys, &trace).unwrap();
        assert!(report.fit.r_squared >= 0.99, "R² {}", report.fit.r_squared);
        let kappas = trace.kappa_series();
        let tail = &kappas[20..];
        assert!(tail.windows(2).all(|w| w[1] <= w[0]));
        assert!(report.relative_slope_error() < 0.1);
    }

    #[test]
    fn spectrum_of_s_matches_b_spectrum() {
        let sys = standard_system(5).unwrap();
        let (l1, l2, _) = smallest_distinct_pair(&sys.s_matrix().unwrap()).unwrap();
        assert!((l1 - 1.0).abs() < 1e-8 && (l2 - 2.0).abs() < 1e-8);
        let report = analyze(&sys, &simulate(&sys, 1000).unwrap()).unwrap();
        assert!(report.lambda1 < report.lambda2);
        assert!(report.predicted_ratio > 0.0 && report.predicted_ratio < 1.0);
    }

    #[test]
    fn standard_system_slope_matches_prediction() {
        let sys = standard_system(0).unwrap();
        let trace = simulate(&sys, 1000).unwrap();
        let report = analyze(&sys, &trace).unwrap();
        let predicted = 2.0 * ((1.0 - 0.01 * 2.0) / (1.0 - 0.01 * 1.0f64)).ln();
        assert!((report.predicted_slope() - predicted).abs() < 1e-9);
        assert!(report.relative_slope_error() <= 0.1, "measured {} predicted {}", report.measured_slope, predicted);
    }

    #[test]
    fn tiny_alpha_is_flat() {
        let spectrum = SpectrumSpec { b: vec![1.0, 2.0], c: vec![1.0], shared_basis: true };
        let sys = make_system(6, 6, 2, &spectrum, 1e-6, 0).unwrap();
        let report = analyze(&sys, &simulate(&sys, 200).unwrap()).unwrap();
        assert!(report.measured_slope.abs() <= 1e-4);
        assert!((report.predicted_ratio - 1.0).abs() < 1e-5);
    }

    #[test]
    fn literal_bound_holds_on_tail() {
        let sys = standard_system(1).unwrap();
        let trace = simulate(&sys, 1000).unwrap();
        let bound = kappa_bound(&sys, &trace, 0).unwrap();
        for i in tail_window(&trace) {
            let s = &trace.steps[i];
            assert!(s.kappa <= bound.at(s.step) * (1.0 + 1e-9), "step {}: {} > {}", s.step, s.kappa, bound.at(s.step));
        }
    }

    #[test]
    fn vec_form_equivalence_each_step() {
        let spectrum = SpectrumSpec { b: vec![0.5, 1.0, 3.0], c: vec![1.0, 2.0], shared_basis: false };
        let sys = make_system(3, 4, 3, &spectrum, 0.02, 4).unwrap();
        let s = sys.s_matrix().unwrap();
        let trace = simulate(&sys, 50).unwrap();
        for w in trace.steps.windows(2) {
            let r = vec_form_residual(&sys, &s, &w[0].g, &w[1].g).unwrap();
            assert!(r <= 1e-10, "residual {r}");
        }
    }

    #[test]
    fn norm_nonincreasing_at_max_stable_alpha() {
        let spectrum = SpectrumSpec { b: vec![0.5, 1.0, 3.0], c: vec![1.0, 2.0], shared_basis: false };
        let mut sys = make_system(3, 4, 2, &spectrum, 1.0, 8).unwrap();
        sys.alpha = sys.max_stable_alpha().unwrap();
        let trace = simulate(&sys, 200).unwrap();
        assert_eq!(trace.first_norm_increase(1e-12), None);
    }

    #[test]
    fn divergence_is_reported() {
        let sys = diag_system(&[1.0, 2.0], 5.0, gaussian_matrix(2, 2, 1));
        match simulate(&sys, 1000) {
            Err(DynamicsError::Divergence { step, stable_alpha, .. }) => {
                assert!(step > 0);
                assert!((stable_alpha - 1.0).abs() < 1e-12);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn equal_spectrum_has_no_distinct_pair() {
        let sys = diag_system(&[2.0, 2.0], 0.01, gaussian_matrix(2, 2, 1));
        let trace = simulate(&sys, 100).unwrap();
        assert!(matches!(analyze(&sys, &trace), Err(DynamicsError::NoDistinctPair { .. })));
    }

    #[test]
    fn make_system_validation_and_identity() {
        let spec = SpectrumSpec { b: vec![1.0], c: vec![1.0], shared_basis: false };
        let sys = make_system(4, 3, 2, &spec, 0.1, 0).unwrap();
        assert!(sys.b_list.iter().all(|b| b.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-10));
        let neg = SpectrumSpec { b: vec![1.0, -0.5], c: vec![1.0], shared_basis: false };
        assert!(matches!(make_system(4, 3, 2, &neg, 0.1, 0), Err(DynamicsError::NegativeEigenvalue(_))));
        assert_eq!(make_system(4, 3, 2, &spec, 0.1, 7).unwrap(), make_system(4, 3, 2, &spec, 0.1, 7).unwrap());
        let bad = DynamicsSystem::new(vec![Matrix::zeros(2, 2)], vec![Matrix::diag(&[1.0, -1.0])], vec![Matrix::identity(2)], Matrix::zeros(2, 2), 0.1);
        assert!(bad.is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn requested_spectrum_round_trips(vals in prop::collection::vec(0.0f64..5.0, 4), seed in 0u64..1000) {
            let spec = SpectrumSpec { b: vals.clone(), c: vec![1.0], shared_basis: false };
            let sys = make_system(4, 2, 2, &spec, 0.1, seed).unwrap();
            let mut want = vals.clone();
            want.sort_by(f64::total_cmp);
            for b in &sys.b_list {
                let got = sym_eigvals(b).unwrap();
                for (g, w) in got.iter().zip(&want) {
                    prop_assert!((g - w).abs() < 1e-8);
                }
            }
        }

        #[test]
        fn parallel_and_sequential_simulations_agree(seed in 0u64..100) {
            let systems: Vec<_> = (0..3).map(|k| standard_system(seed + k).unwrap()).collect();
            let a = simulate_many(&systems, 30, Execution::Sequential);
            let b = simulate_many(&systems, 30, Execution::Parallel);
            for (x, y) in a.into_iter().zip(b) {
                prop_assert_eq!(x.unwrap(), y.unwrap());
            }
        }
    }
}
