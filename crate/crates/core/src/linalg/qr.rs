use super::{LinalgError, Matrix, Result};

/// Relative pivot threshold below which a column is treated as dependent.
const RANK_TOL: f64 = 1e-12;

/// Householder reflector `I − 2vvᵀ` acting on rows `start..`; `v` is unit.
struct Reflector {
    start: usize,
    v: Vec<f64>,
}

impl Reflector {
    /// Builds the reflector mapping `x` onto `alpha·e₁`, returning `alpha`.
    fn annihilate(start: usize, x: &[f64]) -> (Option<Self>, f64) {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (None, 0.0);
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            return (None, x[0]);
        }
        v.iter_mut().for_each(|t| *t /= vnorm);
        (Some(Self { start, v }), alpha)
    }

    fn apply_to_col(&self, m: &mut Matrix, j: usize) {
        let dot: f64 = self.v.iter().enumerate().map(|(k, vk)| vk * m.get(self.start + k, j)).sum();
        for (k, vk) in self.v.iter().enumerate() {
            let i = self.start + k;
            m.set(i, j, m.get(i, j) - 2.0 * dot * vk);
        }
    }
}

/// Accumulates the thin Q factor from reflectors, flipping column signs so
/// the implied R has a nonnegative diagonal.
fn form_q(n: usize, reflectors: &[Option<Reflector>], diag_sign: &[f64]) -> Matrix {
    let k = diag_sign.len();
    let mut q = Matrix::diag_rect(n, k, &vec![1.0; k]);
    for h in reflectors.iter().rev().flatten() {
        for j in 0..k {
            h.apply_to_col(&mut q, j);
        }
    }
    for (j, &s) in diag_sign.iter().enumerate() {
        if s < 0.0 {
            for i in 0..n {
                q.set(i, j, -q.get(i, j));
            }
        }
    }
    q
}

/// Thin Householder QR; returns the `n x k` factor with orthonormal columns
/// spanning the columns of `a`.
///
/// Fails with [`LinalgError::RankDeficient`] naming the first column whose
/// pivot falls below `1e-12·‖a‖_F`.
pub fn qr_orthonormal(a: &Matrix) -> Result<Matrix> {
    let (n, k) = a.shape();
    if k > n {
        return Err(LinalgError::DimensionMismatch { op: "qr_orthonormal", left: (n, k), right: (k, n) });
    }
    let tol = RANK_TOL * a.fro_norm();
    let mut work = a.clone();
    let mut reflectors = Vec::with_capacity(k);
    let mut diag_sign = Vec::with_capacity(k);
    for j in 0..k {
        let x: Vec<f64> = (j..n).map(|i| work.get(i, j)).collect();
        let (h, alpha) = Reflector::annihilate(j, &x);
        if alpha.abs() <= tol {
            return Err(LinalgError::RankDeficient { column: j, pivot: alpha.abs() });
        }
        if let Some(h) = &h {
            for c in j..k {
                h.apply_to_col(&mut work, c);
            }
        }
        reflectors.push(h);
        diag_sign.push(alpha.signum());
    }
    Ok(form_q(n, &reflectors, &diag_sign))
}

/// Column-pivoted Householder QR truncated at the numerical rank.
///
/// Returns an `n x k` orthonormal basis, `k ≤ cols`, for the numerical column
/// span of `a`: pivoting stops once every remaining column norm is at most
/// `rel_tol·‖a‖_F`. Returns `None` when `a` is numerically zero.
pub fn qr_rank_revealing(a: &Matrix, rel_tol: f64) -> Option<Matrix> {
    let (n, m) = a.shape();
    let tol = rel_tol * a.fro_norm();
    let mut work = a.clone();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut reflectors = Vec::new();
    let mut diag_sign = Vec::new();
    for j in 0..m.min(n) {
        let residual_norm = |c: usize, w: &Matrix| (j..n).map(|i| w.get(i, c).powi(2)).sum::<f64>().sqrt();
        let (best, best_norm) = (j..m)
            .map(|p| (p, residual_norm(perm[p], &work)))
            .fold((j, -1.0), |acc, cand| if cand.1 > acc.1 { cand } else { acc });
        if best_norm <= tol {
            break;
        }
        perm.swap(j, best);
        let col = perm[j];
        let x: Vec<f64> = (j..n).map(|i| work.get(i, col)).collect();
        let (h, alpha) = Reflector::annihilate(j, &x);
        if let Some(h) = &h {
            for &c in &perm[j..] {
                h.apply_to_col(&mut work, c);
            }
        }
        reflectors.push(h);
        diag_sign.push(alpha.signum());
    }
    if diag_sign.is_empty() {
        return None;
    }
    Some(form_q(n, &reflectors, &diag_sign))
}
