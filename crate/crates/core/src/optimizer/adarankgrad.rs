use serde::{Deserialize, Serialize};

use super::{
    apply_weight_decay, check_same_shape, Hyperparams, InnerExit, LayerOptimizer, LayerStep, OptimError,
    RankPolicy, RefreshReason, Result, SecondMomentTransform, StepEvent, StepStats, UpdateRule,
};
use crate::linalg::Matrix;
use crate::lowrank::{iass, IassOptions};

/// The projection currently in force for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionState {
    /// `n x rank`, orthonormal columns.
    pub q: Matrix,
    pub rank: usize,
    /// Global step count when this basis was selected.
    pub refreshed_at_step: u64,
    /// `‖g‖_F` of the gradient the basis was selected from.
    pub ref_grad_fnorm: f64,
    /// Error ratio of that gradient against the basis.
    pub error_ratio: f64,
}

/// Adaptive-rank projected optimizer state for one weight matrix.
#[derive(Debug, Clone)]
pub struct AdaRankGrad {
    pub hp: Hyperparams,
    pub projection: Option<ProjectionState>,
    /// `rank x m` projected first moment.
    pub m: Option<Matrix>,
    /// `rank x m` projected second moment, entrywise nonnegative.
    pub v: Option<Matrix>,
    /// Global step counter; the first update runs with `t = 1`.
    pub t: u64,
    steps_since_refresh: usize,
    refreshes: u64,
}

impl AdaRankGrad {
    pub fn new(hp: Hyperparams) -> Result<Self> {
        hp.validate()?;
        Ok(Self { hp, projection: None, m: None, v: None, t: 0, steps_since_refresh: 0, refreshes: 0 })
    }

    /// State with explicit projection and moments, mainly for tests.
    pub fn with_moments(hp: Hyperparams, projection: ProjectionState, m: Matrix, v: Matrix, t: u64) -> Result<Self> {
        let mut s = Self::new(hp)?;
        if m.rows() != projection.rank || v.shape() != m.shape() {
            return Err(OptimError::Shape {
                what: "moments",
                got: m.shape(),
                expected: (projection.rank, m.cols()),
            });
        }
        s.projection = Some(projection);
        s.m = Some(m);
        s.v = Some(v);
        s.t = t;
        Ok(s)
    }

    pub fn refreshes(&self) -> u64 {
        self.refreshes
    }

    pub fn steps_since_refresh(&self) -> usize {
        self.steps_since_refresh
    }

    /// Picks the projection basis for `g`.
    ///
    /// A basis spanning all of `R^n`, or a fixed rank of at least `n`, is
    /// replaced by the identity, so a full-rank projection leaves coordinates
    /// untouched.
    pub fn select_subspace(&self, g: &Matrix) -> Result<ProjectionState> {
        let (n, m) = g.shape();
        if let RankPolicy::Fixed(r) = self.hp.rank_policy {
            if r >= n {
                return Ok(ProjectionState {
                    q: Matrix::identity(n),
                    rank: n,
                    refreshed_at_step: self.t,
                    ref_grad_fnorm: g.fro_norm(),
                    error_ratio: 0.0,
                });
            }
        }
        let dim = n.min(m);
        let (r_min, r_max) = match self.hp.rank_policy {
            RankPolicy::Adaptive => (self.hp.r_init.min(dim), self.hp.r_max.min(dim)),
            RankPolicy::Fixed(r) => (r.min(dim), r.min(dim)),
        };
        let seed = self.hp.seed.wrapping_add(self.refreshes);
        let opts = IassOptions::new(r_min, r_max, self.hp.eta_th, seed, self.hp.basis_mode);
        let found = iass(g, &opts)?;
        let (q, error_ratio) = if found.rank == n {
            (Matrix::identity(n), 0.0)
        } else {
            (found.basis, found.error_ratio)
        };
        Ok(ProjectionState {
            rank: q.cols(),
            q,
            refreshed_at_step: self.t,
            ref_grad_fnorm: g.fro_norm(),
            error_ratio,
        })
    }

    /// Re-expresses the moments in the basis `q_new`: `M ← R·M` with
    /// `R = q_newᵀ·q_old`, and `V ← max(R·V, 0)` or `V ← (R∘R)·V` depending on
    /// `hp.v_transform`. Before any update the moments are zero.
    pub fn transform_moments(&self, q_new: &Matrix, cols: usize) -> Result<(Matrix, Matrix)> {
        let r_new = q_new.cols();
        let (proj, m_old, v_old) = match (&self.projection, &self.m, &self.v) {
            (Some(p), Some(m), Some(v)) if self.t > 0 => (p, m, v),
            _ => return Ok((Matrix::zeros(r_new, cols), Matrix::zeros(r_new, cols))),
        };
        if q_new.rows() != proj.q.rows() {
            return Err(OptimError::Shape { what: "new basis", got: q_new.shape(), expected: proj.q.shape() });
        }
        if m_old.cols() != cols {
            return Err(OptimError::Shape { what: "moments", got: m_old.shape(), expected: (m_old.rows(), cols) });
        }
        let rotation = q_new.t_matmul(&proj.q)?;
        let m_new = rotation.matmul(m_old)?;
        let v_new = match self.hp.v_transform {
            SecondMomentTransform::Linear => rotation.matmul(v_old)?.max_scalar(0.0),
            SecondMomentTransform::Squared => rotation.square().matmul(v_old)?,
        };
        Ok((m_new, v_new))
    }

    fn bias_step(&self) -> u64 {
        if self.hp.reset_bias_on_refresh {
            self.steps_since_refresh as u64 + 1
        } else {
            self.t
        }
    }

    /// Projected Adam update with the already incremented counter `t`.
    pub fn adam_step(&mut self, g_hat: &Matrix, w: &Matrix) -> Result<Matrix> {
        if self.t == 0 {
            return Err(OptimError::ZeroStep);
        }
        let proj = self.projection.as_ref().ok_or(OptimError::ZeroStep)?;
        if g_hat.rows() != proj.rank || proj.q.rows() != w.rows() || g_hat.cols() != w.cols() {
            return Err(OptimError::Shape { what: "projected gradient", got: g_hat.shape(), expected: (proj.rank, w.cols()) });
        }
        let hp = &self.hp;
        let (b1, b2) = (hp.beta1, hp.beta2);
        let m = self.m.get_or_insert_with(|| Matrix::zeros(g_hat.rows(), g_hat.cols()));
        let v = self.v.get_or_insert_with(|| Matrix::zeros(g_hat.rows(), g_hat.cols()));
        let mut m_next = m.scale(b1);
        m_next.axpy(1.0 - b1, g_hat)?;
        let mut v_next = v.scale(b2);
        v_next.axpy(1.0 - b2, &g_hat.square())?;
        let v_next = v_next.max_scalar(0.0);
        *m = m_next;
        *v = v_next;

        let t = self.bias_step() as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let eps = hp.epsilon;
        let (m, v) = (self.m.as_ref().expect("set above"), self.v.as_ref().expect("set above"));
        let direction = Matrix::from_vec(
            m.rows(),
            m.cols(),
            m.data()
                .iter()
                .zip(v.data())
                .map(|(&mi, &vi)| (mi / c1) / ((vi / c2).sqrt() + eps))
                .collect(),
        )?;
        let mut w_next = w.clone();
        w_next.axpy(-hp.alpha, &proj.q.matmul(&direction)?)?;
        apply_weight_decay(&mut w_next, w, hp.alpha, hp.weight_decay)?;
        Ok(w_next)
    }

    fn sgd_step(&self, g_hat: &Matrix, w: &Matrix) -> Result<Matrix> {
        let proj = self.projection.as_ref().ok_or(OptimError::ZeroStep)?;
        let mut w_next = w.clone();
        w_next.axpy(-self.hp.alpha, &proj.q.matmul(g_hat)?)?;
        apply_weight_decay(&mut w_next, w, self.hp.alpha, self.hp.weight_decay)?;
        Ok(w_next)
    }

    /// Why the inner loop should hand back to subspace selection, if at all.
    fn exit_reason(&self, proj: &ProjectionState, proj_grad_fnorm: f64) -> Option<RefreshReason> {
        match self.hp.inner_exit {
            InnerExit::AdaptiveVarsigma2 => {
                let varsigma2 = (1.0 - self.hp.eta_th).sqrt() * proj.ref_grad_fnorm;
                if proj_grad_fnorm <= varsigma2 {
                    return Some(RefreshReason::ProjectedGradientConverged);
                }
            }
            InnerExit::FixedInterval(k) => {
                if self.steps_since_refresh >= k {
                    return Some(RefreshReason::IntervalElapsed);
                }
            }
        }
        (self.steps_since_refresh >= self.hp.max_inner_steps).then_some(RefreshReason::InnerStepCap)
    }

    /// One full iteration: outer convergence check, optional subspace
    /// refresh with moment transformation, then the projected update.
    pub fn step(&mut self, g: &Matrix, w: &Matrix) -> Result<LayerStep> {
        check_same_shape("gradient", g, w)?;
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient);
        }
        let grad_fnorm = g.fro_norm();
        if grad_fnorm <= self.hp.varsigma1 {
            let (rank, proj_grad_fnorm) = match &self.projection {
                Some(p) => (p.rank, p.q.t_matmul(g)?.fro_norm()),
                None => (0, 0.0),
            };
            return Ok(LayerStep {
                w: w.clone(),
                stats: StepStats { rank, eta_ratio: 0.0, grad_fnorm, proj_grad_fnorm, refreshed: false },
                events: vec![StepEvent::Converged { grad_fnorm }],
            });
        }

        let mut events = Vec::new();
        let reason = match &self.projection {
            None => Some(RefreshReason::Initial),
            Some(p) => {
                let ghat_norm = p.q.t_matmul(g)?.fro_norm();
                self.exit_reason(p, ghat_norm)
            }
        };
        if let Some(reason) = reason {
            let fresh = self.select_subspace(g)?;
            let (m, v) = if self.hp.transform_moments {
                self.transform_moments(&fresh.q, g.cols())?
            } else {
                match (&self.m, &self.v) {
                    (Some(m), Some(v)) if m.rows() == fresh.rank => (m.clone(), v.clone()),
                    _ => (Matrix::zeros(fresh.rank, g.cols()), Matrix::zeros(fresh.rank, g.cols())),
                }
            };
            events.push(StepEvent::Refreshed {
                old_rank: self.projection.as_ref().map(|p| p.rank),
                new_rank: fresh.rank,
                error_ratio: fresh.error_ratio,
                reason,
            });
            self.projection = Some(fresh);
            self.m = Some(m);
            self.v = Some(v);
            self.steps_since_refresh = 0;
            self.refreshes += 1;
        }

        let proj = self.projection.as_ref().expect("selected above");
        let g_hat = proj.q.t_matmul(g)?;
        let proj_grad_fnorm = g_hat.fro_norm();
        let rank = proj.rank;
        let eta_ratio = (1.0 - (proj_grad_fnorm / grad_fnorm).powi(2)).clamp(0.0, 1.0);

        self.t += 1;
        let w_next = match self.hp.update {
            UpdateRule::Adam => self.adam_step(&g_hat, w)?,
            UpdateRule::Sgd => self.sgd_step(&g_hat, w)?,
        };
        self.steps_since_refresh += 1;
        Ok(LayerStep {
            w: w_next,
            stats: StepStats { rank, eta_ratio, grad_fnorm, proj_grad_fnorm, refreshed: reason.is_some() },
            events,
        })
    }
}

impl LayerOptimizer for AdaRankGrad {
    fn step(&mut self, g: &Matrix, w: &Matrix) -> Result<LayerStep> {
        AdaRankGrad::step(self, g, w)
    }

    fn state_elements(&self) -> usize {
        let basis = self.projection.as_ref().map_or(0, |p| p.q.rows() * p.q.cols());
        let moments = |x: &Option<Matrix>| x.as_ref().map_or(0, |m| m.rows() * m.cols());
        let moments = match self.hp.update {
            UpdateRule::Adam => moments(&self.m) + moments(&self.v),
            UpdateRule::Sgd => 0,
        };
        basis + moments
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, qr_orthonormal, random_orthogonal, svd};
    use crate::lowrank::BasisMode;
    use crate::optimizer::Adam;

    fn exact_hp(eta_th: f64, r_max: usize) -> Hyperparams {
        Hyperparams { eta_th, r_max, basis_mode: BasisMode::ExactSvd, ..Hyperparams::default() }
    }

    fn state_for(q: Matrix, m: Matrix, v: Matrix, t: u64) -> AdaRankGrad {
        let rank = q.cols();
        let proj = ProjectionState { q, rank, refreshed_at_step: 0, ref_grad_fnorm: 1.0, error_ratio: 0.0 };
        AdaRankGrad::with_moments(Hyperparams { r_max: 8, ..Hyperparams::default() }, proj, m, v, t).unwrap()
    }

    /// Element-by-element textbook Adam on a single matrix.
    struct ScalarAdam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    }

    impl ScalarAdam {
        fn step(&mut self, w: &mut [f64], g: &[f64], alpha: f64, b1: f64, b2: f64, eps: f64) {
            self.t += 1;
            for i in 0..w.len() {
                self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
                self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = self.m[i] / (1.0 - b1.powi(self.t));
                let vh = self.v[i] / (1.0 - b2.powi(self.t));
                w[i] -= alpha * mh / (vh.sqrt() + eps);
            }
        }
    }

    #[test]
    fn rank_one_gradient_selects_its_direction() {
        let u = gaussian_matrix(6, 1, 1);
        let g = u.matmul(&gaussian_matrix(1, 4, 2)).unwrap();
        let st = AdaRankGrad::new(exact_hp(0.5, 3)).unwrap();
        let p = st.select_subspace(&g).unwrap();
        assert_eq!(p.rank, 1);
        let u1 = u.scale(1.0 / u.fro_norm());
        let overlap = p.q.t_matmul(&u1).unwrap().get(0, 0).abs();
        assert!(overlap >= 1.0 - 1e-6);
        assert_eq!(p.ref_grad_fnorm, g.fro_norm());
        let mut ssrf_hp = exact_hp(0.5, 3);
        ssrf_hp.basis_mode = BasisMode::Ssrf;
        let p = AdaRankGrad::new(ssrf_hp).unwrap().select_subspace(&g).unwrap();
        assert_eq!(p.rank, 1);
    }

    #[test]
    fn strict_threshold_keeps_both_directions() {
        let g = Matrix::diag_rect(3, 2, &[3.0, 1.0]);
        let st = AdaRankGrad::new(exact_hp(0.05, 2)).unwrap();
        assert_eq!(st.select_subspace(&g).unwrap().rank, 2);
    }

    #[test]
    fn selection_is_deterministic() {
        let g = gaussian_matrix(7, 5, 3);
        let st = AdaRankGrad::new(Hyperparams { eta_th: 0.3, r_max: 4, ..Hyperparams::default() }).unwrap();
        assert_eq!(st.select_subspace(&g).unwrap(), st.select_subspace(&g).unwrap());
    }

    #[test]
    fn first_transform_gives_zero_moments() {
        let st = AdaRankGrad::new(Hyperparams::default()).unwrap();
        let (m, v) = st.transform_moments(&Matrix::identity(4).leading_cols(2), 3).unwrap();
        assert_eq!(m, Matrix::zeros(2, 3));
        assert_eq!(v, Matrix::zeros(2, 3));
    }

    #[test]
    fn same_subspace_keeps_moments() {
        let q = qr_orthonormal(&gaussian_matrix(8, 3, 1)).unwrap();
        let m = gaussian_matrix(3, 4, 2);
        let v = gaussian_matrix(3, 4, 3).square();
        let st = state_for(q.clone(), m.clone(), v.clone(), 5);
        let (m2, v2) = st.transform_moments(&q, 4).unwrap();
        assert!(m2.sub(&m).unwrap().max_abs() <= 1e-12);
        assert!(v2.sub(&v).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn orthogonal_subspace_resets_moments() {
        let basis = random_orthogonal(6, 4);
        let q_old = basis.leading_cols(2);
        let q_new = Matrix::from_fn(6, 2, |i, j| basis.get(i, j + 2));
        let st = state_for(q_old, gaussian_matrix(2, 3, 1), gaussian_matrix(2, 3, 2).square(), 3);
        let (m, v) = st.transform_moments(&q_new, 3).unwrap();
        assert!(m.max_abs() <= 1e-14 && v.max_abs() <= 1e-14);
    }

    #[test]
    fn transform_is_a_contraction() {
        for seed in 0..20 {
            let q_old = qr_orthonormal(&gaussian_matrix(8, 3, seed)).unwrap();
            let q_new = qr_orthonormal(&gaussian_matrix(8, 2, seed + 50)).unwrap();
            let m = gaussian_matrix(3, 5, seed + 100);
            let v = gaussian_matrix(3, 5, seed + 150);
            let st = state_for(q_old.clone(), m.clone(), v, 2);
            let (m2, v2) = st.transform_moments(&q_new, 5).unwrap();
            let r = q_new.t_matmul(&q_old).unwrap();
            assert!(svd(&r).unwrap().s[0] <= 1.0 + 1e-10);
            assert!(m2.fro_norm() <= m.fro_norm() + 1e-10);
            assert!(v2.data().iter().all(|&x| x >= 0.0));
        }
    }

    /// Largest `|m|/√v` over entries, the Adam step size in units of alpha.
    fn max_step_ratio(m: &Matrix, v: &Matrix) -> f64 {
        m.data().iter().zip(v.data()).map(|(a, b)| a.abs() / (b.sqrt() + 1e-8)).fold(0.0, f64::max)
    }

    #[test]
    fn squared_transform_bounds_the_step_ratio() {
        let mut linear_worst: f64 = 0.0;
        for seed in 0..50 {
            let q_old = qr_orthonormal(&gaussian_matrix(8, 3, seed)).unwrap();
            let q_new = qr_orthonormal(&gaussian_matrix(8, 3, seed + 500)).unwrap();
            let m = gaussian_matrix(3, 4, seed + 1000);
            // Adam-like state: v dominates m² entrywise.
            let v = m.square().map(|x| x + 0.01);
            let mut st = state_for(q_old, m.clone(), v.clone(), 10);
            let bound: f64 = (0..4)
                .map(|c| (0..3).map(|k| m.get(k, c).powi(2) / v.get(k, c)).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            st.hp.v_transform = SecondMomentTransform::Squared;
            let (m2, v2) = st.transform_moments(&q_new, 4).unwrap();
            assert!(v2.data().iter().all(|&x| x >= 0.0));
            assert!(max_step_ratio(&m2, &v2) <= bound + 1e-9);
            st.hp.v_transform = SecondMomentTransform::Linear;
            let (m3, v3) = st.transform_moments(&q_new, 4).unwrap();
            assert_eq!(m2, m3);
            linear_worst = linear_worst.max(max_step_ratio(&m3, &v3));
        }
        // The clamped linear map lets V vanish under a nonzero M.
        assert!(linear_worst > 1e3, "linear worst ratio {linear_worst}");
    }

    #[test]
    fn transform_rejects_mismatched_basis() {
        let q = qr_orthonormal(&gaussian_matrix(5, 2, 1)).unwrap();
        let st = state_for(q, Matrix::zeros(2, 3), Matrix::zeros(2, 3), 1);
        assert!(st.transform_moments(&Matrix::identity(4), 3).is_err());
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut st = state_for(Matrix::identity(2), Matrix::zeros(2, 2), Matrix::zeros(2, 2), 1);
        let w = gaussian_matrix(2, 2, 1);
        let w2 = st.adam_step(&Matrix::zeros(2, 2), &w).unwrap();
        assert_eq!(w2, w);
    }

    #[test]
    fn scalar_first_step_by_hand() {
        // m̂ = 2, v̂ = 4, Δw = −0.1·2/(2 + 1e-8)
        let hp = Hyperparams { alpha: 0.1, r_max: 1, ..Hyperparams::default() };
        let proj = ProjectionState { q: Matrix::identity(1), rank: 1, refreshed_at_step: 0, ref_grad_fnorm: 2.0, error_ratio: 0.0 };
        let mut st = AdaRankGrad::with_moments(hp, proj, Matrix::zeros(1, 1), Matrix::zeros(1, 1), 1).unwrap();
        let w = st.adam_step(&Matrix::column(&[2.0]), &Matrix::column(&[0.0])).unwrap();
        let expected = -0.1 * 2.0 / (2.0 + 1e-8);
        assert!((w.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_counter_is_an_error() {
        let mut st = state_for(Matrix::identity(1), Matrix::zeros(1, 1), Matrix::zeros(1, 1), 0);
        assert!(matches!(st.adam_step(&Matrix::zeros(1, 1), &Matrix::zeros(1, 1)), Err(OptimError::ZeroStep)));
    }

    #[test]
    fn identity_basis_adam_matches_textbook() {
        let (n, m) = (4, 3);
        let mut st = state_for(Matrix::identity(n), Matrix::zeros(n, m), Matrix::zeros(n, m), 0);
        let mut reference = ScalarAdam { m: vec![0.0; n * m], v: vec![0.0; n * m], t: 0 };
        let mut w = gaussian_matrix(n, m, 1);
        let mut w_ref = w.data().to_vec();
        for k in 0..50 {
            let g = gaussian_matrix(n, m, 100 + k);
            st.t += 1;
            w = st.adam_step(&g, &w).unwrap();
            reference.step(&mut w_ref, g.data(), 1e-3, 0.9, 0.999, 1e-8);
            for (a, b) in w.data().iter().zip(&w_ref) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn full_rank_step_matches_plain_adam() {
        // n = 4 rows, so rank 4 spans R^n and the basis is the identity.
        let hp = Hyperparams { r_init: 4, r_max: 4, eta_th: 0.01, varsigma1: 1e-12, ..Hyperparams::default() };
        let mut st = AdaRankGrad::new(hp).unwrap();
        let mut adam = Adam::new(1e-3, 0.9, 0.999, 1e-8, 0.0).unwrap();
        let mut w = gaussian_matrix(4, 5, 1);
        let mut w_ref = w.clone();
        for k in 0..50 {
            let g = gaussian_matrix(4, 5, 10 + k);
            w = st.step(&g, &w).unwrap().w;
            w_ref = LayerOptimizer::step(&mut adam, &g, &w_ref).unwrap().w;
            assert!(w.sub(&w_ref).unwrap().max_abs() <= 1e-10, "step {k}");
        }
        assert_eq!(st.projection.as_ref().unwrap().q, Matrix::identity(4));
    }

    #[test]
    fn fixed_rank_at_row_count_uses_identity_on_tall_gradients() {
        // Adaptive ranks stop at min(n, m) = 3 here; a fixed rank of n does not.
        let hp = Hyperparams { rank_policy: RankPolicy::Fixed(6), r_max: 6, ..Hyperparams::default() };
        let mut st = AdaRankGrad::new(hp).unwrap();
        let mut adam = Adam::new(1e-3, 0.9, 0.999, 1e-8, 0.0).unwrap();
        let mut w = gaussian_matrix(6, 3, 2);
        let mut w_ref = w.clone();
        for k in 0..20 {
            let g = gaussian_matrix(6, 3, 40 + k);
            w = st.step(&g, &w).unwrap().w;
            w_ref = LayerOptimizer::step(&mut adam, &g, &w_ref).unwrap().w;
        }
        assert!(w.sub(&w_ref).unwrap().max_abs() <= 1e-12);
        assert_eq!(st.projection.as_ref().unwrap().rank, 6);
    }

    #[test]
    fn outer_exit_leaves_everything_unchanged() {
        let hp = Hyperparams { varsigma1: 1.0, ..Hyperparams::default() };
        let mut st = AdaRankGrad::new(hp).unwrap();
        let w = gaussian_matrix(3, 3, 1);
        let out = st.step(&Matrix::identity(3).scale(0.1), &w).unwrap();
        assert!(out.converged());
        assert_eq!(out.w, w);
        assert_eq!(st.t, 0);
        assert!(st.projection.is_none());
    }

    #[test]
    fn quadratic_converges() {
        // f(W) = ½‖W − W*‖², gradient W − W*.
        let target = gaussian_matrix(6, 4, 7);
        let hp = Hyperparams {
            alpha: 0.05,
            eta_th: 0.1,
            r_max: 4,
            varsigma1: 1e-3,
            basis_mode: BasisMode::ExactSvd,
            ..Hyperparams::default()
        };
        let mut st = AdaRankGrad::new(hp).unwrap();
        let mut w = Matrix::zeros(6, 4);
        let mut exit_step = None;
        for k in 0..5000 {
            let g = w.sub(&target).unwrap();
            let out = st.step(&g, &w).unwrap();
            if out.converged() {
                exit_step = Some(k);
                break;
            }
            w = out.w;
        }
        let k = exit_step.expect("should converge within 5000 steps");
        assert!(w.sub(&target).unwrap().fro_norm() <= 10.0 * 1e-3);
        assert!(k <= QUADRATIC_STEP_BOUND, "took {k} steps");
    }

    /// Exit step observed on the first reference run.
    const QUADRATIC_STEP_BOUND: usize = 1044;

    #[test]
    fn galore_never_refreshes_with_infinite_interval() {
        let mut st = AdaRankGrad::new(Hyperparams::galore(2, usize::MAX)).unwrap();
        let mut w = gaussian_matrix(5, 4, 1);
        for k in 0..30 {
            let out = st.step(&gaussian_matrix(5, 4, 50 + k), &w).unwrap();
            assert_eq!(out.stats.refreshed, k == 0);
            w = out.w;
        }
        assert_eq!(st.refreshes(), 1);
    }

    #[test]
    fn galore_refreshes_on_schedule_and_carries_moments() {
        let mut st = AdaRankGrad::new(Hyperparams::galore(2, 3)).unwrap();
        let mut w = gaussian_matrix(5, 4, 1);
        let mut refresh_steps = Vec::new();
        for k in 0..10 {
            let before = st.m.clone();
            let out = st.step(&gaussian_matrix(5, 4, 70 + k), &w).unwrap();
            if out.stats.refreshed {
                refresh_steps.push(k);
                if let Some(before) = before {
                    // No transformation: the update starts from the old moments.
                    let g_hat = st.projection.as_ref().unwrap().q.t_matmul(&gaussian_matrix(5, 4, 70 + k)).unwrap();
                    let mut expected = before.scale(0.9);
                    expected.axpy(0.1, &g_hat).unwrap();
                    assert!(st.m.as_ref().unwrap().sub(&expected).unwrap().max_abs() < 1e-15);
                }
            }
            w = out.w;
        }
        assert_eq!(refresh_steps, vec![0, 3, 6, 9]);
    }

    #[test]
    fn adaptive_refresh_fires_on_projected_gradient_drop() {
        let hp = Hyperparams { eta_th: 0.2, r_max: 3, basis_mode: BasisMode::ExactSvd, ..Hyperparams::default() };
        let mut st = AdaRankGrad::new(hp).unwrap();
        let w = Matrix::zeros(4, 4);
        let g = Matrix::diag(&[4.0, 1.0, 0.5, 0.1]);
        st.step(&g, &w).unwrap();
        // Same direction but shrunk below √(1 − 0.2)·‖g_ref‖.
        let out = st.step(&g.scale(0.5), &w).unwrap();
        assert!(matches!(
            out.events.as_slice(),
            [StepEvent::Refreshed { reason: RefreshReason::ProjectedGradientConverged, .. }]
        ));
        let out = st.step(&g.scale(0.49), &w).unwrap();
        assert!(out.events.is_empty());
    }

    #[test]
    fn inner_step_cap_forces_refresh() {
        let hp = Hyperparams { max_inner_steps: 2, r_max: 2, ..Hyperparams::default() };
        let mut st = AdaRankGrad::new(hp).unwrap();
        let w = Matrix::zeros(3, 3);
        let g = Matrix::diag(&[4.0, 1.0, 0.1]);
        let reasons: Vec<_> = (0..5)
            .flat_map(|_| st.step(&g, &w).unwrap().events)
            .map(|e| match e {
                StepEvent::Refreshed { reason, .. } => reason,
                other => panic!("unexpected {other:?}"),
            })
            .collect();
        assert_eq!(reasons, vec![RefreshReason::Initial, RefreshReason::InnerStepCap, RefreshReason::InnerStepCap]);
    }

    #[test]
    fn step_rejects_bad_input() {
        let mut st = AdaRankGrad::new(Hyperparams::default()).unwrap();
        assert!(st.step(&Matrix::zeros(2, 3), &Matrix::zeros(3, 2)).is_err());
        let mut g = Matrix::identity(2);
        g.set(0, 1, f64::NAN);
        assert!(matches!(st.step(&g, &Matrix::zeros(2, 2)), Err(OptimError::NonFiniteGradient)));
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut st = AdaRankGrad::new(Hyperparams { r_max: 3, eta_th: 0.2, ..Hyperparams::default() }).unwrap();
            let mut w = gaussian_matrix(6, 5, 1);
            for k in 0..40 {
                w = st.step(&gaussian_matrix(6, 5, 10 + k), &w).unwrap().w;
            }
            w
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reset_bias_variant_restarts_correction() {
        let hp = Hyperparams { reset_bias_on_refresh: true, r_max: 2, ..Hyperparams::default() };
        let mut st = AdaRankGrad::new(hp).unwrap();
        let g = gaussian_matrix(3, 3, 2);
        st.step(&g, &Matrix::zeros(3, 3)).unwrap();
        assert_eq!(st.bias_step(), 2);
        assert_eq!(st.t, 1);
    }
}
