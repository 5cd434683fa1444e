use super::{apply_weight_decay, check_same_shape, LayerOptimizer, LayerStep, OptimError, Result, StepStats};
use crate::linalg::Matrix;

/// Full-matrix Adam (AdamW when `weight_decay > 0`).
#[derive(Debug, Clone)]
pub struct Adam {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    m: Option<Matrix>,
    v: Option<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new(alpha: f64, beta1: f64, beta2: f64, epsilon: f64, weight_decay: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
            return Err(OptimError::InvalidHyperparams(format!(
                "adam(alpha={alpha}, beta1={beta1}, beta2={beta2}, epsilon={epsilon})"
            )));
        }
        Ok(Self { alpha, beta1, beta2, epsilon, weight_decay, m: None, v: None, t: 0 })
    }
}

impl LayerOptimizer for Adam {
    fn step(&mut self, g: &Matrix, w: &Matrix) -> Result<LayerStep> {
        check_same_shape("gradient", g, w)?;
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient);
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let m = self.m.get_or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
        *m = m.scale(b1);
        m.axpy(1.0 - b1, g)?;
        let v = self.v.get_or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
        *v = v.scale(b2);
        v.axpy(1.0 - b2, &g.square())?;

        let t = self.t as i32;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        let (m, v) = (self.m.as_ref().expect("set"), self.v.as_ref().expect("set"));
        let mut w_next = w.clone();
        let direction = Matrix::from_vec(
            m.rows(),
            m.cols(),
            m.data().iter().zip(v.data()).map(|(&mi, &vi)| (mi / c1) / ((vi / c2).sqrt() + self.epsilon)).collect(),
        )?;
        w_next.axpy(-self.alpha, &direction)?;
        apply_weight_decay(&mut w_next, w, self.alpha, self.weight_decay)?;
        let grad_fnorm = g.fro_norm();
        Ok(LayerStep {
            w: w_next,
            stats: StepStats {
                rank: g.rows().min(g.cols()),
                eta_ratio: 0.0,
                grad_fnorm,
                proj_grad_fnorm: grad_fnorm,
                refreshed: false,
            },
            events: Vec::new(),
        })
    }

    fn state_elements(&self) -> usize {
        self.m.as_ref().map_or(0, |m| 2 * m.rows() * m.cols())
    }
}

/// Plain gradient descent, `W ← W − α·G`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub alpha: f64,
}

impl Sgd {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(OptimError::InvalidHyperparams(format!("sgd alpha {alpha}")));
        }
        Ok(Self { alpha })
    }
}

impl LayerOptimizer for Sgd {
    fn step(&mut self, g: &Matrix, w: &Matrix) -> Result<LayerStep> {
        check_same_shape("gradient", g, w)?;
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient);
        }
        let mut w_next = w.clone();
        w_next.axpy(-self.alpha, g)?;
        let grad_fnorm = g.fro_norm();
        Ok(LayerStep {
            w: w_next,
            stats: StepStats {
                rank: g.rows().min(g.cols()),
                eta_ratio: 0.0,
                grad_fnorm,
                proj_grad_fnorm: grad_fnorm,
                refreshed: false,
            },
            events: Vec::new(),
        })
    }

    fn state_elements(&self) -> usize {
        0
    }
}
