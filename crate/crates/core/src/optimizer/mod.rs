//! Per-layer optimizers.
//!
//! [`AdaRankGrad`] keeps Adam moments in an adaptively chosen low-rank
//! subspace of the gradient and carries them across subspace refreshes with
//! the rotation `R = Q_newᵀ Q_old`. The same state machine, configured with a
//! fixed rank, fixed refresh interval and no moment transformation, is the
//! GaLore-style baseline. [`Adam`] and [`Sgd`] are full-rank references.

mod adarankgrad;
mod baseline;

pub use adarankgrad::{AdaRankGrad, ProjectionState};
pub use baseline::{Adam, Sgd};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::lowrank::{BasisMode, LowRankError};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),
    #[error("bias correction needs t >= 1 at update time")]
    ZeroStep,
    #[error("shape mismatch: {what} is {got:?}, expected {expected:?}")]
    Shape {
        what: &'static str,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("gradient contains non-finite values")]
    NonFiniteGradient,
    #[error(transparent)]
    LowRank(#[from] LowRankError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// When the inner low-rank loop hands control back to subspace selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerExit {
    /// Leave once `‖Qᵀg‖_F ≤ √(1−η_th)·‖g_refresh‖_F`.
    AdaptiveVarsigma2,
    /// Leave after a fixed number of steps.
    FixedInterval(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    Adam,
    /// Projected gradient descent, `W ← W − α·Q·ĝ`.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    /// Adaptive rank search in `[r_init, r_max]`.
    Adaptive,
    /// Always project onto exactly this many directions.
    Fixed(usize),
}

/// How the second moment is carried into a new basis on refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondMomentTransform {
    /// `V ← max(R·V, 0)`.
    #[default]
    Linear,
    /// `V ← (R∘R)·V`, nonnegative without clamping.
    Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub eta_th: f64,
    pub r_init: usize,
    pub r_max: usize,
    /// Outer exit: the optimizer reports convergence once `‖g‖_F ≤ varsigma1`.
    pub varsigma1: f64,
    pub inner_exit: InnerExit,
    pub max_inner_steps: usize,
    pub seed: u64,
    pub basis_mode: BasisMode,
    pub update: UpdateRule,
    pub weight_decay: f64,
    pub rank_policy: RankPolicy,
    pub transform_moments: bool,
    pub v_transform: SecondMomentTransform,
    /// Restart bias correction at every refresh instead of using global `t`.
    pub reset_bias_on_refresh: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            eta_th: 0.1,
            r_init: 1,
            r_max: 8,
            varsigma1: 1e-8,
            inner_exit: InnerExit::AdaptiveVarsigma2,
            max_inner_steps: 500,
            seed: 0,
            basis_mode: BasisMode::Ssrf,
            update: UpdateRule::Adam,
            weight_decay: 0.0,
            rank_policy: RankPolicy::Adaptive,
            transform_moments: true,
            v_transform: SecondMomentTransform::Linear,
            reset_bias_on_refresh: false,
        }
    }
}

impl Hyperparams {
    /// GaLore-style configuration: fixed rank, refresh every `interval`
    /// steps, moments carried over untransformed, exact SVD basis.
    pub fn galore(rank: usize, interval: usize) -> Self {
        Self {
            r_init: rank,
            r_max: rank,
            inner_exit: InnerExit::FixedInterval(interval),
            max_inner_steps: usize::MAX,
            basis_mode: BasisMode::ExactSvd,
            rank_policy: RankPolicy::Fixed(rank),
            transform_moments: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(OptimError::InvalidHyperparams(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.eta_th > 0.0 && self.eta_th < 1.0) {
            return bad(format!("eta_th must lie in (0, 1), got {}", self.eta_th));
        }
        if self.r_init == 0 || self.r_init > self.r_max {
            return bad(format!("need 1 <= r_init <= r_max, got {} and {}", self.r_init, self.r_max));
        }
        if let RankPolicy::Fixed(0) = self.rank_policy {
            return bad("fixed rank must be at least 1".into());
        }
        if !(self.varsigma1 > 0.0) {
            return bad(format!("varsigma1 must be positive, got {}", self.varsigma1));
        }
        if self.max_inner_steps == 0 {
            return bad("max_inner_steps must be at least 1".into());
        }
        if let InnerExit::FixedInterval(0) = self.inner_exit {
            return bad("refresh interval must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshReason {
    Initial,
    /// `‖ĝ‖_F` fell to the adaptive threshold.
    ProjectedGradientConverged,
    IntervalElapsed,
    InnerStepCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepEvent {
    /// `‖g‖_F ≤ varsigma1`; weights were left unchanged.
    Converged { grad_fnorm: f64 },
    Refreshed {
        old_rank: Option<usize>,
        new_rank: usize,
        error_ratio: f64,
        reason: RefreshReason,
    },
}

/// Per-step statistics consumed by traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub rank: usize,
    /// Energy fraction of `g` outside the current subspace.
    pub eta_ratio: f64,
    pub grad_fnorm: f64,
    pub proj_grad_fnorm: f64,
    pub refreshed: bool,
}

#[derive(Debug, Clone)]
pub struct LayerStep {
    pub w: Matrix,
    pub stats: StepStats,
    pub events: Vec<StepEvent>,
}

impl LayerStep {
    pub fn converged(&self) -> bool {
        self.events.iter().any(|e| matches!(e, StepEvent::Converged { .. }))
    }
}

/// A stateful optimizer for a single weight matrix.
pub trait LayerOptimizer: Send {
    fn step(&mut self, g: &Matrix, w: &Matrix) -> Result<LayerStep>;

    /// Scalars currently held as optimizer state.
    fn state_elements(&self) -> usize;
}

pub(crate) fn check_same_shape(what: &'static str, got: &Matrix, expected: &Matrix) -> Result<()> {
    if got.shape() != expected.shape() {
        return Err(OptimError::Shape { what, got: got.shape(), expected: expected.shape() });
    }
    Ok(())
}

/// Decoupled weight decay `W ← W − α·λ·W`, folded into an update.
pub(crate) fn apply_weight_decay(w_next: &mut Matrix, w: &Matrix, alpha: f64, weight_decay: f64) -> Result<()> {
    if weight_decay > 0.0 {
        w_next.axpy(-alpha * weight_decay, w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Hyperparams::default().validate().unwrap();
        Hyperparams::galore(4, 200).validate().unwrap();
    }

    #[test]
    fn invalid_hyperparams_are_rejected() {
        let cases: Vec<Box<dyn Fn(&mut Hyperparams)>> = vec![
            Box::new(|h| h.alpha = 0.0),
            Box::new(|h| h.beta1 = 1.0),
            Box::new(|h| h.beta2 = -0.1),
            Box::new(|h| h.epsilon = 0.0),
            Box::new(|h| h.eta_th = 1.0),
            Box::new(|h| h.eta_th = 0.0),
            Box::new(|h| h.r_init = 0),
            Box::new(|h| h.r_init = 9),
            Box::new(|h| h.varsigma1 = 0.0),
            Box::new(|h| h.max_inner_steps = 0),
            Box::new(|h| h.inner_exit = InnerExit::FixedInterval(0)),
            Box::new(|h| h.weight_decay = -1.0),
        ];
        for mutate in cases {
            let mut hp = Hyperparams::default();
            mutate(&mut hp);
            assert!(hp.validate().is_err(), "{hp:?} should be rejected");
        }
    }
}
