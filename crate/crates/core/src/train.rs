//! Full training loop: network gradients in, per-layer optimizer steps out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::linalg::Matrix;
use crate::metrics::LayerTrace;
use crate::network::{self, Batch, NetworkError, NetworkSpec};
use crate::optimizer::{Adam, AdaRankGrad, Hyperparams, LayerOptimizer, OptimError, RankPolicy, Sgd};

/// Loss magnitude treated as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step} (loss {loss:e}); try a smaller alpha")]
    Divergence { step: usize, loss: f64 },
    #[error("layer {layer}: {source}")]
    Optimizer { layer: usize, source: OptimError },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adarankgrad,
    Galore,
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adarankgrad" => Ok(Self::Adarankgrad),
            "galore" => Ok(Self::Galore),
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(format!("unknown optimizer '{other}' (expected adarankgrad, galore, adam or sgd)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    /// Used by every optimizer; the GaLore preset overrides rank and schedule.
    pub hp: Hyperparams,
    pub steps: usize,
    /// Zero means full batch.
    pub batch_size: usize,
    pub galore_rank: usize,
    pub galore_interval: usize,
    /// Stop once every layer reports `‖g‖_F ≤ ς₁`.
    pub stop_on_convergence: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adarankgrad,
            hp: Hyperparams::default(),
            steps: 1000,
            batch_size: 0,
            galore_rank: 4,
            galore_interval: 200,
            stop_on_convergence: true,
        }
    }
}

impl TrainConfig {
    /// Per-layer hyperparameters; each layer draws from its own seed stream.
    pub fn layer_hyperparams(&self, layer: usize) -> Hyperparams {
        let mut hp = match self.optimizer {
            OptimizerKind::Galore => Hyperparams {
                alpha: self.hp.alpha,
                beta1: self.hp.beta1,
                beta2: self.hp.beta2,
                epsilon: self.hp.epsilon,
                varsigma1: self.hp.varsigma1,
                weight_decay: self.hp.weight_decay,
                seed: self.hp.seed,
                ..Hyperparams::galore(self.galore_rank, self.galore_interval)
            },
            _ => self.hp.clone(),
        };
        hp.seed = hp.seed.wrapping_add((layer as u64) << 32);
        hp
    }

    /// The fixed comparison rank for a layer of shape `(n, m)`.
    pub fn baseline_rank(&self, n: usize, m: usize) -> usize {
        let dim = n.min(m);
        match self.optimizer {
            OptimizerKind::Galore => self.galore_rank.min(dim),
            OptimizerKind::Adarankgrad => match self.hp.rank_policy {
                RankPolicy::Fixed(r) => r.min(dim),
                RankPolicy::Adaptive => self.hp.r_max.min(dim),
            },
            OptimizerKind::Adam | OptimizerKind::Sgd => dim,
        }
    }

    pub fn build_optimizers(&self, spec: &NetworkSpec) -> Result<Vec<Box<dyn LayerOptimizer>>> {
        (0..spec.num_layers())
            .map(|j| {
                let hp = self.layer_hyperparams(j);
                let wrap = |source| TrainError::Optimizer { layer: j, source };
                let opt: Box<dyn LayerOptimizer> = match self.optimizer {
                    OptimizerKind::Adarankgrad | OptimizerKind::Galore => Box::new(AdaRankGrad::new(hp).map_err(wrap)?),
                    OptimizerKind::Adam => {
                        Box::new(Adam::new(hp.alpha, hp.beta1, hp.beta2, hp.epsilon, hp.weight_decay).map_err(wrap)?)
                    }
                    OptimizerKind::Sgd => Box::new(Sgd::new(hp.alpha).map_err(wrap)?),
                };
                Ok(opt)
            })
            .collect()
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub layer_id: usize,
    pub rank: usize,
    pub eta_ratio: f64,
    pub grad_fnorm: f64,
    pub proj_grad_fnorm: f64,
    pub refresh_flag: bool,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: Vec<Matrix>,
    pub records: Vec<TraceRecord>,
    /// Loss before each step.
    pub losses: Vec<f64>,
    /// Full-data loss after the last step.
    pub final_loss: f64,
    pub converged_at: Option<usize>,
    pub layer_traces: Vec<LayerTrace>,
}

/// Trains from the spec's initial weights.
pub fn train(spec: &NetworkSpec, cfg: &TrainConfig, data: &Batch, exec: Execution) -> Result<TrainOutcome> {
    train_from(spec, cfg, data, spec.init_weights(), exec)
}

pub fn train_from(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    data: &Batch,
    mut weights: Vec<Matrix>,
    exec: Execution,
) -> Result<TrainOutcome> {
    let mut optimizers = cfg.build_optimizers(spec)?;
    let layers = spec.num_layers();
    let mut records = Vec::with_capacity(cfg.steps * layers);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut rank_series = vec![Vec::with_capacity(cfg.steps); layers];
    let mut converged_at = None;

    for step in 0..cfg.steps {
        let batch = if cfg.batch_size == 0 {
            data.clone()
        } else {
            data.sample(cfg.batch_size, cfg.hp.seed.wrapping_add(step as u64))
        };
        let (loss, grads) = network::loss_and_grads(spec, &weights, &batch)?;
        if !(loss.abs() <= DIVERGENCE_LOSS) {
            return Err(TrainError::Divergence { step, loss });
        }
        losses.push(loss);

        let mut jobs: Vec<_> = optimizers
            .iter_mut()
            .zip(grads.iter().zip(&weights))
            .map(|(opt, (g, w))| (opt, g, w, None))
            .collect();
        exec.for_each_mut(&mut jobs, |_, (opt, g, w, out)| {
            *out = Some(opt.step(g, w));
        });
        let steps: Vec<_> = jobs
            .into_iter()
            .enumerate()
            .map(|(layer, (_, _, _, out))| {
                out.expect("every job ran").map_err(|source| match source {
                    OptimError::NonFiniteGradient => TrainError::Divergence { step, loss },
                    source => TrainError::Optimizer { layer, source },
                })
            })
            .collect::<Result<_>>()?;

        let mut all_converged = true;
        for (layer, (res, w)) in steps.into_iter().zip(weights.iter_mut()).enumerate() {
            let s = res.stats;
            all_converged &= res.converged();
            records.push(TraceRecord {
                step,
                layer_id: layer,
                rank: s.rank,
                eta_ratio: s.eta_ratio,
                grad_fnorm: s.grad_fnorm,
                proj_grad_fnorm: s.proj_grad_fnorm,
                refresh_flag: s.refreshed,
                loss,
            });
            rank_series[layer].push(s.rank.max(1));
            *w = res.w;
        }
        if all_converged && cfg.stop_on_convergence {
            converged_at = Some(step);
            break;
        }
    }

    let (final_loss, _) = network::forward(spec, &weights, data)?;
    if !final_loss.is_finite() {
        return Err(TrainError::Divergence { step: losses.len(), loss: final_loss });
    }
    let layer_traces = rank_series
        .into_iter()
        .enumerate()
        .map(|(j, ranks)| {
            let (n, m) = spec.weight_shape(j);
            LayerTrace { layer_id: j, dims: (m, n), rank_series: ranks, baseline_rank: cfg.baseline_rank(n, m) }
        })
        .collect();
    Ok(TrainOutcome { weights, records, losses, final_loss, converged_at, layer_traces })
}
