//! Rank and memory accounting over recorded per-layer rank traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes per optimizer-state element in BF16.
pub const BF16_BYTES: usize = 2;

pub const WEIGHTED_AVG_RANK_FORMULA: &str = "R_adap = sum_j sum_t R_t^j (d_j + d_{j+1}) / (T * sum_j d_j d_{j+1})";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("layer {layer_id}: empty rank series")]
    EmptySeries { layer_id: usize },
    #[error("layer {layer_id}: rank 0 recorded at step {step}")]
    ZeroRank { layer_id: usize, step: usize },
    #[error("layer {layer_id}: baseline rank must be at least 1")]
    ZeroBaseline { layer_id: usize },
    #[error("layer {layer_id} has {got} steps, expected {expected}")]
    MismatchedLength { layer_id: usize, got: usize, expected: usize },
    #[error("no traces")]
    NoTraces,
    #[error("state formulas assume n >= m, got n={n}, m={m}")]
    WideMatrix { n: usize, m: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer_id: usize,
    /// `(d_j, d_{j+1})`.
    pub dims: (usize, usize),
    pub rank_series: Vec<usize>,
    /// `R̄^j`, the fixed rank the adaptive run is compared against.
    pub baseline_rank: usize,
}

impl LayerTrace {
    pub fn validate(&self) -> Result<()> {
        if self.rank_series.is_empty() {
            return Err(MetricsError::EmptySeries { layer_id: self.layer_id });
        }
        if let Some(step) = self.rank_series.iter().position(|&r| r == 0) {
            return Err(MetricsError::ZeroRank { layer_id: self.layer_id, step });
        }
        if self.baseline_rank == 0 {
            return Err(MetricsError::ZeroBaseline { layer_id: self.layer_id });
        }
        Ok(())
    }

    fn width(&self) -> f64 {
        (self.dims.0 + self.dims.1) as f64
    }
}

/// `R^j_adap = (Σ_t R_t^j) / T`.
pub fn layer_effective_rank(trace: &LayerTrace) -> Result<f64> {
    trace.validate()?;
    let sum: usize = trace.rank_series.iter().sum();
    Ok(sum as f64 / trace.rank_series.len() as f64)
}

fn common_length(traces: &[LayerTrace]) -> Result<usize> {
    let first = traces.first().ok_or(MetricsError::NoTraces)?;
    let t = first.rank_series.len();
    for tr in traces {
        tr.validate()?;
        if tr.rank_series.len() != t {
            return Err(MetricsError::MismatchedLength { layer_id: tr.layer_id, got: tr.rank_series.len(), expected: t });
        }
    }
    Ok(t)
}

/// See [`WEIGHTED_AVG_RANK_FORMULA`]; the weights are as printed, not normalized.
pub fn total_weighted_avg_rank(traces: &[LayerTrace]) -> Result<f64> {
    let t = common_length(traces)?;
    let numerator: f64 = traces.iter().map(|tr| tr.rank_series.iter().sum::<usize>() as f64 * tr.width()).sum();
    let denominator: f64 = traces.iter().map(|tr| (tr.dims.0 * tr.dims.1) as f64).sum::<f64>() * t as f64;
    Ok(numerator / denominator)
}

/// `(R̄^j − R^j_adap)·(d_j + d_{j+1})` elements; negative when the adaptive
/// rank exceeded the baseline.
pub fn memory_reduction(trace: &LayerTrace) -> Result<f64> {
    Ok((trace.baseline_rank as f64 - layer_effective_rank(trace)?) * trace.width())
}

pub fn total_memory_reduction(traces: &[LayerTrace]) -> Result<f64> {
    traces.iter().map(memory_reduction).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateMethod {
    Adarankgrad,
    Galore,
    Lora,
    Full,
}

/// Optimizer-state element count for `W ∈ R^{n×m}`, `n ≥ m`.
pub fn optimizer_state_elements(n: usize, m: usize, r: usize, method: StateMethod) -> Result<usize> {
    if n < m {
        return Err(MetricsError::WideMatrix { n, m });
    }
    Ok(match method {
        StateMethod::Adarankgrad | StateMethod::Galore => n * r + 2 * m * r,
        StateMethod::Lora => 2 * n * r + 2 * m * r,
        StateMethod::Full => 2 * n * m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer_id: usize,
    pub dims: (usize, usize),
    pub effective_rank: f64,
    pub mem_reduction_elements: f64,
    pub mem_reduction_bytes_bf16: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub layers: Vec<LayerSummary>,
    pub total_weighted_avg_rank: f64,
    pub total_weighted_avg_rank_formula: String,
    pub total_mem_reduction_elements: f64,
    pub total_mem_reduction_bytes_bf16: f64,
}

pub fn summarize(traces: &[LayerTrace]) -> Result<Summary> {
    let layers = traces
        .iter()
        .map(|tr| {
            let red = memory_reduction(tr)?;
            Ok(LayerSummary {
                layer_id: tr.layer_id,
                dims: tr.dims,
                effective_rank: layer_effective_rank(tr)?,
                mem_reduction_elements: red,
                mem_reduction_bytes_bf16: red * BF16_BYTES as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = total_memory_reduction(traces)?;
    Ok(Summary {
        layers,
        total_weighted_avg_rank: total_weighted_avg_rank(traces)?,
        total_weighted_avg_rank_formula: WEIGHTED_AVG_RANK_FORMULA.to_string(),
        total_mem_reduction_elements: total,
        total_mem_reduction_bytes_bf16: total * BF16_BYTES as f64,
    })
}
