//! Subspace machinery: randomized range finding, the projection error ratio,
//! adaptive rank search and the rank statistics tracked during training.
//!
//! All error ratios use squared Frobenius norms:
//! `η = ‖A − QQᵀA‖²_F / ‖A‖²_F`, which for exact singular vectors equals the
//! tail energy `Σ_{i>r} σᵢ² / Σ σᵢ²`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{gaussian_matrix, qr_orthonormal, qr_rank_revealing, svd, LinalgError, Matrix};

#[derive(Debug, Error)]
pub enum LowRankError {
    #[error("input matrix is zero; the ratio is undefined")]
    ZeroMatrix,
    #[error("rank {rank} outside 1..={max}")]
    InvalidRank { rank: usize, max: usize },
    #[error("information threshold {0} not in (0, 1)")]
    InvalidThreshold(f64),
    #[error("rank bounds r_min={r_min}, r_max={r_max} invalid for a matrix with min dimension {dim}")]
    InvalidBounds { r_min: usize, r_max: usize, dim: usize },
    #[error("basis columns are not orthonormal (defect {0:e})")]
    NotOrthonormal(f64),
    #[error("basis has {basis} rows but the matrix has {matrix}")]
    RowMismatch { basis: usize, matrix: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, LowRankError>;

/// How the candidate basis for the rank search is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BasisMode {
    /// Randomized range finder.
    #[default]
    Ssrf,
    /// Exact leading left singular vectors.
    ExactSvd,
}

/// Orthonormal basis from the range finder.
#[derive(Debug, Clone)]
pub struct RangeBasis {
    pub basis: Matrix,
    /// Set when `AΩ` stayed rank-deficient after one reseed and fewer than
    /// the requested columns were returned.
    pub rank_limited: bool,
}

fn nonzero(a: &Matrix) -> Result<()> {
    if a.fro_norm_sq() == 0.0 {
        Err(LowRankError::ZeroMatrix)
    } else {
        Ok(())
    }
}

/// Randomized range finder: `Q = qr(A·Ω)` for Gaussian `Ω ∈ R^{m×r}`.
pub fn ssrf(a: &Matrix, r: usize, seed: u64) -> Result<RangeBasis> {
    ssrf_oversampled(a, r, 0, seed)
}

/// Range finder drawing `r + oversample` Gaussian columns; the result is
/// truncated back to the best `r` directions inside the sampled range.
pub fn ssrf_oversampled(a: &Matrix, r: usize, oversample: usize, seed: u64) -> Result<RangeBasis> {
    let (n, m) = a.shape();
    let max = n.min(m);
    if r == 0 || r > max {
        return Err(LowRankError::InvalidRank { rank: r, max });
    }
    nonzero(a)?;
    let width = (r + oversample).min(max);
    let sketch = |s: u64| a.matmul(&gaussian_matrix(m, width, s));

    let mut found = None;
    for attempt in 0..2u64 {
        let y = sketch(seed.wrapping_add(attempt))?;
        match qr_orthonormal(&y) {
            Ok(q) => {
                found = Some(q);
                break;
            }
            Err(LinalgError::RankDeficient { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let (q, rank_limited) = match found {
        Some(q) => (q, false),
        None => {
            let y = sketch(seed.wrapping_add(1))?;
            let q = qr_rank_revealing(&y, 1e-12).ok_or(LowRankError::ZeroMatrix)?;
            (q, true)
        }
    };
    if q.cols() <= r {
        return Ok(RangeBasis { rank_limited: rank_limited || q.cols() < r, basis: q });
    }
    // Oversampled: rotate to the dominant r directions of QᵀA.
    let small = q.t_matmul(a)?;
    let dec = svd(&small)?;
    let basis = q.matmul(&dec.u.leading_cols(r))?;
    Ok(RangeBasis { basis, rank_limited })
}

/// Exact top-`r` left singular vectors.
pub fn exact_basis(a: &Matrix, r: usize) -> Result<Matrix> {
    let max = a.rows().min(a.cols());
    if r == 0 || r > max {
        return Err(LowRankError::InvalidRank { rank: r, max });
    }
    Ok(svd(a)?.u.leading_cols(r))
}

/// `‖a − qqᵀa‖²_F / ‖a‖²_F`, clamped into `[0, 1]`.
pub fn approx_error_ratio(a: &Matrix, q: &Matrix) -> Result<f64> {
    if q.rows() != a.rows() {
        return Err(LowRankError::RowMismatch { basis: q.rows(), matrix: a.rows() });
    }
    let defect = q.orthonormality_defect();
    if defect > 1e-8 {
        return Err(LowRankError::NotOrthonormal(defect));
    }
    let total = a.fro_norm_sq();
    if total == 0.0 {
        return Err(LowRankError::ZeroMatrix);
    }
    let residual = a.sub(&q.matmul(&q.t_matmul(a)?)?)?.fro_norm_sq();
    Ok((residual / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IassOptions {
    pub r_min: usize,
    pub r_max: usize,
    pub eta_th: f64,
    pub seed: u64,
    pub mode: BasisMode,
    /// Scan every prefix instead of bisecting. Only useful in `Ssrf` mode,
    /// where prefix ratios need not be monotone.
    pub linear_scan: bool,
    pub oversample: usize,
}

impl IassOptions {
    pub fn new(r_min: usize, r_max: usize, eta_th: f64, seed: u64, mode: BasisMode) -> Self {
        Self { r_min, r_max, eta_th, seed, mode, linear_scan: false, oversample: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct RankSearchResult {
    /// `n x rank`, orthonormal columns.
    pub basis: Matrix,
    pub rank: usize,
    pub error_ratio: f64,
    /// Number of error-ratio evaluations performed.
    pub evaluations: usize,
    /// The matrix (or its sketch) had numerical rank below `r_min`.
    pub rank_limited: bool,
}

/// Upper bound on evaluations for a bisection over `r_min..=r_max`.
pub fn iass_evaluation_bound(r_min: usize, r_max: usize) -> usize {
    let span = r_max - r_min + 1;
    (usize::BITS - (span - 1).leading_zeros()) as usize + 1
}

/// Adaptive rank search: the smallest prefix width `r ∈ [r_min, r_max]` of a
/// single width-`r_max` basis whose error ratio is at most `eta_th`. Falls
/// back to `r_max` (with its achieved ratio) if no width qualifies.
pub fn iass(a: &Matrix, opts: &IassOptions) -> Result<RankSearchResult> {
    let dim = a.rows().min(a.cols());
    if !(opts.eta_th > 0.0 && opts.eta_th < 1.0) {
        return Err(LowRankError::InvalidThreshold(opts.eta_th));
    }
    if opts.r_min == 0 || opts.r_min > opts.r_max || opts.r_max > dim {
        return Err(LowRankError::InvalidBounds { r_min: opts.r_min, r_max: opts.r_max, dim });
    }
    nonzero(a)?;
    let (full, mut rank_limited) = match opts.mode {
        BasisMode::Ssrf => {
            let rb = ssrf_oversampled(a, opts.r_max, opts.oversample, opts.seed)?;
            (rb.basis, false)
        }
        BasisMode::ExactSvd => (exact_basis(a, opts.r_max)?, false),
    };
    let width = full.cols();
    let mut evaluations = 0;
    let mut ratio_at = |r: usize| -> Result<f64> {
        evaluations += 1;
        approx_error_ratio(a, &full.leading_cols(r))
    };

    if width < opts.r_min {
        rank_limited = true;
        let error_ratio = ratio_at(width)?;
        return Ok(RankSearchResult { basis: full, rank: width, error_ratio, evaluations, rank_limited });
    }
    let hi_bound = opts.r_max.min(width);

    let (rank, error_ratio) = if opts.linear_scan {
        let mut pick = None;
        for r in opts.r_min..=hi_bound {
            let eta = ratio_at(r)?;
            pick = Some((r, eta));
            if eta <= opts.eta_th {
                break;
            }
        }
        pick.expect("nonempty range")
    } else {
        let (mut lo, mut hi) = (opts.r_min, hi_bound);
        let mut known: Option<(usize, f64)> = None;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let eta = ratio_at(mid)?;
            if eta <= opts.eta_th {
                hi = mid;
                known = Some((mid, eta));
            } else {
                lo = mid + 1;
            }
        }
        match known {
            Some((r, eta)) if r == lo => (r, eta),
            _ => (lo, ratio_at(lo)?),
        }
    };
    let rank_limited = rank_limited || width < opts.r_max && rank == width;
    Ok(RankSearchResult { basis: full.leading_cols(rank), rank, error_ratio, evaluations, rank_limited })
}

/// Fraction of energy outside the best rank-one approximation,
/// `1 − σ₁²/Σσᵢ²`.
pub fn kappa(g: &Matrix) -> Result<f64> {
    nonzero(g)?;
    let dec = svd(g)?;
    Ok((dec.tail_energy(1) / dec.total_energy()).clamp(0.0, 1.0))
}

/// `‖g‖_F / ‖g‖_2` (unsquared).
pub fn stable_rank(g: &Matrix) -> Result<f64> {
    nonzero(g)?;
    let dec = svd(g)?;
    Ok((dec.total_energy().sqrt() / dec.s[0]).max(1.0))
}

/// Smallest `r ≥ 1` with `Σ_{i>r} σᵢ² ≤ eta_th · Σ σᵢ²`.
pub fn effective_rank(g: &Matrix, eta_th: f64) -> Result<usize> {
    nonzero(g)?;
    Ok(effective_rank_from_spectrum(&svd(g)?.s, eta_th))
}

pub(crate) fn effective_rank_from_spectrum(s: &[f64], eta_th: f64) -> usize {
    let total: f64 = s.iter().map(|x| x * x).sum();
    let mut tail = total;
    for (r, sigma) in s.iter().enumerate() {
        tail -= sigma * sigma;
        if tail <= eta_th * total {
            return r + 1;
        }
    }
    s.len()
}
