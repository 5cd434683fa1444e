//! Low-rank adapter extraction from a pair of checkpoints.
//!
//! `Δ = W_ft − W_pre` is factorized as `A·B` at its numerical rank using the
//! truncated SVD, which attains the Eckart–Young optimum directly.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{svd, LinalgError, Matrix};

pub const DEFAULT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("checkpoint shapes differ: {pre:?} vs {ft:?}")]
    ShapeMismatch { pre: (usize, usize), ft: (usize, usize) },
    #[error("rank {rank} outside 1..={max}")]
    InvalidRank { rank: usize, max: usize },
    #[error("rel_tol must be in [0, 1), got {0}")]
    InvalidTolerance(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, AdapterError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdapterPair {
    /// `n × r`.
    pub a: Matrix,
    /// `r × m`.
    pub b: Matrix,
    pub r: usize,
    pub residual_fnorm: f64,
}

/// `W_ft − W_pre`.
pub fn delta(w_ft: &Matrix, w_pre: &Matrix) -> Result<Matrix> {
    if w_ft.shape() != w_pre.shape() {
        return Err(AdapterError::ShapeMismatch { pre: w_pre.shape(), ft: w_ft.shape() });
    }
    Ok(w_ft.sub(w_pre)?)
}

/// Count of singular values above `rel_tol·σ₁`; zero for a zero matrix.
pub fn numerical_rank(d: &Matrix, rel_tol: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&rel_tol) {
        return Err(AdapterError::InvalidTolerance(rel_tol));
    }
    if d.max_abs() == 0.0 {
        return Ok(0);
    }
    let s = svd(d)?.s;
    Ok(s.iter().filter(|&&x| x > rel_tol * s[0]).count())
}

/// Best rank-`r` factorization with the singular values split evenly.
pub fn factorize(d: &Matrix, r: usize) -> Result<AdapterPair> {
    let max = d.rows().min(d.cols());
    if r == 0 || r > max {
        return Err(AdapterError::InvalidRank { rank: r, max });
    }
    let dec = svd(d)?;
    let root: Vec<f64> = dec.s[..r].iter().map(|x| x.sqrt()).collect();
    let a = Matrix::from_fn(d.rows(), r, |i, k| dec.u.get(i, k) * root[k]);
    let b = Matrix::from_fn(r, d.cols(), |k, j| root[k] * dec.v.get(j, k));
    let residual_fnorm = d.sub(&a.matmul(&b)?)?.fro_norm();
    Ok(AdapterPair { a, b, r, residual_fnorm })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdapterSizes {
    pub rows: usize,
    pub cols: usize,
    pub a_elements: usize,
    pub b_elements: usize,
    pub dense_elements: usize,
}

/// The extraction report; `pair` is absent when the checkpoints coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub rank: usize,
    pub pair: Option<AdapterPair>,
    pub residual_fnorm: f64,
    pub relative_residual: f64,
    pub sizes: AdapterSizes,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    rank: usize,
    residual_fnorm: f64,
    relative_residual: f64,
    sizes: &'a AdapterSizes,
}

impl Extraction {
    pub fn report_json(&self) -> serde_json::Value {
        serde_json::to_value(ReportJson {
            rank: self.rank,
            residual_fnorm: self.residual_fnorm,
            relative_residual: self.relative_residual,
            sizes: &self.sizes,
        })
        .expect("plain struct serializes")
    }
}

/// Diff, rank and factorize in one pass.
pub fn extract(w_pre: &Matrix, w_ft: &Matrix, rel_tol: f64) -> Result<Extraction> {
    let d = delta(w_ft, w_pre)?;
    let rank = numerical_rank(&d, rel_tol)?;
    let pair = if rank == 0 { None } else { Some(factorize(&d, rank)?) };
    let residual_fnorm = pair.as_ref().map_or(0.0, |p| p.residual_fnorm);
    let norm = d.fro_norm();
    let (rows, cols) = d.shape();
    Ok(Extraction {
        rank,
        residual_fnorm,
        relative_residual: if norm > 0.0 { residual_fnorm / norm } else { 0.0 },
        sizes: AdapterSizes {
            rows,
            cols,
            a_elements: rows * rank,
            b_elements: rank * cols,
            dense_elements: rows * cols,
        },
        pair,
    })
}
