//! Dense real linear algebra at desk scale.
//!
//! Everything downstream (range finding, rank search, the optimizer, the
//! gradient-dynamics simulator) is built on the kernels in this module:
//! a row-major [`Matrix`], seeded Gaussian sampling, Householder QR,
//! one-sided Jacobi SVD, cyclic Jacobi symmetric eigensolver and the
//! `ARGD01` checkpoint format.

mod eig;
mod io;
mod matrix;
mod qr;
mod rng;
mod svd;

pub use eig::{sym_eigen, sym_eigvals, SymEigen};
pub use io::{read_matrix, read_matrix_file, write_matrix, write_matrix_file, MAGIC};
pub use matrix::{kron, Matrix};
pub use qr::{qr_orthonormal, qr_rank_revealing};
pub use rng::{gaussian_matrix, random_orthogonal, seeded_rng};
pub use svd::{svd, SvdResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("{op}: dimension mismatch {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid shape {rows}x{cols} for {len} values")]
    InvalidShape { rows: usize, cols: usize, len: usize },
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("rank-deficient input: column {column} has pivot magnitude {pivot:e}")]
    RankDeficient { column: usize, pivot: f64 },
    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    Asymmetric { asymmetry: f64 },
    #[error("output size {rows}x{cols} overflows the addressable range")]
    Overflow { rows: usize, cols: usize },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LinalgError>;
