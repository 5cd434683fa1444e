use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{qr_orthonormal, Matrix};

/// The crate-wide seeded generator. ChaCha8 output is specified independently
/// of platform and word size, so traces reproduce bit-for-bit everywhere.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows x cols` matrix of i.i.d. standard normal draws, filled row-major.
///
/// # Panics
/// If either dimension is zero.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
    let mut rng = seeded_rng(seed);
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec_unchecked(rows, cols, data)
}

/// Haar-distributed `n x n` orthogonal matrix: Q factor of a Gaussian matrix
/// with a positive-diagonal R.
pub fn random_orthogonal(n: usize, seed: u64) -> Matrix {
    let mut attempt = seed;
    loop {
        // A Gaussian square matrix is singular with probability zero.
        if let Ok(q) = qr_orthonormal(&gaussian_matrix(n, n, attempt)) {
            return q;
        }
        attempt = attempt.wrapping_add(1);
    }
}
