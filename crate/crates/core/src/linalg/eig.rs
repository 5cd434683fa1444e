use super::{LinalgError, Matrix, Result};

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector of `values[i]`.
    pub vectors: Matrix,
}

fn check_symmetric(s: &Matrix) -> Result<()> {
    if s.rows() != s.cols() {
        return Err(LinalgError::DimensionMismatch { op: "sym_eigen", left: s.shape(), right: s.shape() });
    }
    let asym = s.sub(&s.transpose())?.fro_norm();
    if asym > 1e-10 * s.fro_norm() {
        return Err(LinalgError::Asymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn sym_eigen(s: &Matrix) -> Result<SymEigen> {
    check_symmetric(s)?;
    let n = s.rows();
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (s.get(i, j) + s.get(j, i)));
    let mut v = Matrix::identity(n);
    let norm = a.fro_norm();
    let off = |a: &Matrix| {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += a.get(i, j).powi(2);
                }
            }
        }
        acc.sqrt()
    };
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off(&a) <= 1e-15 * norm {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
    }
    if !converged && off(&a) > 1e-12 * norm {
        return Err(LinalgError::NoConvergence { sweeps: MAX_SWEEPS, residual: off(&a) });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| v.get(i, order[j]));
    Ok(SymEigen { values, vectors })
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigvals(s: &Matrix) -> Result<Vec<f64>> {
    Ok(sym_eigen(s)?.values)
}
