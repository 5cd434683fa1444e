use super::{LinalgError, Matrix, Result};

const MAX_SWEEPS: usize = 100;

/// Thin SVD `A = U·diag(s)·Vᵀ` with `k = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows x k`, orthonormal columns.
    pub u: Matrix,
    /// Nonincreasing, nonnegative.
    pub s: Vec<f64>,
    /// `cols x k`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    /// `U_r·diag(s_r)·V_rᵀ`, the best rank-`r` approximation.
    pub fn truncated(&self, r: usize) -> Matrix {
        let (n, m) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(n, m);
        for p in 0..r.min(self.s.len()) {
            let sp = self.s[p];
            if sp == 0.0 {
                continue;
            }
            for i in 0..n {
                let ui = self.u.get(i, p) * sp;
                if ui == 0.0 {
                    continue;
                }
                for j in 0..m {
                    out.set(i, j, out.get(i, j) + ui * self.v.get(j, p));
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.truncated(self.s.len())
    }

    /// `Σ_{i>r} sᵢ²`.
    pub fn tail_energy(&self, r: usize) -> f64 {
        self.s.iter().skip(r).map(|x| x * x).sum()
    }

    pub fn total_energy(&self) -> f64 {
        self.tail_energy(0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One-sided (Hestenes) Jacobi on the columns of a tall `p x q` matrix given
/// as columns. Returns (rotated columns, accumulated right rotations).
fn one_sided_jacobi(mut cols: Vec<Vec<f64>>, scale: f64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let q = cols.len();
    let p = cols.first().map_or(0, Vec::len);
    let mut v: Vec<Vec<f64>> = (0..q)
        .map(|j| (0..q).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let tol = (p.max(q) as f64) * f64::EPSILON;
    let tiny = (f64::MIN_POSITIVE / f64::EPSILON) * scale * scale;
    let mut residual = 0.0;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        residual = 0.0f64;
        for i in 0..q {
            for j in i + 1..q {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                if alpha <= tiny || beta <= tiny {
                    continue;
                }
                let gamma = dot(&cols[i], &cols[j]);
                let ratio = gamma.abs() / (alpha * beta).sqrt();
                residual = residual.max(ratio);
                if ratio <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(j);
                for (x, y) in left[i].iter_mut().zip(right[0].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
                let (left, right) = v.split_at_mut(j);
                for (x, y) in left[i].iter_mut().zip(right[0].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
            }
        }
        if !rotated {
            return Ok((cols, v));
        }
    }
    Err(LinalgError::NoConvergence { sweeps: MAX_SWEEPS, residual })
}

/// Extends `basis` (orthonormal columns of length `p`) into slots listed in
/// `missing` using Gram–Schmidt against the standard basis.
fn complete_basis(basis: &mut [Vec<f64>], missing: &[usize], p: usize) {
    let mut candidate = 0;
    for &slot in missing {
        loop {
            assert!(candidate < p, "basis completion ran out of candidates");
            let mut e = vec![0.0; p];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                // Unfilled slots are zero vectors and drop out of the sum.
                for b in basis.iter() {
                    let d = dot(&e, b);
                    e.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
            }
            let n = dot(&e, &e).sqrt();
            if n > 1e-8 {
                e.iter_mut().for_each(|x| *x /= n);
                basis[slot] = e;
                break;
            }
        }
    }
}

/// Thin SVD by one-sided Jacobi.
///
/// Singular vectors are sign-normalized so the largest-magnitude entry of
/// every left singular vector is positive.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if !a.is_finite() {
        let idx = a.data().iter().position(|x| !x.is_finite()).unwrap_or(0);
        return Err(LinalgError::NonFinite { row: idx / a.cols(), col: idx % a.cols() });
    }
    let transposed = a.rows() < a.cols();
    let b = if transposed { a.transpose() } else { a.clone() };
    let (p, q) = b.shape();
    let cols: Vec<Vec<f64>> = (0..q).map(|j| b.col(j)).collect();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let (cols, v) = one_sided_jacobi(cols, scale)?;

    let mut order: Vec<(usize, f64)> = cols.iter().map(|c| dot(c, c).sqrt()).enumerate().collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));

    let smax = order.first().map_or(0.0, |x| x.1);
    let null_tol = smax * (p as f64) * f64::EPSILON * 4.0;
    let mut s = Vec::with_capacity(q);
    let mut left: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut right: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut missing = Vec::new();
    for (slot, &(j, sigma)) in order.iter().enumerate() {
        if sigma > null_tol && sigma > 0.0 {
            left.push(cols[j].iter().map(|x| x / sigma).collect());
        } else {
            left.push(vec![0.0; p]);
            missing.push(slot);
        }
        s.push(sigma);
        right.push(v[j].clone());
    }
    complete_basis(&mut left, &missing, p);

    // Orient so that a's left singular vectors have a positive dominant entry.
    let (mut u_cols, mut v_cols) = if transposed { (right, left) } else { (left, right) };
    for (uc, vc) in u_cols.iter_mut().zip(v_cols.iter_mut()) {
        let dominant = uc.iter().fold(0.0f64, |acc, &x| if x.abs() > acc.abs() { x } else { acc });
        if dominant < 0.0 {
            uc.iter_mut().for_each(|x| *x = -*x);
            vc.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let k = q;
    let u = Matrix::from_fn(a.rows(), k, |i, j| u_cols[j][i]);
    let v = Matrix::from_fn(a.cols(), k, |i, j| v_cols[j][i]);
    Ok(SvdResult { u, s, v })
}
