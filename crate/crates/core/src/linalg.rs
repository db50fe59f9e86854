//! Dense symmetric linear algebra: Cholesky factorization, triangular
//! solves and the cyclic Jacobi eigenvalue iteration.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{shape_mismatch, Error, Result};

const JACOBI_MAX_SWEEPS: usize = 100;

/// `(M + M^T) / 2`.
pub fn symmetrize(m: &Array2<f64>) -> Array2<f64> {
    (m + &m.t()) * 0.5
}

pub fn frobenius_norm(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn require_square(m: &ArrayView2<f64>, context: &'static str) -> Result<usize> {
    let (r, c) = m.dim();
    if r != c {
        return Err(shape_mismatch(context, (r, r), (r, c)));
    }
    Ok(r)
}

/// Lower-triangular `G` with `M = G G^T`. Fails on the first non-positive
/// pivot.
pub fn cholesky(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = require_square(&m, "cholesky")?;
    let mut g = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = m[[j, j]];
        for k in 0..j {
            diag -= g[[j, k]] * g[[j, k]];
        }
        if !(diag > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: diag });
        }
        let gjj = diag.sqrt();
        g[[j, j]] = gjj;
        for i in (j + 1)..n {
            let mut s = m[[i, j]];
            for k in 0..j {
                s -= g[[i, k]] * g[[j, k]];
            }
            g[[i, j]] = s / gjj;
        }
    }
    Ok(g)
}

/// Solves `G X = B` for lower-triangular `G`.
pub fn solve_lower(g: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let n = g.nrows();
    let mut x = b.to_owned();
    for col in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[[i, col]];
            for k in 0..i {
                s -= g[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = s / g[[i, i]];
        }
    }
    x
}

/// Solves `G^T X = B` for lower-triangular `G`.
pub fn solve_lower_transpose(g: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let n = g.nrows();
    let mut x = b.to_owned();
    for col in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut s = x[[i, col]];
            for k in (i + 1)..n {
                s -= g[[k, i]] * x[[k, col]];
            }
            x[[i, col]] = s / g[[i, i]];
        }
    }
    x
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Ascending.
    pub values: Array1<f64>,
    /// Column `k` belongs to `values[k]`; orthonormal.
    pub vectors: Array2<f64>,
}

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible
/// relative to the matrix norm.
pub fn symmetric_eigen(m: ArrayView2<f64>) -> Result<SymmetricEigen> {
    let n = require_square(&m, "symmetric eigen")?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("symmetric eigen input"));
    }
    let mut a = symmetrize(&m.to_owned());
    let mut v = Array2::<f64>::eye(n);
    let scale = frobenius_norm(a.view()).max(f64::MIN_POSITIVE);
    let off = |a: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[[i, j]] * a[[i, j]];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off(&a) <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off(&a) > 1e-12 * scale {
        return Err(Error::NoConvergence {
            what: "jacobi eigenvalue iteration",
            iterations: JACOBI_MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].total_cmp(&a[[j, j]]));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    Ok(SymmetricEigen { values, vectors })
}
