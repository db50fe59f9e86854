//! Closed-form solution of the linear trace-ratio problem.
//!
//! For a linear embedding `phi(x) = V^T x` the trace ratio becomes
//! `Tr(V^T A V) / Tr(V^T C V)` with `A = X L X^T` and
//! `C = X B X^T + eps I`. In one dimension the minimizer is the smallest
//! generalized eigenpair of the pencil `(A, C)`; for more dimensions the
//! trace-difference iteration is used. These routes serve as an oracle
//! for the gradient-trained loss.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{shape_mismatch, Error, Result};
use crate::graph::LaplacianMatrix;
use crate::linalg::{
    cholesky, frobenius_norm, solve_lower, solve_lower_transpose, symmetric_eigen, symmetrize,
};

pub const TRACE_RATIO_TOLERANCE: f64 = 1e-10;
pub const TRACE_RATIO_MAX_ITERATIONS: usize = 500;

/// Symmetric pencil `(A, C)` with `C` positive definite.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub a: Array2<f64>,
    pub c: Array2<f64>,
}

/// `A = X L X^T`, `C = X B X^T + eps I` for `D x N` data `X`.
pub fn scatter_matrices(
    x: ArrayView2<f64>,
    l: &LaplacianMatrix,
    b: &LaplacianMatrix,
    epsilon: f64,
) -> Result<ScatterPair> {
    let n = x.ncols();
    if l.len() != n || b.len() != n {
        return Err(shape_mismatch("scatter matrices", n, (l.len(), b.len())));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be > 0, got {epsilon}")));
    }
    let a = symmetrize(&x.dot(l.as_array()).dot(&x.t()));
    let mut c = symmetrize(&x.dot(b.as_array()).dot(&x.t()));
    c.diag_mut().mapv_inplace(|v| v + epsilon);
    Ok(ScatterPair { a, c })
}

fn rayleigh(a: &Array2<f64>, c: &Array2<f64>, v: &Array1<f64>) -> f64 {
    v.dot(&a.dot(v)) / v.dot(&c.dot(v))
}

/// Smallest `lambda` with `A v = lambda C v`, via `C = G G^T`, the
/// symmetric reduction `G^-1 A G^-T` and Jacobi. `v` has unit norm.
pub fn smallest_generalized_eigenpair(pair: &ScatterPair) -> Result<(f64, Array1<f64>)> {
    let (values, vectors) = generalized_eigen(pair)?;
    let mut v = vectors.column(0).to_owned();
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let lambda = values[0];
    Ok((lambda, v))
}

/// All generalized eigenpairs, ascending; eigenvectors are `C`-orthonormal
/// columns.
pub fn generalized_eigen(pair: &ScatterPair) -> Result<(Array1<f64>, Array2<f64>)> {
    let (a, c) = (&pair.a, &pair.c);
    if a.dim() != c.dim() || a.nrows() != a.ncols() {
        return Err(shape_mismatch("generalized eigenproblem", a.dim(), c.dim()));
    }
    let g = cholesky(c.view())?;
    // M = G^-1 A G^-T
    let half = solve_lower(g.view(), a.view());
    let m = solve_lower(g.view(), half.t());
    let eig = symmetric_eigen(m.view())?;
    let vectors = solve_lower_transpose(g.view(), eig.vectors.view());
    Ok((eig.values, vectors))
}

/// `|A v - lambda C v| / |A|_F`.
pub fn relative_residual(pair: &ScatterPair, lambda: f64, v: &Array1<f64>) -> f64 {
    let r = pair.a.dot(v) - pair.c.dot(v) * lambda;
    r.dot(&r).sqrt() / frobenius_norm(pair.a.view()).max(f64::MIN_POSITIVE)
}

/// Result of [`trace_ratio_linear`].
#[derive(Debug, Clone)]
pub struct TraceRatioSolution {
    /// `D x dim` projection with orthonormal columns.
    pub projection: Array2<f64>,
    /// Final trace ratio.
    pub ratio: f64,
    /// Ratio after each iteration, starting with the initial guess.
    pub history: Vec<f64>,
}

pub fn trace_ratio(pair: &ScatterPair, v: ArrayView2<f64>) -> f64 {
    let av = pair.a.dot(&v);
    let cv = pair.c.dot(&v);
    (&v * &av).sum() / (&v * &cv).sum()
}

/// Minimizes `Tr(V^T A V) / Tr(V^T C V)` over `D x dim` matrices with
/// orthonormal columns.
///
/// `dim = 1` returns the smallest generalized eigenvector (normalized).
/// Otherwise iterates `V <- smallest eigenvectors of A - rho C`,
/// `rho <- ratio(V)` until `|delta rho| < 1e-10`. The sequence of ratios is
/// non-increasing; a violation beyond roundoff is reported as an error.
pub fn trace_ratio_linear(
    x: ArrayView2<f64>,
    l: &LaplacianMatrix,
    b: &LaplacianMatrix,
    epsilon: f64,
    dim: usize,
) -> Result<TraceRatioSolution> {
    let pair = scatter_matrices(x, l, b, epsilon)?;
    trace_ratio_pencil(&pair, dim)
}

pub fn trace_ratio_pencil(pair: &ScatterPair, dim: usize) -> Result<TraceRatioSolution> {
    let d = pair.a.nrows();
    if dim == 0 || dim > d {
        return Err(Error::InvalidInput(format!("embedding dimension {dim} not in 1..={d}")));
    }
    // C must be positive definite for the ratio to be well defined.
    cholesky(pair.c.view())?;

    if dim == 1 {
        let (lambda, v) = smallest_generalized_eigenpair(pair)?;
        let ratio = rayleigh(&pair.a, &pair.c, &v);
        debug_assert!((ratio - lambda).abs() <= 1e-8 * lambda.abs().max(1.0));
        return Ok(TraceRatioSolution {
            projection: v.insert_axis(Axis(1)),
            ratio,
            history: vec![ratio],
        });
    }

    let mut projection = Array2::<f64>::eye(d).slice(s![.., ..dim]).to_owned();
    let mut rho = trace_ratio(pair, projection.view());
    let mut history = vec![rho];
    for _ in 0..TRACE_RATIO_MAX_ITERATIONS {
        let shifted = &pair.a - &(&pair.c * rho);
        let eig = symmetric_eigen(shifted.view())?;
        projection = eig.vectors.slice(s![.., ..dim]).to_owned();
        let next = trace_ratio(pair, projection.view());
        if next > rho + 1e-12 * rho.abs().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "trace-ratio iteration increased from {rho} to {next}"
            )));
        }
        history.push(next);
        let delta = (rho - next).abs();
        rho = next;
        if delta < TRACE_RATIO_TOLERANCE {
            return Ok(TraceRatioSolution { projection, ratio: rho, history });
        }
    }
    Err(Error::NoConvergence {
        what: "trace-ratio iteration",
        iterations: TRACE_RATIO_MAX_ITERATIONS,
    })
}
