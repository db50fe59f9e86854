//! Compares the generalized-eigenvalue optimum of a linear embedding with
//! what gradient descent through the network reaches.

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{synth_shift, Dataset, ShiftConfig};
use crate::error::{Error, Result};
use crate::graph::{build_intrinsic_lda, build_penalty_lda, laplacian, BatchMeta, LaplacianMatrix};
use crate::losses::{dage_loss, dage_loss_grad, DEFAULT_EPSILON};
use crate::nn::{NetworkSpec, NetworkState, StreamGradient};
use crate::spectral::trace_ratio_linear;

/// Relative gap below which the two optima agree.
pub const ORACLE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub classes: usize,
    pub dim: usize,
    /// Samples per class in each domain; `N = 2 * classes * per_class`.
    pub per_class: usize,
    pub shift: ShiftConfig,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            dim: 5,
            per_class: 5,
            shift: ShiftConfig { rotation: 0.5, translation: vec![1.0, -0.5], ..ShiftConfig::default() },
            epsilon: DEFAULT_EPSILON,
            max_iterations: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub samples: usize,
    pub spectral: f64,
    pub gradient: f64,
    pub gap: f64,
    pub iterations: usize,
    pub passed: bool,
}

/// `D x N` data of both domains and their two-domain graphs.
pub struct OracleProblem {
    pub x: Array2<f64>,
    pub l: LaplacianMatrix,
    pub b: LaplacianMatrix,
}

impl OracleProblem {
    pub fn from_datasets(source: &Dataset, target: &Dataset) -> Result<Self> {
        let xs = source.matrix(&source.all_indices());
        let xt = target.matrix(&target.all_indices());
        let x = concatenate![Axis(0), xs, xt].reversed_axes().as_standard_layout().into_owned();
        let meta = BatchMeta::two_domain(&source.labels(), &target.labels())?;
        Ok(Self { x, l: laplacian(&build_intrinsic_lda(&meta)), b: laplacian(&build_penalty_lda(&meta)) })
    }

    pub fn synthetic(config: &OracleConfig) -> Result<Self> {
        let (s, t) = synth_shift(config.per_class, config.classes, config.dim, &config.shift, config.seed)?;
        Self::from_datasets(&s, &t)
    }
}

/// Loss and gradient of the one-dimensional linear embedding `w^T X`,
/// computed through a single dense layer.
fn loss_and_grad(state: &NetworkState, p: &OracleProblem, eps: f64) -> Result<(f64, Array2<f64>)> {
    let inputs = p.x.t();
    let (phi, cache) = state.forward_features(inputs, None)?;
    let value = dage_loss(phi.view(), &p.l, &p.b, eps)?.value;
    let g_phi = dage_loss_grad(phi.view(), &p.l, &p.b, eps)?;
    let grads = state.backward(&[StreamGradient { features: &cache, grad_phi: g_phi.view(), classifier: None }])?;
    Ok((value, grads.0[0].clone()))
}

fn normalized(w: &Array2<f64>) -> Array2<f64> {
    w / w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Riemannian gradient descent on the unit sphere with Armijo backtracking.
/// Returns the final loss and the number of iterations.
pub fn descend(p: &OracleProblem, eps: f64, max_iterations: usize, seed: u64) -> Result<(f64, usize)> {
    let d = p.x.nrows();
    let spec = NetworkSpec::linear(d, 1, 2);
    let mut state = NetworkState::init(&spec, seed)?;
    let w0 = normalized(&state.params()[0]);
    state.params_mut()[0] = w0;
    let (mut f, mut g) = loss_and_grad(&state, p, eps)?;
    let mut t = 1.0;
    for it in 0..max_iterations {
        let w = state.params()[0].clone();
        let radial = (&g * &w).sum();
        let rg = &g - &(&w * radial);
        let rg_sq = rg.iter().map(|v| v * v).sum::<f64>();
        if rg_sq.sqrt() <= 1e-12 * f.abs().max(1e-300) {
            return Ok((f, it));
        }
        t *= 2.0;
        let accepted = loop {
            state.params_mut()[0] = normalized(&(&w - &(&rg * t)));
            let (f_new, g_new) = loss_and_grad(&state, p, eps)?;
            if f_new <= f - 1e-4 * t * rg_sq {
                break Some((f_new, g_new));
            }
            t *= 0.5;
            if t < 1e-30 {
                break None;
            }
        };
        match accepted {
            Some((f_new, g_new)) => {
                let settled = (f - f_new).abs() <= 1e-15 * f.abs();
                f = f_new;
                g = g_new;
                if settled {
                    return Ok((f, it + 1));
                }
            }
            None => {
                state.params_mut()[0] = w;
                return Ok((f, it + 1));
            }
        }
    }
    Err(Error::NoConvergence { what: "oracle gradient descent", iterations: max_iterations })
}

/// Solves `p` both ways and reports the relative gap.
pub fn compare(p: &OracleProblem, eps: f64, max_iterations: usize, seed: u64) -> Result<OracleReport> {
    let spectral = trace_ratio_linear(p.x.view(), &p.l, &p.b, eps, 1)?.ratio;
    let (gradient, iterations) = descend(p, eps, max_iterations, seed)?;
    let gap = (gradient - spectral).abs() / spectral.abs().max(f64::MIN_POSITIVE);
    Ok(OracleReport {
        seed,
        samples: p.x.ncols(),
        spectral,
        gradient,
        gap,
        iterations,
        passed: gap < ORACLE_TOLERANCE,
    })
}

pub fn run_oracle(config: &OracleConfig) -> Result<OracleReport> {
    let p = OracleProblem::synthetic(config)?;
    compare(&p, config.epsilon, config.max_iterations, config.seed)
}
