//! Central finite-difference checks of every analytic gradient.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiment::{siamese_objective, Method, ObjectiveOptions, Stream};
use crate::graph::{build_intrinsic_lda, build_penalty_lda, laplacian, BatchMeta};
use crate::losses::{self, DistanceKind, LossWeights};
use crate::nn::{LayerSpec, NetworkSpec, NetworkState};

pub const FD_STEP: f64 = 1e-6;
pub const LOSS_TOLERANCE: f64 = 1e-5;
pub const NETWORK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Random instances of the trace-ratio loss.
    pub instances: usize,
    pub max_dim: usize,
    pub max_batch: usize,
    /// Instances of each of the other loss-level checks.
    pub pair_instances: usize,
    /// Perturbs the analytic gradients; every component must then fail.
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seed: 0, instances: 100, max_dim: 8, max_batch: 16, pair_instances: 25, corrupt: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub name: String,
    pub cases: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub components: Vec<ComponentReport>,
    pub passed: bool,
}

impl GradcheckReport {
    /// One line per component.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.components {
            out.push_str(&format!(
                "{:<16} cases={:<4} max_rel_error={:.3e} tol={:.0e} {}\n",
                c.name,
                c.cases,
                c.max_rel_error,
                c.tolerance,
                if c.passed { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

/// `||a - b||_inf / max(||a||_inf, ||b||_inf)`, or the absolute difference
/// when both are below `1e-12`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> Result<f64>) -> Result<Array2<f64>> {
    let mut probe = x.clone();
    let mut grad = Array2::zeros(x.raw_dim());
    for (idx, g) in grad.indexed_iter_mut() {
        let orig = probe[idx];
        probe[idx] = orig + FD_STEP;
        let plus = f(&probe)?;
        probe[idx] = orig - FD_STEP;
        let minus = f(&probe)?;
        probe[idx] = orig;
        *g = (plus - minus) / (2.0 * FD_STEP);
    }
    Ok(grad)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

fn corrupt(g: &mut Array2<f64>, on: bool) {
    if on {
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        g[[0, 0]] += 1e-2 * scale;
    }
}

struct Tracker {
    name: &'static str,
    cases: usize,
    worst: f64,
    tolerance: f64,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self { name, cases: 0, worst: 0.0, tolerance }
    }

    fn add(&mut self, analytic: &Array2<f64>, numeric: &Array2<f64>) {
        let a: Vec<f64> = analytic.iter().copied().collect();
        let n: Vec<f64> = numeric.iter().copied().collect();
        self.add_flat(&a, &n);
    }

    fn add_flat(&mut self, analytic: &[f64], numeric: &[f64]) {
        let e = relative_error(analytic, numeric);
        self.worst = if e.is_nan() { f64::INFINITY } else { self.worst.max(e) };
        self.cases += 1;
    }

    fn finish(self) -> ComponentReport {
        ComponentReport {
            name: self.name.to_string(),
            cases: self.cases,
            max_rel_error: self.worst,
            tolerance: self.tolerance,
            passed: self.cases > 0 && self.worst < self.tolerance,
        }
    }
}

/// Trace-ratio loss on random two-domain batches with `d <= max_dim` and
/// `N <= max_batch`.
pub fn check_dage(config: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<ComponentReport> {
    let mut t = Tracker::new("dage", LOSS_TOLERANCE);
    for _ in 0..config.instances {
        let d = rng.random_range(1..=config.max_dim.max(1));
        let n = rng.random_range(2..=config.max_batch.max(2));
        let ns = rng.random_range(1..n);
        let classes = rng.random_range(2..=4);
        let y = labels(rng, n, classes);
        let meta = BatchMeta::two_domain(&y[..ns], &y[ns..])?;
        let (l, b) = (laplacian(&build_intrinsic_lda(&meta)), laplacian(&build_penalty_lda(&meta)));
        let phi = gaussian(rng, d, n);
        let eps = losses::DEFAULT_EPSILON;
        let mut analytic = losses::dage_loss_grad(phi.view(), &l, &b, eps)?;
        corrupt(&mut analytic, config.corrupt);
        let numeric = numeric_gradient(&phi, |p| Ok(losses::dage_loss(p.view(), &l, &b, eps)?.value))?;
        t.add(&analytic, &numeric);
    }
    Ok(t.finish())
}

type PairGrad = fn(ndarray::ArrayView2<f64>, ndarray::ArrayView2<f64>, &[usize], &[usize]) -> Result<(Array2<f64>, Array2<f64>)>;
type PairLoss = fn(ndarray::ArrayView2<f64>, ndarray::ArrayView2<f64>, &[usize], &[usize]) -> Result<f64>;

fn check_pair_loss(
    name: &'static str,
    config: &GradcheckConfig,
    rng: &mut ChaCha8Rng,
    loss: PairLoss,
    grad: PairGrad,
) -> Result<ComponentReport> {
    let mut t = Tracker::new(name, LOSS_TOLERANCE);
    for _ in 0..config.pair_instances {
        let d = rng.random_range(1..=config.max_dim.max(1));
        let ns = rng.random_range(2..=config.max_batch.max(4) / 2);
        let nt = rng.random_range(2..=config.max_batch.max(4) / 2);
        // two classes in the source so every target has a same-class and a
        // different-class partner
        let mut ys = labels(rng, ns, 2);
        ys[0] = 0;
        ys[1] = 1;
        let yt = labels(rng, nt, 2);
        let phi_s = gaussian(rng, d, ns);
        let phi_t = gaussian(rng, d, nt);
        let (mut gs, mut gt) = grad(phi_s.view(), phi_t.view(), &ys, &yt)?;
        corrupt(&mut gs, config.corrupt);
        corrupt(&mut gt, config.corrupt);
        let ns_num = numeric_gradient(&phi_s, |p| loss(p.view(), phi_t.view(), &ys, &yt))?;
        let nt_num = numeric_gradient(&phi_t, |p| loss(phi_s.view(), p.view(), &ys, &yt))?;
        let a: Vec<f64> = gs.iter().chain(gt.iter()).copied().collect();
        let n: Vec<f64> = ns_num.iter().chain(nt_num.iter()).copied().collect();
        t.add_flat(&a, &n);
    }
    Ok(t.finish())
}

const CSA_MARGIN: f64 = 2.0;

pub fn check_csa(config: &GradcheckConfig, rng: &mut ChaCha8Rng, distance: DistanceKind) -> Result<ComponentReport> {
    let name = match distance {
        DistanceKind::Euclidean => "csa",
        DistanceKind::SquaredEuclidean => "csa-squared",
    };
    let (loss, grad): (PairLoss, PairGrad) = match distance {
        DistanceKind::Euclidean => (
            |s, t, ys, yt| Ok(losses::csa_loss_with(s, t, ys, yt, CSA_MARGIN, DistanceKind::Euclidean)?.value),
            |s, t, ys, yt| losses::csa_loss_grad(s, t, ys, yt, CSA_MARGIN, DistanceKind::Euclidean),
        ),
        DistanceKind::SquaredEuclidean => (
            |s, t, ys, yt| Ok(losses::csa_loss_with(s, t, ys, yt, CSA_MARGIN, DistanceKind::SquaredEuclidean)?.value),
            |s, t, ys, yt| losses::csa_loss_grad(s, t, ys, yt, CSA_MARGIN, DistanceKind::SquaredEuclidean),
        ),
    };
    check_pair_loss(name, config, rng, loss, grad)
}

pub fn check_dsne(config: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<ComponentReport> {
    check_pair_loss(
        "dsne",
        config,
        rng,
        |s, t, ys, yt| Ok(losses::dsne_loss(s, t, ys, yt)?.value),
        |s, t, ys, yt| losses::dsne_loss_grad(s, t, ys, yt, DistanceKind::SquaredEuclidean),
    )
}

pub fn check_dsne_hinge(config: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<ComponentReport> {
    check_pair_loss(
        "dsne-hinge",
        config,
        rng,
        |s, t, ys, yt| Ok(losses::dsne_hinge_loss(s, t, ys, yt, DistanceKind::SquaredEuclidean, CSA_MARGIN)?.value),
        |s, t, ys, yt| losses::dsne_hinge_loss_grad(s, t, ys, yt, DistanceKind::SquaredEuclidean, CSA_MARGIN),
    )
}

pub fn check_cross_entropy(config: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<ComponentReport> {
    let mut t = Tracker::new("cross-entropy", LOSS_TOLERANCE);
    for _ in 0..config.pair_instances {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(2..=5);
        let y = losses::one_hot(&labels(rng, n, k), k);
        let p = Array2::from_shape_fn((n, k), |_| rng.random_range(0.05..1.0));
        let mut analytic = losses::cross_entropy_grad(y.view(), p.view())?;
        corrupt(&mut analytic, config.corrupt);
        let numeric = numeric_gradient(&p, |q| Ok(losses::cross_entropy(y.view(), q.view())?.value))?;
        t.add(&analytic, &numeric);
    }
    Ok(t.finish())
}

/// A fully connected net with two feature layers.
pub fn small_dense_spec(input: usize, classes: usize) -> NetworkSpec {
    use LayerSpec::*;
    NetworkSpec {
        input: [input, 1, 1],
        features: vec![Dense { out: 6 }, Relu, Dense { out: 4 }],
        classifier: vec![Dense { out: classes }, Softmax],
        classes,
    }
}

/// Two convolutions with ReLU and pooling, then a dense embedding.
pub fn small_conv_spec(classes: usize) -> NetworkSpec {
    use LayerSpec::*;
    NetworkSpec {
        input: [1, 9, 9],
        features: vec![
            Conv { kernel: [3, 3], out_channels: 2, stride: 1 },
            Relu,
            MaxPool { window: 2 },
            Conv { kernel: [2, 2], out_channels: 3, stride: 1 },
            Relu,
            Dense { out: 4 },
        ],
        classifier: vec![Dense { out: classes }, Softmax],
        classes,
    }
}

/// Finite differences of the full joint objective with respect to every
/// network parameter.
pub fn check_network(
    name: &'static str,
    spec: &NetworkSpec,
    method: Method,
    config: &GradcheckConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ComponentReport> {
    let mut t = Tracker::new(name, NETWORK_TOLERANCE);
    let opts = ObjectiveOptions { weights: LossWeights::from_ratios(0.5, 0.6), ..ObjectiveOptions::default() };
    for _ in 0..3 {
        let mut state = NetworkState::init(spec, rng.random())?;
        let size = spec.input_size();
        let (ns, nt) = (5, 4);
        let xs = gaussian(rng, ns, size);
        let xt = gaussian(rng, nt, size);
        let ys = vec![0, 1, 2 % spec.classes, 0, 1];
        let yt = vec![1, 0, 1, 2 % spec.classes];
        let streams = |s: &NetworkState| {
            let src = Stream { inputs: xs.view(), labels: &ys };
            let tgt = Stream { inputs: xt.view(), labels: &yt };
            siamese_objective(s, method, Some(src), Some(tgt), &opts, None)
        };
        let (_, grads) = streams(&state)?;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for (p, g) in grads.0.iter().enumerate() {
            let mut g = g.clone();
            corrupt(&mut g, config.corrupt);
            analytic.extend(g.iter().copied());
            let original = state.params()[p].clone();
            let num = numeric_gradient(&original, |probe| {
                state.params_mut()[p].assign(probe);
                Ok(streams(&state)?.0.value)
            })?;
            state.params_mut()[p].assign(&original);
            numeric.extend(num.iter().copied());
        }
        t.add_flat(&analytic, &numeric);
    }
    Ok(t.finish())
}

/// Every loss-level and network-level check.
pub fn run_gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let components = vec![
        check_dage(config, &mut rng)?,
        check_csa(config, &mut rng, DistanceKind::Euclidean)?,
        check_csa(config, &mut rng, DistanceKind::SquaredEuclidean)?,
        check_dsne(config, &mut rng)?,
        check_dsne_hinge(config, &mut rng)?,
        check_cross_entropy(config, &mut rng)?,
        check_network("network-dense", &small_dense_spec(7, 3), Method::DageLda, config, &mut rng)?,
        check_network("network-conv", &small_conv_spec(3), Method::DageLda, config, &mut rng)?,
        check_network("network-ccsa", &small_dense_spec(7, 3), Method::Ccsa, config, &mut rng)?,
    ];
    let passed = components.iter().all(|c| c.passed);
    Ok(GradcheckReport { components, passed })
}
