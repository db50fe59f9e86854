//! A small feature extractor and classifier with hand-written backward
//! passes, trained as a weight-sharing Siamese network.
//!
//! One [`NetworkState`] holds every parameter. Source and target batches
//! are pushed through it separately (two streams); [`NetworkState::backward`]
//! sums the contributions of all streams into one set of gradients.

mod checkpoint;
mod layers;
mod spec;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use layers::{LayerCache, LayerParams};
use spec::Layout;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use spec::{Dims, LayerSpec, NetworkSpec};

/// Random source for initialization and dropout masks.
pub type NetRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// `lr_t = lr / (1 + lr_decay * t)`.
    pub lr_decay: f64,
    pub momentum: f64,
    pub l2: f64,
    /// Keep probability applied to every dropout layer.
    pub keep_prob: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, lr_decay: 0.0, momentum: 0.9, l2: 0.0, keep_prob: 1.0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.lr_decay >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.l2 >= 0.0
            && self.keep_prob > 0.0
            && self.keep_prob <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer config {self:?}")))
        }
    }

    pub fn learning_rate_at(&self, step: u64) -> f64 {
        self.learning_rate / (1.0 + self.lr_decay * step as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Features,
    Classifier,
}

/// Everything a backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    part: Part,
    step: u64,
    batch: usize,
    layers: Vec<LayerCache>,
}

/// Parameter gradients, in the same order as [`NetworkState::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Array2<f64>>);

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Upstream gradients for one stream.
pub struct StreamGradient<'a> {
    pub features: &'a ForwardCache,
    /// `d x N`, same layout as the embedding.
    pub grad_phi: ArrayView2<'a, f64>,
    pub classifier: Option<(&'a ForwardCache, ArrayView2<'a, f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    spec: NetworkSpec,
    layout: Layout,
    /// Per layer (features then classifier), the index of its weight; the
    /// bias follows at `index + 1`.
    slots: Vec<Option<usize>>,
    params: Vec<Array2<f64>>,
    velocity: Vec<Array2<f64>>,
    step: u64,
}

impl NetworkState {
    /// Glorot-uniform weights and zero biases, deterministic in `seed`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = NetRng::seed_from_u64(seed);
        Self::init_with(spec, |fan_in, fan_out, rows, cols| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
        })
    }

    fn init_with(
        spec: &NetworkSpec,
        mut weights: impl FnMut(usize, usize, usize, usize) -> Array2<f64>,
    ) -> Result<Self> {
        let layout = spec.layout()?;
        let mut slots = Vec::new();
        let mut params = Vec::new();
        let all = spec.features.iter().chain(&spec.classifier);
        let dims = layout.features.iter().chain(&layout.classifier);
        for (layer, &(input, output)) in all.zip(dims) {
            let (rows, cols, fan_in, fan_out) = match *layer {
                LayerSpec::Conv { kernel: [kh, kw], out_channels, .. } => {
                    let k = input[0] * kh * kw;
                    (out_channels, k, k, out_channels * kh * kw)
                }
                LayerSpec::Dense { out } => {
                    let k = spec::size(input);
                    (out, k, k, out)
                }
                _ => {
                    slots.push(None);
                    continue;
                }
            };
            debug_assert_eq!(rows, output[0]);
            slots.push(Some(params.len()));
            params.push(weights(fan_in, fan_out, rows, cols));
            params.push(Array2::zeros((1, rows)));
        }
        let velocity = params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Ok(Self { spec: spec.clone(), layout, slots, params, velocity, step: 0 })
    }

    pub(crate) fn from_parts(spec: &NetworkSpec, params: Vec<Array2<f64>>) -> Result<Self> {
        let mut state = Self::init_with(spec, |_, _, r, c| Array2::zeros((r, c)))?;
        if state.params.len() != params.len()
            || state.params.iter().zip(&params).any(|(a, b)| a.dim() != b.dim())
        {
            return Err(Error::SpecMismatch("parameter shapes do not match the network spec".into()));
        }
        state.params = params;
        Ok(state)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    /// Mutable access for finite-difference checks. Invalidates caches.
    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn velocity(&self) -> &[Array2<f64>] {
        &self.velocity
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn embedding_dim(&self) -> usize {
        spec::size(self.layout.features.last().expect("non-empty").1)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    fn layer_params(&self, layer: usize) -> Option<LayerParams<'_>> {
        self.slots[layer].map(|i| LayerParams {
            weight: self.params[i].view(),
            bias: self.params[i + 1].row(0),
        })
    }

    fn run_forward(
        &self,
        part: Part,
        x: Array2<f64>,
        mut rng: Option<&mut NetRng>,
    ) -> (Array2<f64>, ForwardCache) {
        let (specs, dims, offset) = match part {
            Part::Features => (&self.spec.features, &self.layout.features, 0),
            Part::Classifier => (&self.spec.classifier, &self.layout.classifier, self.spec.features.len()),
        };
        let batch = x.nrows();
        let mut caches = Vec::with_capacity(specs.len());
        let mut act = x;
        for (i, (layer, &d)) in specs.iter().zip(dims).enumerate() {
            let (out, cache) = layers::forward(layer, d, self.layer_params(offset + i), act, rng.as_deref_mut());
            caches.push(cache);
            act = out;
        }
        (act, ForwardCache { part, step: self.step, batch, layers: caches })
    }

    /// Embeds an `N x input_size` batch (one sample per row) and returns the
    /// `d x N` embedding. Dropout is sampled only when `rng` is given.
    pub fn forward_features(
        &self,
        inputs: ArrayView2<f64>,
        rng: Option<&mut NetRng>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        if inputs.ncols() != self.spec.input_size() {
            return Err(shape_mismatch("network input", self.spec.input_size(), inputs.ncols()));
        }
        let (out, cache) = self.run_forward(Part::Features, inputs.to_owned(), rng);
        Ok((out.t().as_standard_layout().into_owned(), cache))
    }

    /// Class probabilities (`N x K`, rows sum to one) for a `d x N` embedding.
    pub fn forward_classifier(
        &self,
        phi: ArrayView2<f64>,
        rng: Option<&mut NetRng>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        if phi.nrows() != self.embedding_dim() {
            return Err(shape_mismatch("classifier input", self.embedding_dim(), phi.nrows()));
        }
        let x = phi.t().as_standard_layout().into_owned();
        Ok(self.run_forward(Part::Classifier, x, rng))
    }

    /// Inference: probabilities for an `N x input_size` batch.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (phi, _) = self.forward_features(inputs, None)?;
        Ok(self.forward_classifier(phi.view(), None)?.0)
    }

    fn check_cache(&self, cache: &ForwardCache, part: Part) -> Result<()> {
        if cache.part != part {
            return Err(Error::StaleCache(format!("expected a {part:?} cache, got {:?}", cache.part)));
        }
        if cache.step != self.step {
            return Err(Error::StaleCache(format!(
                "cache from step {} used at step {}",
                cache.step, self.step
            )));
        }
        Ok(())
    }

    fn run_backward(&self, part: Part, cache: &ForwardCache, grad: Array2<f64>, acc: &mut [Array2<f64>]) -> Array2<f64> {
        let (specs, dims, offset) = match part {
            Part::Features => (&self.spec.features, &self.layout.features, 0),
            Part::Classifier => (&self.spec.classifier, &self.layout.classifier, self.spec.features.len()),
        };
        let mut g = grad;
        for i in (0..specs.len()).rev() {
            let (dx, pgrads) =
                layers::backward(&specs[i], dims[i], self.layer_params(offset + i), &cache.layers[i], g);
            if let (Some((dw, db)), Some(slot)) = (pgrads, self.slots[offset + i]) {
                acc[slot] += &dw;
                acc[slot + 1] += &db;
            }
            g = dx;
        }
        g
    }

    /// Parameter gradients given upstream gradients of every stream. The
    /// streams share all weights, so their contributions are summed.
    pub fn backward(&self, streams: &[StreamGradient<'_>]) -> Result<Gradients> {
        let mut acc: Vec<Array2<f64>> = self.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        let d = self.embedding_dim();
        for stream in streams {
            self.check_cache(stream.features, Part::Features)?;
            let n = stream.features.batch;
            if stream.grad_phi.dim() != (d, n) {
                return Err(shape_mismatch("embedding gradient", (d, n), stream.grad_phi.dim()));
            }
            let mut g_phi = stream.grad_phi.t().to_owned();
            if let Some((cache, grad_pred)) = &stream.classifier {
                self.check_cache(cache, Part::Classifier)?;
                if cache.batch != n || grad_pred.dim() != (n, self.spec.classes) {
                    return Err(shape_mismatch(
                        "prediction gradient",
                        (n, self.spec.classes),
                        grad_pred.dim(),
                    ));
                }
                g_phi += &self.run_backward(Part::Classifier, cache, grad_pred.to_owned(), &mut acc);
            }
            self.run_backward(Part::Features, stream.features, g_phi, &mut acc);
        }
        Ok(Gradients(acc))
    }

    /// `v <- mu v - lr_t (g + l2 theta)`, `theta <- theta + v`. Rejects
    /// non-finite gradients without touching the state.
    pub fn sgd_step(&mut self, grads: &Gradients, opt: &OptimizerConfig) -> Result<()> {
        if grads.0.len() != self.params.len()
            || grads.0.iter().zip(&self.params).any(|(g, p)| g.dim() != p.dim())
        {
            return Err(shape_mismatch(
                "gradients",
                self.params.iter().map(|p| p.dim()).collect::<Vec<_>>(),
                grads.0.iter().map(|p| p.dim()).collect::<Vec<_>>(),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("parameter gradients"));
        }
        let lr = opt.learning_rate_at(self.step);
        for ((theta, v), g) in self.params.iter_mut().zip(&mut self.velocity).zip(&grads.0) {
            ndarray::Zip::from(&mut *v).and(&*theta).and(g).for_each(|v, &t, &g| {
                *v = opt.momentum * *v - lr * (g + opt.l2 * t);
            });
            *theta += &*v;
        }
        self.step += 1;
        Ok(())
    }
}
