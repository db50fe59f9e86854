//! The joint objective of one Siamese step and its parameter gradients.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::graph::{build_intrinsic_lda_with, build_penalty_lda, laplacian, BatchMeta, GraphOptions};
use crate::losses::{
    self, cross_entropy, cross_entropy_grad, one_hot, total_objective, DistanceKind, LossValue,
    LossWeights,
};
use crate::nn::{Gradients, NetRng, NetworkState, StreamGradient};

use super::Method;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveOptions {
    pub weights: LossWeights,
    pub graph: GraphOptions,
    pub csa_distance: DistanceKind,
    pub dsne_distance: DistanceKind,
    /// Hinge margin of the d-SNE terms; `None` uses the unclipped sum.
    pub dsne_margin: Option<f64>,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            graph: GraphOptions::default(),
            csa_distance: DistanceKind::Euclidean,
            dsne_distance: DistanceKind::SquaredEuclidean,
            dsne_margin: None,
        }
    }
}

/// One labelled stream: `N x input_size` inputs and their labels.
#[derive(Debug, Clone, Copy)]
pub struct Stream<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

/// DA loss and its gradients with respect to both embeddings.
fn da_term(
    method: Method,
    phi_s: ArrayView2<f64>,
    phi_t: ArrayView2<f64>,
    ys: &[usize],
    yt: &[usize],
    opts: &ObjectiveOptions,
) -> Result<(LossValue, Array2<f64>, Array2<f64>)> {
    match method {
        Method::DageLda => {
            let meta = BatchMeta::two_domain(ys, yt)?;
            let l = laplacian(&build_intrinsic_lda_with(&meta, opts.graph));
            let b = laplacian(&build_penalty_lda(&meta));
            let phi = concatenate![Axis(1), phi_s, phi_t];
            let eps = opts.weights.epsilon;
            let value = losses::dage_loss(phi.view(), &l, &b, eps)?;
            let grad = losses::dage_loss_grad(phi.view(), &l, &b, eps)?;
            let ns = phi_s.ncols();
            Ok((value, grad.slice(s![.., ..ns]).to_owned(), grad.slice(s![.., ns..]).to_owned()))
        }
        Method::Ccsa => {
            let (m, d) = (opts.weights.margin, opts.csa_distance);
            let value = losses::csa_loss_with(phi_s, phi_t, ys, yt, m, d)?;
            let (gs, gt) = losses::csa_loss_grad(phi_s, phi_t, ys, yt, m, d)?;
            Ok((value, gs, gt))
        }
        Method::Dsne => {
            let d = opts.dsne_distance;
            match opts.dsne_margin {
                None => {
                    let value = losses::dsne_loss_with(phi_s, phi_t, ys, yt, d)?;
                    let (gs, gt) = losses::dsne_loss_grad(phi_s, phi_t, ys, yt, d)?;
                    Ok((value, gs, gt))
                }
                Some(m) => {
                    let value = losses::dsne_hinge_loss(phi_s, phi_t, ys, yt, d, m)?;
                    let (gs, gt) = losses::dsne_hinge_loss_grad(phi_s, phi_t, ys, yt, d, m)?;
                    Ok((value, gs, gt))
                }
            }
        }
        Method::FtTarget | Method::SourceOnly => unreachable!("single-stream methods have no DA term"),
    }
}

/// Evaluates the objective of `method` on one batch and back-propagates it.
///
/// Domain adaptation methods need both streams and minimize
/// `a * L_da + beta * CE_s + gamma * CE_t`. `SourceOnly` and `FtTarget`
/// minimize the plain cross-entropy of their single stream. Dropout masks
/// are drawn from `rng` when given.
pub fn siamese_objective(
    state: &NetworkState,
    method: Method,
    source: Option<Stream<'_>>,
    target: Option<Stream<'_>>,
    opts: &ObjectiveOptions,
    mut rng: Option<&mut NetRng>,
) -> Result<(LossValue, Gradients)> {
    let classes = state.spec().classes;
    let single = |stream: Stream<'_>, rng: Option<&mut NetRng>| -> Result<(LossValue, Gradients)> {
        let mut rng = rng;
        let (phi, fc) = state.forward_features(stream.inputs, rng.as_deref_mut())?;
        let (pred, cc) = state.forward_classifier(phi.view(), rng)?;
        let y = one_hot(stream.labels, classes);
        let ce = cross_entropy(y.view(), pred.view())?;
        let g_pred = cross_entropy_grad(y.view(), pred.view())?;
        let zero = Array2::zeros(phi.raw_dim());
        let grads = state.backward(&[StreamGradient {
            features: &fc,
            grad_phi: zero.view(),
            classifier: Some((&cc, g_pred.view())),
        }])?;
        Ok((ce, grads))
    };
    match (method, source, target) {
        (Method::SourceOnly, Some(s), _) => single(s, rng),
        (Method::FtTarget, _, Some(t)) => single(t, rng),
        (m, Some(src), Some(tgt)) if m.is_domain_adaptation() => {
            let w = opts.weights;
            let (phi_s, fcs) = state.forward_features(src.inputs, rng.as_deref_mut())?;
            let (phi_t, fct) = state.forward_features(tgt.inputs, rng.as_deref_mut())?;
            let (pred_s, ccs) = state.forward_classifier(phi_s.view(), rng.as_deref_mut())?;
            let (pred_t, cct) = state.forward_classifier(phi_t.view(), rng.as_deref_mut())?;
            let (da, g_s, g_t) = da_term(m, phi_s.view(), phi_t.view(), src.labels, tgt.labels, opts)?;
            let y_s = one_hot(src.labels, classes);
            let y_t = one_hot(tgt.labels, classes);
            let ce_s = cross_entropy(y_s.view(), pred_s.view())?;
            let ce_t = cross_entropy(y_t.view(), pred_t.view())?;
            let total = total_objective(&da, &ce_s, &ce_t, &w);
            if !total.value.is_finite() {
                return Err(Error::NonFinite("training objective"));
            }
            let gp_s = cross_entropy_grad(y_s.view(), pred_s.view())? * w.beta;
            let gp_t = cross_entropy_grad(y_t.view(), pred_t.view())? * w.gamma;
            let (g_s, g_t) = (g_s * w.da_weight, g_t * w.da_weight);
            let grads = state.backward(&[
                StreamGradient { features: &fcs, grad_phi: g_s.view(), classifier: Some((&ccs, gp_s.view())) },
                StreamGradient { features: &fct, grad_phi: g_t.view(), classifier: Some((&cct, gp_t.view())) },
            ])?;
            Ok((total, grads))
        }
        (m, _, _) => Err(Error::InvalidInput(format!("{} is missing an input stream", m.name()))),
    }
}
