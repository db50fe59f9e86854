//! Domain adaptation losses over a two-stream batch.
//!
//! Embeddings are `d x N` matrices whose columns are samples. The DAGE loss
//! is the trace ratio `Tr(Phi L Phi^T) / (Tr(Phi B Phi^T) + eps)`; CSA and
//! d-SNE are the pairwise losses it generalizes. All losses are sums over
//! pairs or samples, never means.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::graph::{trace_quadratic, LaplacianMatrix, WeightMatrix};

/// Predicted probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossValue {
    pub value: f64,
    pub components: BTreeMap<&'static str, f64>,
}

impl LossValue {
    pub fn new(value: f64) -> Self {
        Self { value, components: BTreeMap::new() }
    }

    fn with(mut self, name: &'static str, value: f64) -> Self {
        self.components.insert(name, value);
        self
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }
}

/// Weights of the joint objective `a * L_da + beta * CE_s + gamma * CE_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub da_weight: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            da_weight: 1.0,
            beta: 1.0,
            gamma: 1.0,
            epsilon: DEFAULT_EPSILON,
            margin: DEFAULT_MARGIN,
        }
    }
}

impl LossWeights {
    /// Maps the two search ratios onto the objective:
    /// `r * L_da + (1 - r) * (s * CE_s + (1 - s) * CE_t)`.
    pub fn from_ratios(da_ce_ratio: f64, source_target_ratio: f64) -> Self {
        let (r, s) = (da_ce_ratio, source_target_ratio);
        Self {
            da_weight: r,
            beta: (1.0 - r) * s,
            gamma: (1.0 - r) * (1.0 - s),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.da_weight, self.beta, self.gamma, self.epsilon, self.margin]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("loss weights"));
        }
        if self.da_weight < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::InvalidInput("loss weights must be nonnegative".into()));
        }
        if self.epsilon <= 0.0 || self.margin <= 0.0 {
            return Err(Error::InvalidInput("epsilon and margin must be positive".into()));
        }
        Ok(())
    }
}

/// How pairwise distances between embeddings are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    Euclidean,
    SquaredEuclidean,
}

impl DistanceKind {
    /// Distance for the squared Euclidean distance `sq`.
    pub fn of(self, sq: f64) -> f64 {
        match self {
            Self::Euclidean => sq.sqrt(),
            Self::SquaredEuclidean => sq,
        }
    }

    /// Derivative of the distance with respect to the first point, as a
    /// multiple of the difference vector `a - b`.
    fn grad_scale(self, sq: f64) -> f64 {
        match self {
            // subgradient 0 at coincident points
            Self::Euclidean if sq == 0.0 => 0.0,
            Self::Euclidean => 1.0 / sq.sqrt(),
            Self::SquaredEuclidean => 2.0,
        }
    }
}

fn check_finite(m: &ArrayView2<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_graphs(phi: &ArrayView2<f64>, l: &LaplacianMatrix, b: &LaplacianMatrix) -> Result<()> {
    if l.len() != phi.ncols() || b.len() != phi.ncols() {
        return Err(shape_mismatch(
            "trace ratio",
            phi.ncols(),
            (l.len(), b.len()),
        ));
    }
    check_finite(phi, "embedding")
}

fn trace_ratio_parts(
    phi: &ArrayView2<f64>,
    l: &LaplacianMatrix,
    b: &LaplacianMatrix,
    epsilon: f64,
) -> Result<(f64, f64)> {
    check_graphs(phi, l, b)?;
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let num = trace_quadratic(phi.view(), l.as_array())?;
    let den = trace_quadratic(phi.view(), b.as_array())? + epsilon;
    if den == 0.0 {
        return Err(Error::InvalidInput(
            "trace-ratio denominator is zero; use epsilon > 0".into(),
        ));
    }
    Ok((num, den))
}

/// `Tr(Phi L Phi^T) / (Tr(Phi B Phi^T) + epsilon)`.
pub fn dage_loss(
    phi: ArrayView2<f64>,
    l: &LaplacianMatrix,
    b: &LaplacianMatrix,
    epsilon: f64,
) -> Result<LossValue> {
    let (num, den) = trace_ratio_parts(&phi, l, b, epsilon)?;
    let value = num / den;
    if !value.is_finite() {
        return Err(Error::NonFinite("dage loss"));
    }
    Ok(LossValue::new(value).with("numerator", num).with("denominator", den))
}

/// Gradient of [`dage_loss`] with respect to every entry of `Phi`:
/// `[Phi (L + L^T) den - num Phi (B + B^T)] / den^2`.
pub fn dage_loss_grad(
    phi: ArrayView2<f64>,
    l: &LaplacianMatrix,
    b: &LaplacianMatrix,
    epsilon: f64,
) -> Result<Array2<f64>> {
    let (num, den) = trace_ratio_parts(&phi, l, b, epsilon)?;
    let (l, b) = (l.as_array(), b.as_array());
    let l_sym = l + &l.t();
    let b_sym = b + &b.t();
    let grad = (phi.dot(&l_sym) * den - phi.dot(&b_sym) * num) / (den * den);
    Ok(grad)
}

fn check_pair_inputs(
    phi_s: &ArrayView2<f64>,
    phi_t: &ArrayView2<f64>,
    labels_s: &[usize],
    labels_t: &[usize],
) -> Result<()> {
    if phi_s.ncols() == 0 || phi_t.ncols() == 0 {
        return Err(Error::InvalidInput("empty source or target batch".into()));
    }
    if phi_s.nrows() != phi_t.nrows() {
        return Err(shape_mismatch("embedding dimension", phi_s.nrows(), phi_t.nrows()));
    }
    if labels_s.len() != phi_s.ncols() || labels_t.len() != phi_t.ncols() {
        return Err(shape_mismatch(
            "labels vs embeddings",
            (phi_s.ncols(), phi_t.ncols()),
            (labels_s.len(), labels_t.len()),
        ));
    }
    check_finite(phi_s, "source embedding")?;
    check_finite(phi_t, "target embedding")
}

fn sq_dist(phi_s: &ArrayView2<f64>, i: usize, phi_t: &ArrayView2<f64>, j: usize) -> f64 {
    phi_s
        .column(i)
        .iter()
        .zip(phi_t.column(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Contrastive semantic alignment over every source-target pair, with the
/// Euclidean distance.
pub fn csa_loss(
    phi_s: ArrayView2<f64>,
    phi_t: ArrayView2<f64>,
    labels_s: &[usize],
    labels_t: &[usize],
    margin: f64,
) -> Result<LossValue> {
    csa_loss_with(phi_s, phi_t, labels_s, labels_t, margin, DistanceKind::Euclidean)
}

pub fn csa_loss_with(
    phi_s: ArrayView2<f64>,
    phi_t: ArrayView2<f64>,
    labels_s: &[usize],
    labels_t: &[usize],
    margin: f64,
    distance: DistanceKind,
) -> Result<LossValue> {
    Ok(csa_eval(phi_s, phi_t, labels_s, labels_t, margin, distance, false)?.0)
}

/// Gradients of [`csa_loss_with`] with respect to source and target embeddings.
pub fn csa_loss_grad(
    phi_s: ArrayView2<f64>,
    phi_t: ArrayView2<f64>,
    labels_s: &[usize],
    labels_t: &[usize],
    margin: f64,
    distance: DistanceKind,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (_, grads) = csa_eval(phi_s, phi_t, labels_s, labels_t, margin, distance, true)?;
    Ok(grads.expect("gradients requested"))
}

type PairGrads = Option<(Array2<f64>, Array2<f64>)>;

fn csa_eval(
    phi_s: ArrayView2<f64>,
    phi_t: ArrayView2<f64>,
    labels_s: &[usize],
    labels_t: &[usize],
    margin: f64,
    distance: DistanceKind,
    want_grad: bool,
) -> Result<(LossValue, PairGrads)> {
    check_pair_inputs(&phi_s, &phi_t, labels_s, labels_t)?;
    if !(margin > 0.0) {
        return Err(Error::InvalidInput(format!("margin must be > 0, got {margin}")));
    }
    let mut grads = want_grad.then(|| (Array2::zeros(phi_s.raw_dim()), Array2::zeros(phi_t.raw_dim())));
    let (mut pull, mut push) = (0.0, 0.0);
    for (i, &ys) in labels_s.iter().enumerate() {
        for (j, &yt) in labels_t.iter().enumerate() {
            let sq = sq_dist(&phi_s, i, &phi_t, j);
            let d = distance.of(sq);
            // dloss/dd
            let slope = if ys == yt {
                pull += 0.5 * d * d;
                d
            } else if d < margin {
                push += 0.5 * (margin - d) * (margin - d);
                -(margin - d)
            } else {
                continue;
            };
            if let Some((gs, gt)) = grads.as_mut() {
                let scale = slope * distance.grad_scale(sq);
                let diff = &phi_s.column(i) - &phi_t.column(j);
                gs.column_mut(i).scaled_add(scale, &diff);
                gt.column_mut(j).scaled_add(-scale, &diff);
            }
        }
    }
    let value = LossValue::new(pull + push).with("same_class", pull).with("different_class", push);
    Ok((value, grads))
}

/// CSA expressed as a trace difference over the two-domain batch
/// `[phi_s | phi_t]`.
///
/// The loss equals `0.5 * [pairwise(W) - pairwise(W_p)] + constant`, where
/// the pairwise sums run over both orderings. Per pair with squared
/// embedding distance `q` and distance `d`:
/// * same class: `W = d^2 / (2q)`
/// * different class with `d < m`: `W = d^2 / (2q)`, `W_p = m d / q`, and
///   `m^2 / 2` goes into the constant
///
/// For the Euclidean distance these are `W = 1/2` and `W_p = m / d`: the
/// push-away part of the hinge is the data-dependent penalty graph.
#[derive(Debug, Clone)]
pub struct CsaGraphForm {
    pub intrinsic: WeightMatrix,
    pub penalty: WeightMatrix,
    pub constant: f64,
}

impl CsaGraphForm {
    pub fn value(&self, phi: ArrayView2<f64>) -> Result<f64> {
        let pull = crate::graph::pairwise_quadratic(phi.view(), &self.intrinsic)?;
        let push = crate::graph::pairwise_quadratic(phi, &self.penalty)?;
        Ok(0.5 * (pull - push) + self.constant)
    }
}

pub fn csa_as_graph(
    phi_s: ArrayView2<f64>,
    phi_t: ArrayView2<f64>,
    labels_s: &[usize],
    labels_t: &[usize],
    margin: f64,
    distance: DistanceKind,
) -> Result<CsaGraphForm> {
    check_pair_inputs(&phi_s, &phi_t, labels_s, labels_t)?;
    if !(margin > 0.0) {
        return Err(Error::InvalidInput(format!("margin must be > 0, got {margin}")));
    }
    let ns = phi_s.ncols();
    let n = ns + phi_t.ncols();
    let mut w = Array2::zeros((n, n));
    let mut wp = Array2::zeros((n, n));
    let mut constant = 0.0;
    for (i, &ys) in labels_s.iter().enumerate() {
        for (j, &yt) in labels_t.iter().enumerate() {
            let q = sq_dist(&phi_s, i, &phi_t, j);
            let d = distance.of(q);
            let active = ys == yt || d < margin;
            if !active {
                continue;
            }
            if ys != yt {
                constant += 0.5 * margin * margin;
            }
            if q == 0.0 {
                continue;
            }
            let pull = 0.5 * d * d / q;
            w[[i, ns + j]] = pull;
            w[[ns + j, i]] = pull;
            if ys != yt {
                let push = margin * d / q;
                wp[[i, ns + j]] = push;
                wp[[ns + j, i]] = push;
            }
        }
    }
    Ok(CsaGraphForm {
        intrinsic: WeightMatrix::from_array_unchecked(w),
        penalty: WeightMatrix::from_array_unchecked(wp),
        constant,
    })
}

/// d-SNE relaxation with the squared Euclidean distance.
pub fn dsne_loss(
    phi_s: ArrayView2<f64>,
    phi_t: ArrayView2<f64>,
    labels_s: &[usize],
    labels_t: &[usize],
) -> Result<LossValue> {
    Ok(dsne_eval(phi_s, phi_t, labels_s, labels_t, DistanceKind::SquaredEuclidean, None, false)?.0)
}

/// For every target sample: the largest same-class source distance minus
/// the smallest different-class source distance. Targets without both a
/// same-class and a different-class source are skipped and counted in the
/// `skipped` component.
pub fn dsne_loss_with(
    phi_s: ArrayView2<f64>,
    phi_t: ArrayView2<f64>,
    labels_s: &[usize],
    labels_t: &[usize],
    distance: DistanceKind,
) -> Result<LossValue> {
    Ok(dsne_eval(phi_s, phi_t, labels_s, labels_t, distance, None, false)?.0)
}

pub fn dsne_loss_grad(
    phi_s: ArrayView2<f64>,
    phi_t: ArrayView2<f64>,
    labels_s: &[usize],
    labels_t: &[usize],
    distance: DistanceKind,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (_, grads) = dsne_eval(phi_s, phi_t, labels_s, labels_t, distance, None, true)?;
    Ok(grads.expect("gradients requested"))
}

/// [`dsne_loss_with`] with every target term clipped as `max(0, term + margin)`,
/// which bounds the loss from below.
pub fn dsne_hinge_loss(
    phi_s: ArrayView2<f64>,
    phi_t: ArrayView2<f64>,
    labels_s: &[usize],
    labels_t: &[usize],
    distance: DistanceKind,
    margin: f64,
) -> Result<LossValue> {
    Ok(dsne_eval(phi_s, phi_t, labels_s, labels_t, distance, Some(margin), false)?.0)
}

pub fn dsne_hinge_loss_grad(
    phi_s: ArrayView2<f64>,
    phi_t: ArrayView2<f64>,
    labels_s: &[usize],
    labels_t: &[usize],
    distance: DistanceKind,
    margin: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (_, grads) = dsne_eval(phi_s, phi_t, labels_s, labels_t, distance, Some(margin), true)?;
    Ok(grads.expect("gradients requested"))
}

fn dsne_eval(
    phi_s: ArrayView2<f64>,
    phi_t: ArrayView2<f64>,
    labels_s: &[usize],
    labels_t: &[usize],
    distance: DistanceKind,
    hinge: Option<f64>,
    want_grad: bool,
) -> Result<(LossValue, PairGrads)> {
    check_pair_inputs(&phi_s, &phi_t, labels_s, labels_t)?;
    let mut grads = want_grad.then(|| (Array2::zeros(phi_s.raw_dim()), Array2::zeros(phi_t.raw_dim())));
    let mut total = 0.0;
    let mut skipped = 0usize;
    for (j, &yt) in labels_t.iter().enumerate() {
        // (index, squared distance, distance); first index wins ties
        let mut farthest_same: Option<(usize, f64, f64)> = None;
        let mut nearest_other: Option<(usize, f64, f64)> = None;
        for (i, &ys) in labels_s.iter().enumerate() {
            let q = sq_dist(&phi_s, i, &phi_t, j);
            let d = distance.of(q);
            if ys == yt {
                if farthest_same.is_none_or(|(_, _, best)| d > best) {
                    farthest_same = Some((i, q, d));
                }
            } else if nearest_other.is_none_or(|(_, _, best)| d < best) {
                nearest_other = Some((i, q, d));
            }
        }
        let (Some(same), Some(other)) = (farthest_same, nearest_other) else {
            skipped += 1;
            continue;
        };
        let term = same.2 - other.2;
        let term = match hinge {
            None => term,
            Some(m) if term + m > 0.0 => term + m,
            Some(_) => continue,
        };
        total += term;
        if let Some((gs, gt)) = grads.as_mut() {
            for ((i, q, _), sign) in [(same, 1.0), (other, -1.0)] {
                let scale = sign * distance.grad_scale(q);
                let diff = &phi_s.column(i) - &phi_t.column(j);
                gs.column_mut(i).scaled_add(scale, &diff);
                gt.column_mut(j).scaled_add(-scale, &diff);
            }
        }
    }
    let value = LossValue::new(total).with("skipped", skipped as f64);
    Ok((value, grads))
}

fn check_prediction_shapes(y_true: &ArrayView2<f64>, y_pred: &ArrayView2<f64>) -> Result<()> {
    if y_true.dim() != y_pred.dim() {
        return Err(shape_mismatch("cross entropy", y_true.dim(), y_pred.dim()));
    }
    check_finite(y_pred, "predictions")
}

/// `-sum_i sum_k y_ik ln(p_ik)` with probabilities clamped to
/// `[PROB_FLOOR, 1]`. Rows are samples.
pub fn cross_entropy(y_true: ArrayView2<f64>, y_pred: ArrayView2<f64>) -> Result<LossValue> {
    check_prediction_shapes(&y_true, &y_pred)?;
    let value = y_true
        .iter()
        .zip(y_pred.iter())
        .filter(|(y, _)| **y != 0.0)
        .map(|(y, p)| -y * p.clamp(PROB_FLOOR, 1.0).ln())
        .sum();
    Ok(LossValue::new(value))
}

/// Gradient of [`cross_entropy`] with respect to the predicted probabilities.
pub fn cross_entropy_grad(y_true: ArrayView2<f64>, y_pred: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_prediction_shapes(&y_true, &y_pred)?;
    let mut grad = Array2::zeros(y_pred.raw_dim());
    ndarray::Zip::from(&mut grad)
        .and(&y_true)
        .and(&y_pred)
        .for_each(|g, &y, &p| {
            if y != 0.0 {
                *g = -y / p.clamp(PROB_FLOOR, 1.0);
            }
        });
    Ok(grad)
}

/// Rows of the identity for each label.
pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut m = Array2::zeros((labels.len(), classes));
    for (mut row, &y) in m.axis_iter_mut(Axis(0)).zip(labels) {
        row[y] = 1.0;
    }
    m
}

/// `a * L_da + beta * CE_s + gamma * CE_t`.
pub fn total_objective(
    da: &LossValue,
    ce_source: &LossValue,
    ce_target: &LossValue,
    weights: &LossWeights,
) -> LossValue {
    let value =
        weights.da_weight * da.value + weights.beta * ce_source.value + weights.gamma * ce_target.value;
    LossValue::new(value)
        .with("da", da.value)
        .with("ce_source", ce_source.value)
        .with("ce_target", ce_target.value)
}
