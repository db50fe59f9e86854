//! Gaussian class blobs and a rotated, translated, re-scaled copy of them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DomainTag;

use super::{Dataset, LabeledSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    /// Rotation (radians) of the target in the plane of the first two axes.
    pub rotation: f64,
    /// Target translation; missing trailing entries are zero.
    pub translation: Vec<f64>,
    /// Target noise standard deviation relative to the source.
    pub noise_scale: f64,
    /// Distance of the class means from the origin.
    pub separation: f64,
    /// Per-axis standard deviation of the source blobs; missing trailing
    /// entries repeat the last value.
    pub spread: Vec<f64>,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            rotation: 0.0,
            translation: Vec::new(),
            noise_scale: 1.0,
            separation: 3.0,
            spread: vec![1.0],
        }
    }
}

impl ShiftConfig {
    pub fn is_identity(&self) -> bool {
        self.rotation == 0.0 && self.translation.iter().all(|t| *t == 0.0) && self.noise_scale == 1.0
    }

    fn spread_at(&self, axis: usize) -> f64 {
        self.spread.get(axis).or(self.spread.last()).copied().unwrap_or(1.0)
    }

    /// Rotation followed by translation.
    pub fn transform(&self, x: &mut [f64]) {
        if x.len() >= 2 {
            let (s, c) = self.rotation.sin_cos();
            let (a, b) = (x[0], x[1]);
            x[0] = c * a - s * b;
            x[1] = s * a + c * b;
        }
        for (v, t) in x.iter_mut().zip(&self.translation) {
            *v += t;
        }
    }
}

/// Source mean of class `k`: evenly spaced on a circle in the first two
/// axes (on a line when `dim == 1`).
pub fn class_mean(k: usize, classes: usize, dim: usize, separation: f64) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    if dim == 1 {
        m[0] = separation * (k as f64 - (classes - 1) as f64 / 2.0);
    } else {
        let angle = std::f64::consts::TAU * k as f64 / classes as f64;
        m[0] = separation * angle.cos();
        m[1] = separation * angle.sin();
    }
    m
}

/// `n_per_class` source and target samples per class. Target samples are
/// drawn like source samples with noise scaled by `noise_scale`, then
/// rotated and translated.
pub fn synth_shift(
    n_per_class: usize,
    classes: usize,
    dim: usize,
    shift: &ShiftConfig,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 || dim == 0 || n_per_class == 0 {
        return Err(Error::InvalidInput(format!(
            "synthetic data needs classes >= 2, dim >= 1, n >= 1 (got {classes}, {dim}, {n_per_class})"
        )));
    }
    if shift.translation.len() > dim {
        return Err(Error::InvalidInput("translation longer than the dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |domain: DomainTag, rng: &mut ChaCha8Rng| {
        let scale = if domain == DomainTag::Target { shift.noise_scale } else { 1.0 };
        let mut samples = Vec::with_capacity(n_per_class * classes);
        for k in 0..classes {
            let mean = class_mean(k, classes, dim, shift.separation);
            for _ in 0..n_per_class {
                let mut x: Vec<f64> = mean
                    .iter()
                    .enumerate()
                    .map(|(axis, m)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + scale * shift.spread_at(axis) * z
                    })
                    .collect();
                if domain == DomainTag::Target {
                    shift.transform(&mut x);
                }
                samples.push(LabeledSample { features: x, label: k, domain });
            }
        }
        samples
    };
    let source = draw(DomainTag::Source, &mut rng);
    let target = draw(DomainTag::Target, &mut rng);
    Ok((
        Dataset::new("synthetic-source", [dim, 1, 1], classes, source)?,
        Dataset::new("synthetic-target", [dim, 1, 1], classes, target)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let shift = ShiftConfig { rotation: 0.3, ..Default::default() };
        let a = synth_shift(5, 3, 4, &shift, 11).unwrap();
        let b = synth_shift(5, 3, 4, &shift, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, synth_shift(5, 3, 4, &shift, 12).unwrap().0);
    }

    #[test]
    fn translation_moves_means() {
        let n = 2000;
        let shift = ShiftConfig { translation: vec![10.0, 0.0, 0.0], ..Default::default() };
        let (src, tgt) = synth_shift(n, 2, 3, &shift, 5).unwrap();
        for k in 0..2 {
            for axis in 0..3 {
                let mean = |ds: &Dataset| {
                    ds.samples.iter().filter(|s| s.label == k).map(|s| s.features[axis]).sum::<f64>()
                        / n as f64
                };
                let expected = if axis == 0 { 10.0 } else { 0.0 };
                // difference of two sample means, each with std 1/sqrt(n)
                let bound = 4.0 * (2.0f64).sqrt() / (n as f64).sqrt();
                assert!((mean(&tgt) - mean(&src) - expected).abs() < bound);
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(synth_shift(5, 1, 2, &ShiftConfig::default(), 0).is_err());
        let long = ShiftConfig { translation: vec![0.0; 3], ..Default::default() };
        assert!(synth_shift(5, 2, 2, &long, 0).is_err());
    }
}
