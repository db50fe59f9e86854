//! Datasets, IDX files, synthetic domain shift and the sampling and pairing
//! protocol for few-shot domain adaptation.

mod idx;
mod manifest;
mod protocol;
mod resize;
mod synth;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DomainTag;
use crate::nn::Dims;

pub use idx::{load_idx, read_idx, write_idx_dataset, IdxArray, IdxData};
pub use manifest::{sha256_hex, Manifest, ManifestEntry};
pub use protocol::{
    make_pairs, sample_protocol, split_validation, stratified_batches, Pair, PairBatch,
    PairBatcher, SplitSpec,
};
pub use resize::{harmonize, resize_bilinear, HarmonizeMode};
pub use synth::{synth_shift, ShiftConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
    pub domain: DomainTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Shape of every sample, `[channels, height, width]`.
    pub dims: Dims,
    pub classes: usize,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, dims: Dims, classes: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        let size = dims.iter().product::<usize>();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != size {
                return Err(Error::InvalidInput(format!(
                    "sample {i} has {} features, expected {size}",
                    s.features.len()
                )));
            }
            if s.label >= classes {
                return Err(Error::InvalidInput(format!(
                    "sample {i} has label {} outside 0..{classes}",
                    s.label
                )));
            }
        }
        Ok(Self { name: name.into(), dims, classes, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_size(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// `N x feature_size` matrix of the given samples, one per row.
    pub fn matrix(&self, indices: &[usize]) -> Array2<f64> {
        let size = self.feature_size();
        let mut m = Array2::zeros((indices.len(), size));
        for (mut row, &i) in m.rows_mut().into_iter().zip(indices) {
            row.assign(&ndarray::ArrayView1::from(&self.samples[i].features));
        }
        m
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            dims: self.dims,
            classes: self.classes,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn with_domain(mut self, domain: DomainTag) -> Self {
        for s in &mut self.samples {
            s.domain = domain;
        }
        self
    }
}

/// Where a pair of datasets comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian blobs and a transformed copy.
    Synthetic {
        n_per_class: usize,
        classes: usize,
        dim: usize,
        #[serde(default)]
        shift: ShiftConfig,
        #[serde(default)]
        seed: u64,
    },
    /// Two manifest entries under the dataset root.
    Idx {
        source: String,
        target: String,
        #[serde(default)]
        harmonize: HarmonizeMode,
    },
}
