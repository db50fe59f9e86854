use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Per-sample activation shape `[channels, height, width]`. Flat vectors
/// are `[n, 1, 1]`.
pub type Dims = [usize; 3];

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    /// Valid (unpadded) 2D convolution.
    Conv {
        kernel: [usize; 2],
        out_channels: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    /// Non-overlapping max pooling; trailing rows/columns that do not fill
    /// a window are dropped.
    MaxPool { window: usize },
    /// Fully connected; flattens its input.
    Dense { out: usize },
    Relu,
    /// Inverted dropout, active only in training passes.
    Dropout { keep: f64 },
    Softmax,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, Self::Conv { .. } | Self::Dense { .. })
    }

    fn output_dims(&self, input: Dims) -> Result<Dims> {
        let [c, h, w] = input;
        match *self {
            Self::Conv { kernel: [kh, kw], out_channels, stride } => {
                if kh == 0 || kw == 0 || out_channels == 0 || stride == 0 {
                    return Err(Error::Config(format!("degenerate convolution {self:?}")));
                }
                if kh > h || kw > w {
                    return Err(Error::Config(format!(
                        "kernel {kh}x{kw} larger than input {h}x{w}"
                    )));
                }
                Ok([out_channels, (h - kh) / stride + 1, (w - kw) / stride + 1])
            }
            Self::MaxPool { window } => {
                if window == 0 || window > h || window > w {
                    return Err(Error::Config(format!("pool window {window} on {h}x{w}")));
                }
                Ok([c, h / window, w / window])
            }
            Self::Dense { out } => {
                if out == 0 {
                    return Err(Error::Config("dense layer with zero outputs".into()));
                }
                Ok([out, 1, 1])
            }
            Self::Dropout { keep } => {
                if !(keep > 0.0 && keep <= 1.0) {
                    return Err(Error::Config(format!("dropout keep {keep} not in (0, 1]")));
                }
                Ok(input)
            }
            Self::Relu | Self::Softmax => Ok(input),
        }
    }
}

/// Layer list of the feature extractor and the classifier. The DA loss
/// acts on the output of the last feature layer; moving layers between
/// the two lists selects which representation is adapted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input: Dims,
    pub features: Vec<LayerSpec>,
    pub classifier: Vec<LayerSpec>,
    pub classes: usize,
}

/// Input and output dims of every layer, features first.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub features: Vec<(Dims, Dims)>,
    pub classifier: Vec<(Dims, Dims)>,
}

pub(crate) fn size(d: Dims) -> usize {
    d[0] * d[1] * d[2]
}

impl NetworkSpec {
    /// Two 5x5 convolutions with 6 and 16 filters, each followed by ReLU and
    /// 2x2 max pooling, then dense layers of 120 and 84 units.
    pub fn lenet(input: Dims, classes: usize, keep: f64) -> Self {
        use LayerSpec::*;
        Self {
            input,
            features: vec![
                Conv { kernel: [5, 5], out_channels: 6, stride: 1 },
                Relu,
                MaxPool { window: 2 },
                Conv { kernel: [5, 5], out_channels: 16, stride: 1 },
                Relu,
                MaxPool { window: 2 },
                Dense { out: 120 },
                Relu,
                Dropout { keep },
                Dense { out: 84 },
                Relu,
            ],
            classifier: vec![Dropout { keep }, Dense { out: classes }, Softmax],
            classes,
        }
    }

    /// ReLU MLP; the last hidden width is the embedding dimension.
    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize) -> Self {
        let mut features = Vec::new();
        for &h in hidden {
            features.push(LayerSpec::Dense { out: h });
            features.push(LayerSpec::Relu);
        }
        Self {
            input: [input_dim, 1, 1],
            features,
            classifier: vec![LayerSpec::Dense { out: classes }, LayerSpec::Softmax],
            classes,
        }
    }

    /// A single linear map `x -> W x + b` as the feature extractor.
    pub fn linear(input_dim: usize, dim: usize, classes: usize) -> Self {
        Self {
            input: [input_dim, 1, 1],
            features: vec![LayerSpec::Dense { out: dim }],
            classifier: vec![LayerSpec::Dense { out: classes }, LayerSpec::Softmax],
            classes,
        }
    }

    /// Replaces the keep probability of every dropout layer.
    pub fn with_dropout_keep(mut self, keep: f64) -> Self {
        for layer in self.features.iter_mut().chain(self.classifier.iter_mut()) {
            if let LayerSpec::Dropout { keep: k } = layer {
                *k = keep;
            }
        }
        self
    }

    pub(crate) fn layout(&self) -> Result<Layout> {
        if size(self.input) == 0 {
            return Err(Error::Config("empty input shape".into()));
        }
        let mut dims = self.input;
        let mut features = Vec::with_capacity(self.features.len());
        for layer in &self.features {
            if matches!(layer, LayerSpec::Softmax) {
                return Err(Error::Config("softmax is only allowed at the end of the classifier".into()));
            }
            let out = layer.output_dims(dims)?;
            features.push((dims, out));
            dims = out;
        }
        if self.features.is_empty() {
            return Err(Error::Config("feature extractor has no layers".into()));
        }
        let mut classifier = Vec::with_capacity(self.classifier.len());
        dims = [size(dims), 1, 1];
        for (i, layer) in self.classifier.iter().enumerate() {
            let last = i + 1 == self.classifier.len();
            if matches!(layer, LayerSpec::Softmax) != last {
                return Err(Error::Config("the classifier must end with exactly one softmax".into()));
            }
            if matches!(layer, LayerSpec::Conv { .. } | LayerSpec::MaxPool { .. }) {
                return Err(Error::Config("the classifier acts on flat embeddings".into()));
            }
            let out = layer.output_dims(dims)?;
            classifier.push((dims, out));
            dims = out;
        }
        if self.classifier.is_empty() {
            return Err(Error::Config("the classifier must end with a softmax".into()));
        }
        if size(dims) != self.classes || self.classes < 2 {
            return Err(Error::Config(format!(
                "classifier outputs {} values for {} classes",
                size(dims),
                self.classes
            )));
        }
        Ok(Layout { features, classifier })
    }

    pub fn validate(&self) -> Result<()> {
        self.layout().map(|_| ())
    }

    pub fn input_size(&self) -> usize {
        size(self.input)
    }

    pub fn embedding_dim(&self) -> Result<usize> {
        let layout = self.layout()?;
        Ok(size(layout.features.last().expect("non-empty").1))
    }

    /// SHA-256 of the canonical JSON encoding, truncated to 64 bits.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_layout() {
        let spec = NetworkSpec::lenet([1, 28, 28], 10, 0.5);
        let layout = spec.layout().unwrap();
        let dims: Vec<Dims> = layout.features.iter().map(|(_, o)| *o).collect();
        assert_eq!(dims[0], [6, 24, 24]);
        assert_eq!(dims[2], [6, 12, 12]);
        assert_eq!(dims[3], [16, 8, 8]);
        assert_eq!(dims[5], [16, 4, 4]);
        assert_eq!(spec.embedding_dim().unwrap(), 84);
    }

    #[test]
    fn rejects_inconsistent_specs() {
        let mut spec = NetworkSpec::mlp(4, &[8], 3);
        spec.classes = 4;
        assert!(spec.validate().is_err());
        let mut spec = NetworkSpec::mlp(4, &[8], 3);
        spec.classifier.pop();
        assert!(spec.validate().is_err());
        let spec = NetworkSpec::lenet([1, 4, 4], 10, 0.5);
        assert!(spec.validate().is_err());
        let spec = NetworkSpec::mlp(4, &[8], 3).with_dropout_keep(0.5);
        assert!(spec.validate().is_ok());
        let bad = NetworkSpec {
            features: vec![LayerSpec::Dense { out: 2 }, LayerSpec::Dropout { keep: 0.0 }],
            ..NetworkSpec::mlp(4, &[8], 3)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_round_trip_and_hash() {
        let spec = NetworkSpec::lenet([1, 28, 28], 10, 0.5);
        let json = serde_json::to_string(&spec).unwrap();
        let back: NetworkSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.hash(), spec.hash());
        assert_ne!(spec.hash(), spec.clone().with_dropout_keep(0.4).hash());
    }
}
