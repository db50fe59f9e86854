use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSpec, SplitSpec};
use crate::error::{Error, Result};
use crate::graph::GraphOptions;
use crate::losses::{DistanceKind, LossWeights};
use crate::nn::{Dims, NetworkSpec, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DageLda,
    Ccsa,
    Dsne,
    /// Cross-entropy on the few target training samples only.
    FtTarget,
    /// Cross-entropy on source samples only.
    SourceOnly,
}

impl Method {
    pub fn is_domain_adaptation(self) -> bool {
        matches!(self, Self::DageLda | Self::Ccsa | Self::Dsne)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::DageLda => "dage-lda",
            Self::Ccsa => "ccsa",
            Self::Dsne => "dsne",
            Self::FtTarget => "ft-target",
            Self::SourceOnly => "source-only",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Network architecture, either a preset sized from the data or explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NetworkChoice {
    Lenet,
    Mlp { hidden: Vec<usize> },
    Linear { dim: usize },
    Custom { spec: NetworkSpec },
}

impl Default for NetworkChoice {
    fn default() -> Self {
        Self::Mlp { hidden: vec![32, 16] }
    }
}

impl NetworkChoice {
    pub fn build(&self, input: Dims, classes: usize, keep: f64) -> Result<NetworkSpec> {
        let flat = input.iter().product();
        let spec = match self {
            Self::Lenet => NetworkSpec::lenet(input, classes, keep),
            Self::Mlp { hidden } => NetworkSpec::mlp(flat, hidden, classes),
            Self::Linear { dim } => NetworkSpec::linear(flat, *dim, classes),
            Self::Custom { spec } => spec.clone().with_dropout_keep(keep),
        };
        if spec.input != input && spec.input != [flat, 1, 1] {
            return Err(Error::Config(format!(
                "network input {:?} does not match data {input:?}",
                spec.input
            )));
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Everything that defines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub network: NetworkChoice,
    pub optimizer: OptimizerConfig,
    pub loss: LossWeights,
    pub graph: GraphOptions,
    pub csa_distance: DistanceKind,
    pub dsne_distance: DistanceKind,
    /// Hinge margin for d-SNE training; `None` minimizes the unbounded
    /// relaxation directly.
    pub dsne_margin: Option<f64>,
    pub epochs: usize,
    /// Pairs per step: this many source and this many target samples.
    pub batch_size: usize,
    /// Upper bound on steps per epoch; `None` runs a full pass over the pairs.
    pub steps_per_epoch: Option<usize>,
    /// Maximum negative:positive pair ratio; `None` keeps all negatives.
    pub pair_ratio: Option<f64>,
    /// Fraction of the target training split held out for validation.
    pub validation_fraction: f64,
    /// Early stopping patience in epochs; `None` trains all epochs.
    pub patience: Option<usize>,
    pub seed: u64,
    pub repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::DageLda,
            dataset: DatasetSpec::Synthetic {
                n_per_class: 200,
                classes: 3,
                dim: 2,
                shift: Default::default(),
                seed: 0,
            },
            split: SplitSpec::default(),
            network: NetworkChoice::default(),
            optimizer: OptimizerConfig::default(),
            loss: LossWeights::default(),
            graph: GraphOptions::default(),
            csa_distance: DistanceKind::Euclidean,
            dsne_distance: DistanceKind::SquaredEuclidean,
            dsne_margin: Some(1.0),
            epochs: 10,
            batch_size: 16,
            steps_per_epoch: None,
            pair_ratio: Some(3.0),
            validation_fraction: 0.1,
            patience: None,
            seed: 0,
            repeats: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        if let Some(r) = self.pair_ratio {
            if !(r > 0.0) {
                return Err(Error::Config("pair_ratio must be positive".into()));
            }
        }
        if self.method == Method::Ccsa && !(self.loss.margin > 0.0) {
            return Err(Error::Config("ccsa requires a positive margin".into()));
        }
        if let Some(m) = self.dsne_margin {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::Config("dsne_margin must be finite and nonnegative".into()));
            }
        }
        if self.split.source_per_class == 0 || self.split.target_per_class == 0 {
            return Err(Error::Config("per-class counts must be at least 1".into()));
        }
        self.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}
