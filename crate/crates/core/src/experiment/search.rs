//! Random hyper-parameter search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

use super::train::{train, DataPool};
use super::{ExperimentConfig, Method};

pub const DEFAULT_BUDGET: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prior {
    Uniform,
    LogUniform,
    /// `1 - x` with `x` log-uniform in `[1 - upper, 1 - lower]`.
    InverseLogUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lower: f64,
    pub upper: f64,
    pub prior: Prior,
}

impl Range {
    pub const fn new(lower: f64, upper: f64, prior: Prior) -> Self {
        Self { lower, upper, prior }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = self.lower < self.upper
            && match self.prior {
                Prior::Uniform => self.lower.is_finite() && self.upper.is_finite(),
                Prior::LogUniform => self.lower > 0.0 && self.upper.is_finite(),
                Prior::InverseLogUniform => self.upper < 1.0 && self.lower.is_finite(),
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid range for {name}: {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let log_uniform = |rng: &mut R, lo: f64, hi: f64| -> f64 {
            (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
        };
        match self.prior {
            Prior::Uniform => self.lower + rng.random::<f64>() * (self.upper - self.lower),
            Prior::LogUniform => log_uniform(rng, self.lower, self.upper),
            Prior::InverseLogUniform => 1.0 - log_uniform(rng, 1.0 - self.upper, 1.0 - self.lower),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub learning_rate: Range,
    pub lr_decay: Range,
    pub momentum: Range,
    pub dropout: Range,
    pub l2: Range,
    pub da_ce_ratio: Range,
    pub source_target_ce_ratio: Range,
    /// Sampled and reported, but the networks here have no pretrained
    /// layers to unfreeze.
    pub unfrozen_layers: Range,
    /// Only sampled for `ccsa`.
    pub margin: Range,
}

impl Default for SearchSpace {
    fn default() -> Self {
        use Prior::*;
        Self {
            learning_rate: Range::new(1e-8, 1e-3, LogUniform),
            lr_decay: Range::new(1e-7, 1e-2, LogUniform),
            momentum: Range::new(0.5, 0.99, InverseLogUniform),
            dropout: Range::new(0.1, 0.8, Uniform),
            l2: Range::new(1e-7, 1e-3, LogUniform),
            da_ce_ratio: Range::new(0.1, 0.99, Uniform),
            source_target_ce_ratio: Range::new(0.0, 1.0, Uniform),
            unfrozen_layers: Range::new(0.0, 16.0, Uniform),
            margin: Range::new(0.1, 10.0, LogUniform),
        }
    }
}

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub dropout: f64,
    pub l2: f64,
    pub da_ce_ratio: f64,
    pub source_target_ce_ratio: f64,
    pub unfrozen_layers: usize,
    pub margin: Option<f64>,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        self.learning_rate.validate("learning_rate")?;
        self.lr_decay.validate("lr_decay")?;
        self.momentum.validate("momentum")?;
        self.dropout.validate("dropout")?;
        self.l2.validate("l2")?;
        self.da_ce_ratio.validate("da_ce_ratio")?;
        self.source_target_ce_ratio.validate("source_target_ce_ratio")?;
        self.unfrozen_layers.validate("unfrozen_layers")?;
        self.margin.validate("margin")
    }

    pub fn sample<R: Rng + ?Sized>(&self, method: Method, rng: &mut R) -> Sample {
        let unfrozen = self.unfrozen_layers.sample(rng).floor() as usize;
        Sample {
            learning_rate: self.learning_rate.sample(rng),
            lr_decay: self.lr_decay.sample(rng),
            momentum: self.momentum.sample(rng),
            dropout: self.dropout.sample(rng),
            l2: self.l2.sample(rng),
            da_ce_ratio: self.da_ce_ratio.sample(rng),
            source_target_ce_ratio: self.source_target_ce_ratio.sample(rng),
            unfrozen_layers: unfrozen.min(self.unfrozen_layers.upper as usize),
            margin: (method == Method::Ccsa).then(|| self.margin.sample(rng)),
        }
    }
}

impl Sample {
    /// `base` with this sample's hyper-parameters.
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.optimizer.learning_rate = self.learning_rate;
        c.optimizer.lr_decay = self.lr_decay;
        c.optimizer.momentum = self.momentum;
        c.optimizer.keep_prob = 1.0 - self.dropout;
        c.optimizer.l2 = self.l2;
        c.loss = LossWeights {
            epsilon: base.loss.epsilon,
            margin: self.margin.unwrap_or(base.loss.margin),
            ..LossWeights::from_ratios(self.da_ce_ratio, self.source_target_ce_ratio)
        };
        c
    }
}

/// One leaderboard line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub rank: usize,
    pub trial: usize,
    pub params: Sample,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    /// Sorted by validation accuracy, best first; failed trials last.
    pub leaderboard: Vec<TrialResult>,
    pub best: ExperimentConfig,
}

/// Trains `budget` random configurations derived from `base` and ranks
/// them by mean validation accuracy. Trials are merged in trial order, so
/// the result does not depend on scheduling.
pub fn search(base: &ExperimentConfig, space: &SearchSpace, budget: usize, pool: &DataPool) -> Result<SearchResult> {
    if budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    let samples: Vec<Sample> = (0..budget).map(|_| space.sample(base.method, &mut rng)).collect();
    let trials: Vec<(TrialResult, ExperimentConfig)> = samples
        .par_iter()
        .enumerate()
        .map(|(trial, sample)| {
            let config = sample.apply(base);
            let outcome = config.validate().and_then(|_| train(&config, pool));
            let result = match outcome {
                Ok(s) if s.summary.failures < s.runs.len() => TrialResult {
                    rank: 0,
                    trial,
                    params: *sample,
                    val_accuracy: Some(s.summary.mean_val_accuracy),
                    test_accuracy: Some(s.summary.mean_test_accuracy),
                    failure: None,
                },
                Ok(s) => TrialResult {
                    rank: 0,
                    trial,
                    params: *sample,
                    val_accuracy: None,
                    test_accuracy: None,
                    failure: s.runs.iter().find_map(|r| r.failure.clone()),
                },
                Err(e) => TrialResult {
                    rank: 0,
                    trial,
                    params: *sample,
                    val_accuracy: None,
                    test_accuracy: None,
                    failure: Some(e.to_string()),
                },
            };
            (result, config)
        })
        .collect();
    let mut order: Vec<usize> = (0..trials.len()).collect();
    let key = |i: usize| trials[i].0.val_accuracy.unwrap_or(f64::NEG_INFINITY);
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    if trials[order[0]].0.val_accuracy.is_none() {
        let reason = trials[0].0.failure.clone().unwrap_or_default();
        return Err(Error::InvalidInput(format!("all {budget} search trials failed; first: {reason}")));
    }
    let best = trials[order[0]].1.clone();
    let leaderboard = order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| TrialResult { rank: rank + 1, ..trials[i].0.clone() })
        .collect();
    Ok(SearchResult { leaderboard, best })
}
