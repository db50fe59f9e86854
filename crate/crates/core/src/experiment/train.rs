//! Training runs: few-shot protocol, Siamese SGD, early stopping, repeats.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{
    harmonize, load_idx, make_pairs, sample_protocol, split_validation, synth_shift, Dataset, DatasetSpec,
    Manifest, PairBatcher,
};
use crate::error::{Error, Result};
use crate::graph::DomainTag;
use crate::nn::{NetRng, NetworkSpec, NetworkState};

use super::eval::{accuracy, evaluate, EvalReport};
use super::metrics::{mean_std, MetricsRecord, RecordKind};
use super::objective::{siamese_objective, ObjectiveOptions, Stream};
use super::{ExperimentConfig, Method};

/// Environment variable naming the directory that holds the manifest.
pub const DATA_DIR_ENV: &str = "DAGE_DATA_DIR";
/// Manifest file name inside the dataset root.
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn data_root_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Full source and target datasets before any sampling.
#[derive(Debug, Clone)]
pub struct DataPool {
    pub source: Dataset,
    pub target: Dataset,
}

impl DataPool {
    pub fn classes(&self) -> usize {
        self.source.classes
    }

    /// The network spec `config` describes for this data.
    pub fn network_spec(&self, config: &ExperimentConfig) -> Result<NetworkSpec> {
        config.network.build(self.source.dims, self.classes(), config.optimizer.keep_prob)
    }
}

/// Generates or loads the datasets named by `spec`. IDX datasets are looked
/// up in `root/manifest.txt`; the target is resized to the source shape.
pub fn load_pool(spec: &DatasetSpec, root: Option<&Path>) -> Result<DataPool> {
    match spec {
        DatasetSpec::Synthetic { n_per_class, classes, dim, shift, seed } => {
            let (source, target) = synth_shift(*n_per_class, *classes, *dim, shift, *seed)
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(DataPool { source, target })
        }
        DatasetSpec::Idx { source, target, harmonize: mode } => {
            let root = root.ok_or_else(|| {
                Error::Config(format!("set {DATA_DIR_ENV} to the directory containing {MANIFEST_FILE}"))
            })?;
            let missing = |e: Error| match e {
                Error::Io(io) => Error::Config(format!("dataset files under {}: {io}", root.display())),
                other => other,
            };
            let manifest = Manifest::load(root.join(MANIFEST_FILE)).map_err(missing)?;
            let load = |name: &str, domain| -> Result<Dataset> {
                let (images, labels) = manifest.get(name)?.resolve(root)?;
                load_idx(images, labels, name, domain)
            };
            let mut source = load(source, DomainTag::Source).map_err(missing)?;
            let mut target = load(target, DomainTag::Target).map_err(missing)?;
            target = harmonize(target, source.dims, *mode)?;
            let classes = source.classes.max(target.classes);
            source.classes = classes;
            target.classes = classes;
            Ok(DataPool { source, target })
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for one named random stream of a run.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix(splitmix(seed) ^ stream)
}

const SOURCE_SAMPLE: u64 = 1;
const TARGET_SAMPLE: u64 = 2;
const VALIDATION: u64 = 3;
const INIT: u64 = 4;
const PAIRS: u64 = 5;
const BATCHES: u64 = 6;
const DROPOUT: u64 = 7;

/// Target test samples, held back until a model has finished training.
/// The samples are only reachable through [`SealedTest::evaluate`]:
///
/// ```compile_fail
/// fn peek(test: &dage::experiment::SealedTest) -> usize {
///     test.0.samples.len()
/// }
/// ```
pub struct SealedTest(Dataset);

/// A network whose training has finished.
pub struct Trained {
    state: NetworkState,
}

impl Trained {
    /// A network restored from disk counts as finished.
    pub fn from_checkpoint(state: NetworkState) -> Self {
        Self { state }
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn into_state(self) -> NetworkState {
        self.state
    }
}

impl SealedTest {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn evaluate(self, model: &Trained) -> Result<EvalReport> {
        evaluate(&model.state, &self.0)
    }
}

/// Training inputs of one repeat.
pub struct RunData {
    pub source: Dataset,
    pub target: Dataset,
    /// Held-out target samples, or the target training set when it is too
    /// small to split.
    pub validation: Dataset,
    pub validation_is_train: bool,
}

/// Samples the few-shot protocol of one repeat. The test split comes back
/// sealed.
pub fn prepare_run(config: &ExperimentConfig, pool: &DataPool, repeat: usize) -> Result<(RunData, SealedTest)> {
    let split_seed = config.split.seed.wrapping_add(repeat as u64);
    let (source, _) = sample_protocol(&pool.source, config.split.source_per_class, derive_seed(split_seed, SOURCE_SAMPLE))?;
    let (target_train, test) =
        sample_protocol(&pool.target, config.split.target_per_class, derive_seed(split_seed, TARGET_SAMPLE))?;
    let (target, validation) =
        split_validation(&target_train, config.validation_fraction, derive_seed(split_seed, VALIDATION));
    let validation_is_train = validation.is_none();
    let validation = validation.unwrap_or_else(|| target.clone());
    Ok((RunData { source, target, validation, validation_is_train }, SealedTest(test)))
}

/// Sample indices of one step for each stream.
struct Step {
    source: Option<Vec<usize>>,
    target: Option<Vec<usize>>,
}

enum Schedule {
    Pairs(PairBatcher),
    Single { len: usize, batch: usize, source: bool, rng: ChaCha8Rng },
}

impl Schedule {
    fn new(config: &ExperimentConfig, data: &RunData, seed: u64) -> Result<Self> {
        match config.method {
            m if m.is_domain_adaptation() => {
                let pairs = make_pairs(&data.source, &data.target, config.pair_ratio, derive_seed(seed, PAIRS))?;
                Ok(Self::Pairs(PairBatcher::new(&pairs, config.batch_size, derive_seed(seed, BATCHES))?))
            }
            m => {
                let source = m == Method::SourceOnly;
                let len = if source { data.source.len() } else { data.target.len() };
                let rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, BATCHES));
                Ok(Self::Single { len, batch: config.batch_size, source, rng })
            }
        }
    }

    fn epoch(&mut self) -> Result<Vec<Step>> {
        let unique = |mut v: Vec<usize>| {
            v.sort_unstable();
            v.dedup();
            v
        };
        match self {
            Self::Pairs(batcher) => Ok(batcher
                .epoch()?
                .into_iter()
                .map(|b| Step {
                    source: Some(unique(b.source_indices())),
                    target: Some(unique(b.target_indices())),
                })
                .collect()),
            Self::Single { len, batch, source, rng } => {
                let mut order: Vec<usize> = (0..*len).collect();
                order.shuffle(rng);
                Ok(order
                    .chunks(*batch)
                    .map(|c| {
                        let idx = Some(c.to_vec());
                        if *source {
                            Step { source: idx, target: None }
                        } else {
                            Step { source: None, target: idx }
                        }
                    })
                    .collect())
            }
        }
    }
}

/// What one repeat produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub repeat: usize,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    /// Final (or early-stopping best) network; `None` for failed runs.
    pub state: Option<NetworkState>,
    pub val_accuracy: Option<f64>,
    pub test: Option<EvalReport>,
    pub failure: Option<String>,
}

impl RunOutcome {
    pub fn test_accuracy(&self) -> Option<f64> {
        self.test.as_ref().map(|t| t.accuracy)
    }
}

enum FitEnd {
    Done { trained: Trained, val_accuracy: f64, epochs: usize },
    Failed { message: String },
}

struct Fit {
    end: FitEnd,
    records: Vec<MetricsRecord>,
    step: u64,
}

/// Trains one network on `data`; the returned model is the last state, or
/// the best validation state when early stopping is enabled.
fn fit(config: &ExperimentConfig, spec: &NetworkSpec, data: &RunData, seed: u64, run_id: &str, clock: Instant) -> Result<Fit> {
    let mut state = NetworkState::init(spec, derive_seed(seed, INIT))?;
    let mut schedule = Schedule::new(config, data, seed)?;
    let mut rng = NetRng::seed_from_u64(derive_seed(seed, DROPOUT));
    let opts = ObjectiveOptions {
        weights: config.loss,
        graph: config.graph,
        csa_distance: config.csa_distance,
        dsne_distance: config.dsne_distance,
        dsne_margin: config.dsne_margin,
    };
    let source_labels = data.source.labels();
    let target_labels = data.target.labels();
    let mut records = Vec::new();

    let mut val = accuracy(&state, &data.validation)?;
    let mut best = (val, state.clone());
    let mut since_best = 0usize;

    for epoch in 1..=config.epochs {
        let mut steps = schedule.epoch()?;
        if let Some(cap) = config.steps_per_epoch {
            steps.truncate(cap);
        }
        let mut totals: BTreeMap<String, f64> = BTreeMap::new();
        for step in &steps {
            let src_x = step.source.as_ref().map(|i| (data.source.matrix(i), i.iter().map(|&k| source_labels[k]).collect::<Vec<_>>()));
            let tgt_x = step.target.as_ref().map(|i| (data.target.matrix(i), i.iter().map(|&k| target_labels[k]).collect::<Vec<_>>()));
            let source = src_x.as_ref().map(|(x, y)| Stream { inputs: x.view(), labels: y });
            let target = tgt_x.as_ref().map(|(x, y)| Stream { inputs: x.view(), labels: y });
            let outcome = siamese_objective(&state, config.method, source, target, &opts, Some(&mut rng))
                .and_then(|(loss, grads)| {
                    if !loss.value.is_finite() {
                        return Err(Error::NonFinite("training loss"));
                    }
                    state.sgd_step(&grads, &config.optimizer)?;
                    Ok(loss)
                });
            let loss = match outcome {
                Ok(loss) => loss,
                Err(Error::NonFinite(what)) => {
                    let message = format!("non-finite {what} at epoch {epoch}, step {}", state.step());
                    records.push(MetricsRecord {
                        run_id: run_id.to_string(),
                        kind: RecordKind::Failed,
                        step: state.step(),
                        epoch,
                        loss: BTreeMap::new(),
                        val_accuracy: None,
                        test_accuracy: None,
                        wall_clock_s: clock.elapsed().as_secs_f64(),
                        message: Some(message.clone()),
                    });
                    return Ok(Fit { end: FitEnd::Failed { message }, records, step: state.step() });
                }
                Err(e) => return Err(e),
            };
            *totals.entry("total".into()).or_default() += loss.value;
            for (k, v) in &loss.components {
                *totals.entry((*k).to_string()).or_default() += v;
            }
        }
        let n = steps.len().max(1) as f64;
        totals.values_mut().for_each(|v| *v /= n);
        val = accuracy(&state, &data.validation)?;
        records.push(MetricsRecord {
            run_id: run_id.to_string(),
            kind: RecordKind::Epoch,
            step: state.step(),
            epoch,
            loss: totals,
            val_accuracy: Some(val),
            test_accuracy: None,
            wall_clock_s: clock.elapsed().as_secs_f64(),
            message: None,
        });
        if let Some(patience) = config.patience {
            if val > best.0 {
                best = (val, state.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    let epochs = records.len();
    let step = state.step();
    let (val_accuracy, state) = if config.patience.is_some() { best } else { (val, state) };
    Ok(Fit { end: FitEnd::Done { trained: Trained { state }, val_accuracy, epochs }, records, step })
}

/// Runs repeat `repeat` of `config`: sampling, training, then a single
/// evaluation on the target test split. A non-finite loss ends the run as
/// failed rather than returning an error.
pub fn train_once(config: &ExperimentConfig, pool: &DataPool, repeat: usize) -> Result<RunOutcome> {
    let clock = Instant::now();
    let seed = config.seed.wrapping_add(repeat as u64);
    let run_id = format!("{}-r{repeat}", config.method.name());
    let spec = pool.network_spec(config)?;
    let (data, test) = prepare_run(config, pool, repeat)?;
    let Fit { end, mut records, step } = fit(config, &spec, &data, seed, &run_id, clock)?;
    match end {
        FitEnd::Done { trained, val_accuracy, epochs } => {
            let report = test.evaluate(&trained)?;
            records.push(MetricsRecord {
                run_id,
                kind: RecordKind::Final,
                step,
                epoch: epochs,
                loss: BTreeMap::new(),
                val_accuracy: Some(val_accuracy),
                test_accuracy: Some(report.accuracy),
                wall_clock_s: clock.elapsed().as_secs_f64(),
                message: None,
            });
            Ok(RunOutcome {
                repeat,
                seed,
                records,
                state: Some(trained.into_state()),
                val_accuracy: Some(val_accuracy),
                test: Some(report),
                failure: None,
            })
        }
        FitEnd::Failed { message } => Ok(RunOutcome {
            repeat,
            seed,
            records,
            state: None,
            val_accuracy: None,
            test: None,
            failure: Some(message),
        }),
    }
}

/// Aggregate over repeats, written as the last metrics line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRecord {
    pub run_id: String,
    pub kind: &'static str,
    pub method: Method,
    pub repeats: usize,
    pub failures: usize,
    pub test_accuracies: Vec<f64>,
    pub mean_test_accuracy: f64,
    pub std_test_accuracy: f64,
    pub mean_val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub runs: Vec<RunOutcome>,
    pub summary: SummaryRecord,
}

impl TrainSummary {
    /// Every per-run record in seed order.
    pub fn records(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.runs.iter().flat_map(|r| &r.records)
    }

    pub fn mean(&self) -> f64 {
        self.summary.mean_test_accuracy
    }

    pub fn std(&self) -> f64 {
        self.summary.std_test_accuracy
    }
}

/// Runs every repeat (in parallel) and summarizes the successful ones with
/// the population mean and standard deviation.
pub fn train(config: &ExperimentConfig, pool: &DataPool) -> Result<TrainSummary> {
    config.validate()?;
    let runs = (0..config.repeats)
        .into_par_iter()
        .map(|r| train_once(config, pool, r))
        .collect::<Result<Vec<_>>>()?;
    let test: Vec<f64> = runs.iter().filter_map(RunOutcome::test_accuracy).collect();
    let val: Vec<f64> = runs.iter().filter_map(|r| r.val_accuracy).collect();
    let (mean, std) = mean_std(&test);
    let summary = SummaryRecord {
        run_id: format!("{}-summary", config.method.name()),
        kind: "summary",
        method: config.method,
        repeats: config.repeats,
        failures: runs.len() - test.len(),
        test_accuracies: test,
        mean_test_accuracy: mean,
        std_test_accuracy: std,
        mean_val_accuracy: mean_std(&val).0,
    };
    Ok(TrainSummary { runs, summary })
}
