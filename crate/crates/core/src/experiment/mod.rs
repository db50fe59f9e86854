//! Experiment configuration, training, evaluation, search and the spectral
//! oracle comparison.

mod config;
pub mod eval;
pub mod metrics;
pub mod objective;
pub mod oracle;
pub mod search;
pub mod train;

pub use config::{ExperimentConfig, Method, NetworkChoice};
pub use eval::{accuracy, evaluate, predict_labels, EvalReport};
pub use metrics::{mean_std, strip_wall_clock, JsonlWriter, MetricsRecord, RecordKind};
pub use objective::{siamese_objective, ObjectiveOptions, Stream};
pub use oracle::{compare, run_oracle, OracleConfig, OracleProblem, OracleReport, ORACLE_TOLERANCE};
pub use search::{search, Prior, Range, Sample, SearchResult, SearchSpace, TrialResult, DEFAULT_BUDGET};
pub use train::{
    data_root_from_env, load_pool, prepare_run, train, train_once, DataPool, RunOutcome, SummaryRecord,
    TrainSummary, SealedTest, Trained, RunData, DATA_DIR_ENV, MANIFEST_FILE,
};
