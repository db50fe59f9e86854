//! `dage`: gradient checks, spectral oracle, training, evaluation and
//! random search for graph-embedding domain adaptation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use dage::experiment::{
    self, load_pool, prepare_run, run_oracle, search, train, DataPool, ExperimentConfig, JsonlWriter,
    OracleConfig, SearchSpace, DATA_DIR_ENV, DEFAULT_BUDGET,
};
use dage::gradcheck::{run_gradcheck, GradcheckConfig};
use dage::nn::{read_checkpoint, write_checkpoint};

const EXIT_VALIDATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "dage", version, about = "Graph-embedding domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON-lines output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Directory containing manifest.txt and the IDX files it lists.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    /// Target samples not used for training.
    Test,
    /// Target samples used for training.
    TargetTrain,
    /// Held-out target samples (the training samples when none are held out).
    Validation,
    /// Sampled source training set.
    SourceTrain,
}

#[derive(Subcommand)]
enum Command {
    /// Compare every analytic gradient with central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Perturb analytic gradients (negative control).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Compare the generalized-eigenvalue optimum with gradient descent.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds to check.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Train, then evaluate once on the target test split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Where to write the first successful run's network.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Accuracy and confusion matrix of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Repeat whose sampling defines the split.
        #[arg(long, default_value_t = 0)]
        repeat: usize,
    },
    /// Random hyper-parameter search ranked by validation accuracy.
    Search {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// JSON search space; defaults to the standard ranges.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        /// Where to write the best configuration.
        #[arg(long)]
        best: Option<PathBuf>,
    },
}

/// A failed check, as opposed to an error.
#[derive(Debug)]
struct ValidationFailure(String);

impl std::fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ValidationFailure>().is_some() {
        return EXIT_VALIDATION;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dage::Error>() {
            use dage::Error::*;
            return match e {
                Config(_) | Json(_) | Io(_) | SpecMismatch(_) | Checkpoint(_) | IdxParse { .. }
                | InsufficientSamples { .. } => EXIT_CONFIG,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_CONFIG;
        }
    }
    EXIT_VALIDATION
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let value = serde_json::from_str(&text).map_err(|e| dage::Error::Config(format!("{}: {e}", p.display())))?;
            Ok(value)
        }
    }
}

fn experiment_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let config = match path {
        None => ExperimentConfig::default(),
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
    };
    config.validate()?;
    Ok(config)
}

fn write_jsonl<'a, T: Serialize + 'a>(out: Option<&Path>, rows: impl IntoIterator<Item = &'a T>) -> Result<()> {
    if let Some(path) = out {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = JsonlWriter::new(BufWriter::new(file));
        w.write_all(rows)?;
        w.into_inner()?;
    }
    Ok(())
}

fn pool(config: &ExperimentConfig, data: &DataArgs) -> Result<DataPool> {
    Ok(load_pool(&config.dataset, data.data_dir.as_deref())?)
}

fn cmd_gradcheck(common: &Common, seed: Option<u64>, corrupt: bool) -> Result<()> {
    let mut config: GradcheckConfig = read_json(common.config.as_deref())?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.corrupt |= corrupt;
    let report = run_gradcheck(&config)?;
    print!("{}", report.render());
    write_jsonl(common.out.as_deref(), &report.components)?;
    if report.passed {
        Ok(())
    } else {
        Err(ValidationFailure("gradient check exceeded tolerance".into()).into())
    }
}

fn cmd_oracle(common: &Common, seeds: u64) -> Result<()> {
    let base: OracleConfig = read_json(common.config.as_deref())?;
    let mut reports = Vec::new();
    for k in 0..seeds.max(1) {
        let config = OracleConfig { seed: base.seed + k, ..base.clone() };
        let r = run_oracle(&config)?;
        println!(
            "seed={} spectral={:.12e} gradient={:.12e} gap={:.3e} iterations={} {}",
            r.seed,
            r.spectral,
            r.gradient,
            r.gap,
            r.iterations,
            if r.passed { "PASS" } else { "FAIL" }
        );
        reports.push(r);
    }
    write_jsonl(common.out.as_deref(), &reports)?;
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(ValidationFailure("spectral and gradient optima disagree".into()).into())
    }
}

fn cmd_train(common: &Common, data: &DataArgs, checkpoint: Option<&Path>) -> Result<()> {
    let config = experiment_config(common.config.as_deref())?;
    let pool = pool(&config, data)?;
    let result = train(&config, &pool)?;
    if let Some(path) = common.out.as_deref() {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = JsonlWriter::new(BufWriter::new(file));
        w.write_all(result.records())?;
        w.write(&result.summary)?;
        w.into_inner()?;
    }
    for run in &result.runs {
        match (&run.failure, run.test_accuracy()) {
            (Some(msg), _) => println!("repeat {} seed {}: FAILED ({msg})", run.repeat, run.seed),
            (None, Some(acc)) => println!("repeat {} seed {}: test accuracy {acc:.4}", run.repeat, run.seed),
            (None, None) => {}
        }
    }
    let s = &result.summary;
    println!(
        "{}: mean test accuracy {:.4} +/- {:.4} over {} runs ({} failed)",
        config.method.name(),
        s.mean_test_accuracy,
        s.std_test_accuracy,
        s.repeats,
        s.failures
    );
    if let Some(path) = checkpoint {
        if let Some(state) = result.runs.iter().find_map(|r| r.state.as_ref()) {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            write_checkpoint(&mut w, state)?;
            w.flush()?;
        }
    }
    if s.failures == s.repeats {
        return Err(ValidationFailure("every run failed".into()).into());
    }
    Ok(())
}

fn cmd_eval(common: &Common, data: &DataArgs, checkpoint: &Path, split: Split, repeat: usize) -> Result<()> {
    let config = experiment_config(common.config.as_deref())?;
    let file = File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
    let state = read_checkpoint(std::io::BufReader::new(file))?;
    let pool = pool(&config, data)?;
    let expected = pool.network_spec(&config)?;
    if expected.hash() != state.spec().hash() {
        return Err(dage::Error::SpecMismatch(format!(
            "checkpoint network {:016x} does not match the configured network {:016x} for this dataset",
            state.spec().hash(),
            expected.hash()
        ))
        .into());
    }
    let (run, test) = prepare_run(&config, &pool, repeat)?;
    let report = match split {
        Split::Test => test.evaluate(&experiment::train::Trained::from_checkpoint(state))?,
        Split::TargetTrain => experiment::evaluate(&state, &run.target)?,
        Split::Validation => experiment::evaluate(&state, &run.validation)?,
        Split::SourceTrain => experiment::evaluate(&state, &run.source)?,
    };
    println!("accuracy {:.4} on {} samples", report.accuracy, report.samples);
    for (k, row) in report.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        println!("class {k}: [{}]", cells.join(" "));
    }
    write_jsonl(common.out.as_deref(), [&report])?;
    Ok(())
}

fn cmd_search(common: &Common, data: &DataArgs, space: Option<&Path>, budget: usize, best: Option<&Path>) -> Result<()> {
    let config = experiment_config(common.config.as_deref())?;
    let space: SearchSpace = read_json(space)?;
    let pool = pool(&config, data)?;
    let result = search(&config, &space, budget, &pool)?;
    for t in &result.leaderboard {
        let val = t.val_accuracy.map_or("failed".to_string(), |v| format!("{v:.4}"));
        println!("#{} trial {} val {val}", t.rank, t.trial);
    }
    write_jsonl(common.out.as_deref(), &result.leaderboard)?;
    if let Some(path) = best {
        std::fs::write(path, serde_json::to_string_pretty(&result.best)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gradcheck { common, seed, corrupt } => cmd_gradcheck(common, *seed, *corrupt),
        Command::Oracle { common, seeds } => cmd_oracle(common, *seeds),
        Command::Train { common, data, checkpoint } => cmd_train(common, data, checkpoint.as_deref()),
        Command::Eval { common, data, checkpoint, split, repeat } => {
            cmd_eval(common, data, checkpoint, *split, *repeat)
        }
        Command::Search { common, data, space, budget, best } => {
            cmd_search(common, data, space.as_deref(), *budget, best.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
