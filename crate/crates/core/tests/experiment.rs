use dage::data::{DatasetSpec, ShiftConfig, SplitSpec};
use dage::experiment::{
    accuracy, evaluate, load_pool, prepare_run, search, strip_wall_clock, train, train_once, ExperimentConfig,
    JsonlWriter, Method, Prior, Range, RecordKind, SearchSpace, Trained,
};
use dage::nn::NetworkState;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn blobs(shift: ShiftConfig, n_per_class: usize, seed: u64) -> DatasetSpec {
    DatasetSpec::Synthetic { n_per_class, classes: 3, dim: 2, shift, seed }
}

fn small_config(method: Method) -> ExperimentConfig {
    ExperimentConfig {
        method,
        dataset: blobs(ShiftConfig { rotation: 0.3, translation: vec![0.5, -0.5], ..ShiftConfig::default() }, 60, 2),
        split: SplitSpec { source_per_class: 10, target_per_class: 3, seed: 1 },
        epochs: 3,
        repeats: 3,
        validation_fraction: 0.0,
        ..ExperimentConfig::default()
    }
}

fn jsonl(config: &ExperimentConfig) -> String {
    let pool = load_pool(&config.dataset, None).unwrap();
    let result = train(config, &pool).unwrap();
    let mut w = JsonlWriter::new(Vec::new());
    w.write_all(result.records()).unwrap();
    w.write(&result.summary).unwrap();
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

#[test]
fn repeated_invocations_emit_identical_metrics() {
    for method in [Method::DageLda, Method::Ccsa, Method::Dsne, Method::FtTarget, Method::SourceOnly] {
        let config = small_config(method);
        let (a, b) = (jsonl(&config), jsonl(&config));
        assert_eq!(strip_wall_clock(&a).unwrap(), strip_wall_clock(&b).unwrap(), "{method:?}");
        let other = ExperimentConfig { seed: 1, ..config };
        assert_ne!(strip_wall_clock(&a).unwrap(), strip_wall_clock(&jsonl(&other)).unwrap(), "{method:?}");
    }
}

#[test]
fn summary_uses_the_population_statistics() {
    let config = small_config(Method::DageLda);
    let pool = load_pool(&config.dataset, None).unwrap();
    let result = train(&config, &pool).unwrap();
    let acc: Vec<f64> = result.runs.iter().map(|r| r.test_accuracy().unwrap()).collect();
    assert_eq!(acc.len(), 3);
    assert_eq!(result.summary.test_accuracies, acc);
    let mean = acc.iter().sum::<f64>() / 3.0;
    let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 3.0;
    assert!((result.mean() - mean).abs() < 1e-15);
    assert!((result.std() - var.sqrt()).abs() < 1e-15);
    for run in &result.runs {
        let kinds: Vec<RecordKind> = run.records.iter().map(|r| r.kind).collect();
        assert_eq!(kinds.len(), config.epochs + 1);
        assert_eq!(kinds.last(), Some(&RecordKind::Final));
        assert!(run.records[..config.epochs].iter().all(|r| r.test_accuracy.is_none()));
    }
}

#[test]
fn zero_epochs_keep_the_untrained_network() {
    // Every class mean sits at the origin: labels carry no signal.
    let config = ExperimentConfig {
        method: Method::DageLda,
        dataset: blobs(ShiftConfig { separation: 0.0, ..ShiftConfig::default() }, 1000, 3),
        epochs: 0,
        validation_fraction: 0.0,
        ..ExperimentConfig::default()
    };
    let pool = load_pool(&config.dataset, None).unwrap();
    let outcome = train_once(&config, &pool, 0).unwrap();
    let state = outcome.state.clone().unwrap();
    assert_eq!(state.step(), 0);
    let acc = outcome.test_accuracy().unwrap();
    assert!((acc - 1.0 / 3.0).abs() <= 0.05, "accuracy {acc}");
    let (_, test) = prepare_run(&config, &pool, 0).unwrap();
    assert_eq!(test.evaluate(&Trained::from_checkpoint(state)).unwrap().accuracy, acc);
}

#[test]
fn random_network_is_near_chance_on_a_balanced_set() {
    let config = ExperimentConfig {
        dataset: blobs(ShiftConfig { separation: 0.0, ..ShiftConfig::default() }, 2000, 5),
        ..ExperimentConfig::default()
    };
    let pool = load_pool(&config.dataset, None).unwrap();
    let spec = pool.network_spec(&config).unwrap();
    for seed in 0..5 {
        let state = NetworkState::init(&spec, seed).unwrap();
        let acc = accuracy(&state, &pool.target).unwrap();
        assert!((acc - 1.0 / 3.0).abs() <= 0.05, "seed {seed}: accuracy {acc}");
    }
}

#[test]
fn evaluation_ignores_sample_order() {
    let config = small_config(Method::DageLda);
    let pool = load_pool(&config.dataset, None).unwrap();
    let outcome = train_once(&config, &pool, 0).unwrap();
    let state = outcome.state.unwrap();
    let mut shuffled = pool.target.clone();
    shuffled.samples.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let (a, b) = (evaluate(&state, &pool.target).unwrap(), evaluate(&state, &shuffled).unwrap());
    assert_eq!(a.accuracy, b.accuracy);
    assert_eq!(a.confusion, b.confusion);
    let total: usize = a.confusion.iter().flatten().sum();
    assert_eq!(total, pool.target.len());
}

#[test]
fn training_split_accuracy_is_not_below_test_accuracy() {
    let config = ExperimentConfig { epochs: 20, optimizer: lr(3e-3), ..small_config(Method::DageLda) };
    let pool = load_pool(&config.dataset, None).unwrap();
    let outcome = train_once(&config, &pool, 0).unwrap();
    let (run, _) = prepare_run(&config, &pool, 0).unwrap();
    let train_acc = accuracy(outcome.state.as_ref().unwrap(), &run.source).unwrap();
    assert!(train_acc >= outcome.test_accuracy().unwrap());
}

fn lr(learning_rate: f64) -> dage::OptimizerConfig {
    dage::OptimizerConfig { learning_rate, ..Default::default() }
}

#[test]
fn divergent_runs_are_recorded_as_failures() {
    let config = ExperimentConfig {
        method: Method::Dsne,
        dsne_margin: None,
        optimizer: lr(10.0),
        epochs: 30,
        repeats: 2,
        ..small_config(Method::Dsne)
    };
    let pool = load_pool(&config.dataset, None).unwrap();
    let result = train(&config, &pool).unwrap();
    assert_eq!(result.summary.failures, 2);
    for run in &result.runs {
        assert!(run.failure.is_some() && run.state.is_none() && run.test.is_none());
        assert_eq!(run.records.last().unwrap().kind, RecordKind::Failed);
    }
}

#[test]
fn log_uniform_median_is_the_geometric_midpoint() {
    let range = Range::new(1e-8, 1e-3, Prior::LogUniform);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut draws: Vec<f64> = (0..10_000).map(|_| range.sample(&mut rng)).collect();
    assert!(draws.iter().all(|v| (1e-8..=1e-3).contains(v)));
    draws.sort_by(f64::total_cmp);
    let median = draws[5_000];
    let midpoint = 10f64.powf(-5.5);
    assert!(median / midpoint < 3.0 && midpoint / median < 3.0, "median {median:e}");
}

#[test]
fn inverse_log_uniform_concentrates_near_the_upper_bound() {
    let range = Range::new(0.5, 0.99, Prior::InverseLogUniform);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut draws: Vec<f64> = (0..10_000).map(|_| range.sample(&mut rng)).collect();
    assert!(draws.iter().all(|v| (0.5..=0.99).contains(v)));
    draws.sort_by(f64::total_cmp);
    // 1 - median is the geometric midpoint of [0.01, 0.5].
    let median = draws[5_000];
    assert!(((1.0 - median) / (0.01f64 * 0.5).sqrt()).ln().abs() < 3f64.ln());
}

fn search_space() -> SearchSpace {
    SearchSpace { learning_rate: Range::new(1e-4, 1e-2, Prior::LogUniform), ..SearchSpace::default() }
}

#[test]
fn search_with_budget_one_returns_that_trial() {
    let base = ExperimentConfig { repeats: 1, ..small_config(Method::Ccsa) };
    let pool = load_pool(&base.dataset, None).unwrap();
    let result = search(&base, &search_space(), 1, &pool).unwrap();
    assert_eq!(result.leaderboard.len(), 1);
    let only = &result.leaderboard[0];
    assert_eq!((only.rank, only.trial), (1, 0));
    assert_eq!(result.best, only.params.apply(&base));
    assert!(only.params.margin.is_some());
    assert_eq!(result.best.optimizer.learning_rate, only.params.learning_rate);
    assert!(search(&base, &search_space(), 0, &pool).is_err());
}

#[test]
fn leaderboard_is_sorted_by_validation_accuracy() {
    let base = ExperimentConfig { repeats: 1, validation_fraction: 0.0, ..small_config(Method::DageLda) };
    let pool = load_pool(&base.dataset, None).unwrap();
    let result = search(&base, &search_space(), 6, &pool).unwrap();
    assert_eq!(result.leaderboard.len(), 6);
    let vals: Vec<f64> = result.leaderboard.iter().map(|t| t.val_accuracy.unwrap_or(f64::NEG_INFINITY)).collect();
    assert!(vals.windows(2).all(|w| w[0] >= w[1]), "{vals:?}");
    let ranks: Vec<usize> = result.leaderboard.iter().map(|t| t.rank).collect();
    assert_eq!(ranks, (1..=6).collect::<Vec<_>>());
    assert!(result.leaderboard.iter().all(|t| t.params.margin.is_none()));
    let again = search(&base, &search_space(), 6, &pool).unwrap();
    assert_eq!(result.leaderboard, again.leaderboard);
}

/// Images of `classes` classes: a bright square whose position encodes the
/// label, plus noise.
fn digit_like(side: usize, n_per_class: usize, classes: usize, seed: u64) -> dage::data::Dataset {
    use dage::data::{Dataset, LabeledSample};
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = side / 4;
    let samples = (0..classes * n_per_class)
        .map(|i| {
            let label = i % classes;
            let mut px: Vec<f64> = (0..side * side).map(|_| f64::from(rng.random_range(0u8..40)) / 255.0).collect();
            let (r0, c0) = (block * (label % 3), block * (label / 3));
            for r in r0..r0 + block {
                for c in c0..c0 + block {
                    px[r * side + c] = 1.0;
                }
            }
            LabeledSample { features: px, label, domain: dage::DomainTag::Source }
        })
        .collect();
    Dataset::new("digits", [1, side, side], classes, samples).unwrap()
}

#[test]
fn idx_datasets_train_through_the_manifest() {
    use dage::data::{sha256_hex, write_idx_dataset, HarmonizeMode, Manifest, ManifestEntry};
    use dage::experiment::{NetworkChoice, MANIFEST_FILE};

    let dir = tempfile::tempdir().unwrap();
    let mut entries = Vec::new();
    for (name, side, seed) in [("mnist", 28, 1), ("usps", 16, 2)] {
        let (images, labels) = (format!("{name}-images.idx"), format!("{name}-labels.idx"));
        write_idx_dataset(&digit_like(side, 12, 3, seed), dir.path().join(&images), dir.path().join(&labels))
            .unwrap();
        let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
        let checksum = Some(sha256_hex(&[&read(&images), &read(&labels)]));
        entries.push(ManifestEntry { name: name.into(), images: images.into(), labels: labels.into(), checksum });
    }
    std::fs::write(dir.path().join(MANIFEST_FILE), Manifest { entries }.render()).unwrap();

    let config = ExperimentConfig {
        method: Method::DageLda,
        dataset: DatasetSpec::Idx { source: "mnist".into(), target: "usps".into(), harmonize: HarmonizeMode::Resize },
        network: NetworkChoice::Lenet,
        split: SplitSpec { source_per_class: 5, target_per_class: 3, seed: 0 },
        epochs: 1,
        steps_per_epoch: Some(3),
        validation_fraction: 0.0,
        optimizer: lr(1e-3),
        ..ExperimentConfig::default()
    };
    assert!(load_pool(&config.dataset, None).is_err());
    let pool = load_pool(&config.dataset, Some(dir.path())).unwrap();
    assert_eq!(pool.target.dims, [1, 28, 28]);
    assert_eq!(pool.classes(), 3);
    let result = train(&config, &pool).unwrap();
    assert_eq!(result.summary.failures, 0);
    let state = result.runs[0].state.as_ref().unwrap();
    assert_eq!(state.spec().hash(), pool.network_spec(&config).unwrap().hash());
}

#[test]
fn domain_adaptation_beats_source_only_training() {
    let shift = ShiftConfig {
        rotation: 0.1,
        translation: vec![-0.3, 0.06],
        separation: 1.69,
        spread: vec![0.62, 5.52],
        ..ShiftConfig::default()
    };
    let base = ExperimentConfig {
        dataset: blobs(shift, 200, 7),
        split: SplitSpec { source_per_class: 20, target_per_class: 3, seed: 0 },
        validation_fraction: 0.0,
        repeats: 5,
        optimizer: lr(1e-3),
        ..ExperimentConfig::default()
    };
    let pool = load_pool(&base.dataset, None).unwrap();
    let run = |method, epochs| train(&ExperimentConfig { method, epochs, ..base.clone() }, &pool).unwrap().mean();
    let (dage, source_only) = (run(Method::DageLda, 30), run(Method::SourceOnly, 100));
    assert!(dage > source_only, "dage-lda {dage} vs source-only {source_only}");
}
