//! End-to-end acceptance checks. Each test prints one line,
//! `criterion <n> <name>: PASS|FAIL (...)`, and fails unless the criterion
//! holds within its runtime budget.
//!
//! Criterion 6 needs the MNIST and USPS IDX files listed in a manifest
//! under `DAGE_DATA_DIR` and is ignored by default:
//! `cargo test -p dage --test acceptance -- --ignored --nocapture`.

use std::time::{Duration, Instant};

use dage::data::{make_pairs, sample_protocol, synth_shift, DatasetSpec, HarmonizeMode, ShiftConfig, SplitSpec};
use dage::experiment::{
    data_root_from_env, load_pool, run_oracle, train, DataPool, ExperimentConfig, Method, NetworkChoice,
    OracleConfig, ORACLE_TOLERANCE,
};
use dage::gradcheck::{run_gradcheck, GradcheckConfig, LOSS_TOLERANCE, NETWORK_TOLERANCE};
use dage::graph::{
    build_intrinsic_lda, build_penalty_lda, laplacian, pairwise_quadratic, trace_quadratic, BatchMeta, DomainTag,
};
use dage::linalg::symmetric_eigen;
use dage::losses::{csa_as_graph, csa_loss_with, dage_loss, DistanceKind};
use dage::OptimizerConfig;
use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Prints the verdict line and panics on failure.
fn report(n: u32, name: &str, budget: Duration, started: Instant, outcome: Result<String, String>) {
    let elapsed = started.elapsed();
    let outcome = outcome.and_then(|detail| {
        if elapsed <= budget {
            Ok(detail)
        } else {
            Err(format!("{detail}; took {:.2}s, budget {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64()))
        }
    });
    match &outcome {
        Ok(detail) => println!("criterion {n} {name}: PASS ({detail}; {:.2}s)", elapsed.as_secs_f64()),
        Err(detail) => println!("criterion {n} {name}: FAIL ({detail})"),
    }
    if let Err(detail) = outcome {
        panic!("criterion {n} {name} failed: {detail}");
    }
}

fn random_meta(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> BatchMeta {
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let mut domains: Vec<DomainTag> =
        (0..n).map(|_| if rng.random() { DomainTag::Target } else { DomainTag::Source }).collect();
    domains[0] = DomainTag::Source;
    domains[n - 1] = DomainTag::Target;
    BatchMeta::new(labels, domains).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
}

#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let config = GradcheckConfig::default();
    let outcome = run_gradcheck(&config).map_err(|e| e.to_string()).and_then(|r| {
        let worst = r.components.iter().map(|c| format!("{} {:.1e}", c.name, c.max_rel_error)).collect::<Vec<_>>();
        let detail = format!(
            "{} instances, d <= {}, N <= {}, loss tol {LOSS_TOLERANCE:e}, network tol {NETWORK_TOLERANCE:e}: {}",
            config.instances,
            config.max_dim,
            config.max_batch,
            worst.join(", ")
        );
        if r.passed {
            Ok(detail)
        } else {
            Err(detail)
        }
    });
    report(1, "gradient correctness", Duration::from_secs(10), started, outcome);
}

#[test]
fn criterion_2_graph_form_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_trace = 0.0f64;
    let mut worst_csa = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=16);
        let d = rng.random_range(1..=8);
        let meta = random_meta(&mut rng, n, 3);
        let phi = random_matrix(&mut rng, d, n);
        for w in [build_intrinsic_lda(&meta), build_penalty_lda(&meta)] {
            let pairwise = pairwise_quadratic(phi.view(), &w).unwrap();
            let trace = trace_quadratic(phi.view(), laplacian(&w).as_array()).unwrap();
            worst_trace = worst_trace.max((pairwise - 2.0 * trace).abs() / pairwise.abs().max(1e-300));
        }
    }
    for _ in 0..100 {
        let d = rng.random_range(1..=6);
        let (ns, nt) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let ls: Vec<usize> = (0..ns).map(|_| rng.random_range(0..3)).collect();
        let lt: Vec<usize> = (0..nt).map(|_| rng.random_range(0..3)).collect();
        let (phi_s, phi_t) = (random_matrix(&mut rng, d, ns), random_matrix(&mut rng, d, nt));
        let margin = rng.random_range(0.5..4.0);
        for distance in [DistanceKind::Euclidean, DistanceKind::SquaredEuclidean] {
            let direct = csa_loss_with(phi_s.view(), phi_t.view(), &ls, &lt, margin, distance).unwrap().value;
            let form = csa_as_graph(phi_s.view(), phi_t.view(), &ls, &lt, margin, distance).unwrap();
            let phi = concatenate![Axis(1), phi_s, phi_t];
            let via_graph = form.value(phi.view()).unwrap();
            worst_csa = worst_csa.max((direct - via_graph).abs() / direct.abs().max(1e-300));
        }
    }
    let detail = format!("max relative error: trace form {worst_trace:.1e}, contrastive graph form {worst_csa:.1e}");
    let outcome = if worst_trace <= 1e-9 && worst_csa <= 1e-9 { Ok(detail) } else { Err(detail) };
    report(2, "graph-form equivalence", Duration::from_secs(5), started, outcome);
}

#[test]
fn criterion_3_spectral_oracle() {
    let started = Instant::now();
    let problems = [
        OracleConfig::default(),
        OracleConfig { classes: 3, dim: 10, per_class: 5, ..OracleConfig::default() },
    ];
    let mut lines = Vec::new();
    let mut passed = 0;
    for base in &problems {
        let mut worst = 0.0f64;
        for seed in 0..10 {
            match run_oracle(&OracleConfig { seed, ..base.clone() }) {
                Ok(r) => {
                    worst = worst.max(r.gap);
                    passed += usize::from(r.passed);
                }
                Err(e) => lines.push(format!("seed {seed}: {e}")),
            }
        }
        let n = 2 * base.classes * base.per_class;
        lines.push(format!("D={} N={n}: max gap {worst:.1e}", base.dim));
    }
    let total = 10 * problems.len();
    let detail = format!("{passed}/{total} seeds within {ORACLE_TOLERANCE:e}; {}", lines.join(", "));
    let outcome = if passed == total { Ok(detail) } else { Err(detail) };
    report(3, "spectral oracle", Duration::from_secs(30), started, outcome);
}

#[test]
fn criterion_4_laplacian_invariants() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    let mut worst_eps_gap = 0.0f64;
    let suites = 300;
    for case in 0..suites {
        let n = rng.random_range(2..=16);
        let classes = rng.random_range(1..=4);
        let meta = random_meta(&mut rng, n, classes);
        let ws = [build_intrinsic_lda(&meta), build_penalty_lda(&meta)];
        let ls: Vec<_> = ws.iter().map(laplacian).collect();
        for l in &ls {
            let a = l.as_array();
            if a != a.t() {
                failures.push(format!("case {case}: asymmetric"));
            }
            if a.rows().into_iter().any(|r| r.sum().abs() > 1e-12) {
                failures.push(format!("case {case}: nonzero row sum"));
            }
            let min = symmetric_eigen(a.view()).unwrap().values[0];
            if min < -1e-10 {
                failures.push(format!("case {case}: eigenvalue {min:e}"));
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let moved = meta.permuted(&perm);
        let moved_ls = [laplacian(&build_intrinsic_lda(&moved)), laplacian(&build_penalty_lda(&moved))];
        for (l, lm) in ls.iter().zip(&moved_ls) {
            if l.permuted(&perm).as_array() != lm.as_array() {
                failures.push(format!("case {case}: permutation"));
            }
        }

        let d = rng.random_range(1..=6);
        let phi = random_matrix(&mut rng, d, n);
        let den = trace_quadratic(phi.view(), ls[1].as_array()).unwrap();
        if den <= 1e-8 {
            continue;
        }
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let scaled = &phi * scale;
        let exact = dage_loss(phi.view(), &ls[0], &ls[1], 0.0).unwrap().value;
        let exact_scaled = dage_loss(scaled.view(), &ls[0], &ls[1], 0.0).unwrap().value;
        if (exact - exact_scaled).abs() > 1e-12 * exact.max(1e-300) {
            failures.push(format!("case {case}: eps = 0 ratio moved from {exact} to {exact_scaled}"));
        }
        let eps = 1e-6;
        let regular = dage_loss(scaled.view(), &ls[0], &ls[1], eps).unwrap().value;
        // num / (den + eps / scale^2) differs from num / den by at most
        // exact * eps / (scale^2 den).
        let bound = exact * eps / (scale * scale * den);
        let gap = exact - regular;
        worst_eps_gap = worst_eps_gap.max(gap / bound.max(f64::MIN_POSITIVE));
        if gap < -1e-12 * exact || gap > bound * (1.0 + 1e-9) + 1e-15 {
            failures.push(format!("case {case}: eps > 0 gap {gap:e} exceeds {bound:e}"));
        }
    }
    let detail = format!(
        "{suites} random batches, symmetry, zero row sums, PSD >= -1e-10, permutation, scale (eps > 0 gap at most {:.3} of bound)",
        worst_eps_gap
    );
    let outcome = if failures.is_empty() { Ok(detail) } else { Err(format!("{detail}; {}", failures.join("; "))) };
    report(4, "laplacian invariants", Duration::from_secs(5), started, outcome);
}

/// Anisotropic blobs, slightly rotated and translated: the source is
/// informative but three target samples per class pin down the narrow
/// class boundaries poorly.
fn shifted_blobs() -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::Synthetic {
            n_per_class: 200,
            classes: 3,
            dim: 2,
            shift: ShiftConfig {
                rotation: 0.1,
                translation: vec![-0.3, 0.06],
                separation: 1.69,
                spread: vec![0.62, 5.52],
                ..ShiftConfig::default()
            },
            seed: 7,
        },
        split: SplitSpec { source_per_class: 20, target_per_class: 3, seed: 0 },
        validation_fraction: 0.0,
        repeats: 5,
        seed: 0,
        ..ExperimentConfig::default()
    }
}

fn mean_accuracy(config: &ExperimentConfig, pool: &DataPool) -> Result<(f64, f64), String> {
    let result = train(config, pool).map_err(|e| e.to_string())?;
    if result.summary.failures > 0 {
        return Err(format!("{} of {} runs failed", result.summary.failures, config.repeats));
    }
    Ok((result.mean(), result.std()))
}

#[test]
fn criterion_5_synthetic_domain_adaptation() {
    let started = Instant::now();
    let base = shifted_blobs();
    let pool = load_pool(&base.dataset, None).unwrap();
    let setting = |lr: f64, epochs: usize| (OptimizerConfig { learning_rate: lr, ..OptimizerConfig::default() }, epochs);
    let outcome = (|| {
        let (optimizer, epochs) = setting(1e-3, 30);
        let (dage, dage_std) =
            mean_accuracy(&ExperimentConfig { method: Method::DageLda, optimizer, epochs, ..base.clone() }, &pool)?;
        // The baseline gets the best of several training budgets.
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0);
        for (lr, epochs) in [(1e-3, 30), (1e-3, 100), (3e-3, 10), (3e-3, 30), (3e-3, 100)] {
            let (optimizer, epochs) = setting(lr, epochs);
            let (acc, std) =
                mean_accuracy(&ExperimentConfig { method: Method::FtTarget, optimizer, epochs, ..base.clone() }, &pool)?;
            if acc > best.0 {
                best = (acc, std, lr, epochs);
            }
        }
        let margin = dage - best.0;
        let detail = format!(
            "dage-lda {dage:.4} +/- {dage_std:.4}, target-only {:.4} +/- {:.4} (lr {:e}, {} epochs), margin {:+.1} points over 5 seeds",
            best.0,
            best.1,
            best.2,
            best.3,
            100.0 * margin
        );
        if margin >= 0.05 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    report(5, "synthetic domain adaptation", Duration::from_secs(120), started, outcome);
}

#[test]
#[ignore = "needs the MNIST and USPS IDX files in a manifest under DAGE_DATA_DIR"]
fn criterion_6_mnist_to_usps_trend() {
    let started = Instant::now();
    let outcome = (|| {
        let root = data_root_from_env().ok_or("DAGE_DATA_DIR is not set")?;
        let dataset =
            DatasetSpec::Idx { source: "mnist".into(), target: "usps".into(), harmonize: HarmonizeMode::Resize };
        let pool = load_pool(&dataset, Some(&root)).map_err(|e| e.to_string())?;
        let mut means = Vec::new();
        for per_class in [1, 3, 5, 7] {
            let config = ExperimentConfig {
                method: Method::DageLda,
                dataset: dataset.clone(),
                network: NetworkChoice::Lenet,
                split: SplitSpec { source_per_class: 200, target_per_class: per_class, seed: 0 },
                optimizer: OptimizerConfig { learning_rate: 1e-3, keep_prob: 0.5, ..OptimizerConfig::default() },
                epochs: 10,
                steps_per_epoch: Some(300),
                batch_size: 16,
                validation_fraction: 0.0,
                repeats: 5,
                ..ExperimentConfig::default()
            };
            means.push(mean_accuracy(&config, &pool)?.0);
        }
        let monotone = means.windows(2).all(|w| w[1] >= w[0]);
        let detail = format!(
            "mean accuracy at 1/3/5/7 samples per class: {}",
            means.iter().map(|m| format!("{:.3}", m)).collect::<Vec<_>>().join(" / ")
        );
        if monotone && means[3] >= 0.85 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    report(6, "mnist to usps trend", Duration::from_secs(30 * 60), started, outcome);
}

#[test]
fn criterion_7_protocol_conformance() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut checked_pairs = 0;
    for seed in 0..20 {
        let (source, target) = synth_shift(40, 10, 2, &ShiftConfig::default(), seed).unwrap();
        let (train_split, test_split) = match sample_protocol(&target, 3, seed) {
            Ok(s) => s,
            Err(e) => {
                failures.push(e.to_string());
                continue;
            }
        };
        if train_split.class_counts() != vec![3; 10] {
            failures.push(format!("seed {seed}: counts {:?}", train_split.class_counts()));
        }
        // Exhaustive disjointness: no train sample equals any test sample,
        // and together they are the whole target set.
        for a in &train_split.samples {
            if test_split.samples.iter().any(|b| b.features == a.features) {
                failures.push(format!("seed {seed}: sample in both splits"));
            }
        }
        if train_split.len() + test_split.len() != target.len() {
            failures.push(format!("seed {seed}: splits do not cover the target set"));
        }
        let pairs = make_pairs(&source, &train_split, Some(3.0), seed).unwrap();
        let positives = source
            .samples
            .iter()
            .map(|s| train_split.samples.iter().filter(|t| t.label == s.label).count())
            .sum::<usize>();
        let all = source.len() * train_split.len();
        if pairs.positives() != positives || pairs.negatives() != (3 * positives).min(all - positives) {
            failures.push(format!("seed {seed}: {} positives, {} negatives", pairs.positives(), pairs.negatives()));
        }
        checked_pairs += pairs.len();
    }
    let detail = format!("20 seeds, 3 target samples per class, {checked_pairs} pairs at 3:1");
    let outcome = if failures.is_empty() { Ok(detail) } else { Err(format!("{detail}; {}", failures.join("; "))) };
    report(7, "protocol conformance", Duration::from_secs(1), started, outcome);
}
