use dage::experiment::{siamese_objective, Method, ObjectiveOptions, Stream};
use dage::gradcheck::{relative_error, small_dense_spec};
use dage::losses::{cross_entropy_grad, one_hot, LossWeights};
use dage::nn::{read_checkpoint, write_checkpoint, NetworkSpec, NetworkState, OptimizerConfig, StreamGradient};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

#[test]
fn duplicated_stream_doubles_the_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = small_dense_spec(6, 3);
    let state = NetworkState::init(&spec, 8).unwrap();
    let x = gaussian(&mut rng, 7, 6);
    let labels = [0, 1, 2, 0, 1, 2, 1];
    let y = one_hot(&labels, 3);

    let (phi_a, feat_a) = state.forward_features(x.view(), None).unwrap();
    let (p_a, cls_a) = state.forward_classifier(phi_a.view(), None).unwrap();
    let (phi_b, feat_b) = state.forward_features(x.view(), None).unwrap();
    let (p_b, cls_b) = state.forward_classifier(phi_b.view(), None).unwrap();
    assert_eq!(phi_a, phi_b);
    assert_eq!(p_a, p_b);

    // A symmetric embedding loss contributes the same upstream gradient to both copies.
    let g_phi = &phi_a * 0.3;
    let g_pred = cross_entropy_grad(y.view(), p_a.view()).unwrap();
    let stream = |features, classifier| StreamGradient {
        features,
        grad_phi: g_phi.view(),
        classifier: Some((classifier, g_pred.view())),
    };
    let single = state.backward(&[stream(&feat_a, &cls_a)]).unwrap();
    let double = state.backward(&[stream(&feat_a, &cls_a), stream(&feat_b, &cls_b)]).unwrap();
    for (s, d) in single.0.iter().zip(&double.0) {
        assert_eq!(&(s * 2.0), d);
    }
}

fn toy_batch(rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>, Array2<f64>, Vec<usize>) {
    let means = [[2.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0]];
    let sample = |rng: &mut ChaCha8Rng, n: usize, offset: f64| {
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let mut x = gaussian(rng, n, 4) * 0.7;
        for (mut row, &y) in x.rows_mut().into_iter().zip(&labels) {
            for (v, m) in row.iter_mut().zip(means[y]) {
                *v += m + offset;
            }
        }
        (x, labels)
    };
    let (xs, ys) = sample(rng, 12, 0.0);
    let (xt, yt) = sample(rng, 6, 0.5);
    (xs, ys, xt, yt)
}

fn descend(method: Method, seed: u64, steps: usize) -> (Vec<f64>, NetworkState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, ys, xt, yt) = toy_batch(&mut rng);
    let spec = small_dense_spec(4, 3);
    let mut state = NetworkState::init(&spec, seed).unwrap();
    let opts = ObjectiveOptions { weights: LossWeights::from_ratios(0.5, 0.5), ..ObjectiveOptions::default() };
    let opt = OptimizerConfig { learning_rate: 2e-3, momentum: 0.0, ..OptimizerConfig::default() };
    let mut losses = Vec::new();
    for _ in 0..=steps {
        let src = Stream { inputs: xs.view(), labels: &ys };
        let tgt = Stream { inputs: xt.view(), labels: &yt };
        let (loss, grads) = siamese_objective(&state, method, Some(src), Some(tgt), &opts, None).unwrap();
        losses.push(loss.value);
        state.sgd_step(&grads, &opt).unwrap();
    }
    (losses, state)
}

#[test]
fn full_batch_descent_lowers_the_joint_loss() {
    for method in [Method::DageLda, Method::Ccsa, Method::SourceOnly] {
        let (losses, _) = descend(method, 5, 50);
        let decreases = losses.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(decreases >= 45, "{method:?}: {decreases}/50 decreasing steps, {losses:?}");
        assert!(losses[50] < losses[0]);
    }
}

#[test]
fn training_is_bit_reproducible() {
    let (a, sa) = descend(Method::DageLda, 9, 20);
    let (b, sb) = descend(Method::DageLda, 9, 20);
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    let (c, _) = descend(Method::DageLda, 10, 20);
    assert_ne!(a, c);
}

#[test]
fn network_gradient_matches_finite_differences_on_a_two_layer_net() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (xs, ys, xt, yt) = toy_batch(&mut rng);
    let spec = NetworkSpec::mlp(4, &[5], 3);
    let mut state = NetworkState::init(&spec, 1).unwrap();
    let opts = ObjectiveOptions { weights: LossWeights::from_ratios(0.4, 0.7), ..ObjectiveOptions::default() };
    let eval = |s: &NetworkState| {
        let src = Stream { inputs: xs.view(), labels: &ys };
        let tgt = Stream { inputs: xt.view(), labels: &yt };
        siamese_objective(s, Method::DageLda, Some(src), Some(tgt), &opts, None).unwrap()
    };
    let (_, grads) = eval(&state);
    let h = 1e-6;
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for _ in 0..10 {
        let p = rng.random_range(0..grads.0.len());
        let (r, c) = (rng.random_range(0..grads.0[p].nrows()), rng.random_range(0..grads.0[p].ncols()));
        let original = state.params()[p][[r, c]];
        state.params_mut()[p][[r, c]] = original + h;
        let up = eval(&state).0.value;
        state.params_mut()[p][[r, c]] = original - h;
        let down = eval(&state).0.value;
        state.params_mut()[p][[r, c]] = original;
        analytic.push(grads.0[p][[r, c]]);
        numeric.push((up - down) / (2.0 * h));
    }
    let err = relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "relative error {err:e}");
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let spec = NetworkSpec::lenet([1, 16, 16], 10, 0.5);
    let state = NetworkState::init(&spec, 4).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &state).unwrap();
    let restored = read_checkpoint(bytes.as_slice()).unwrap();
    assert_eq!(restored.spec().hash(), spec.hash());
    let x = gaussian(&mut ChaCha8Rng::seed_from_u64(0), 3, 256);
    assert_eq!(restored.predict(x.view()).unwrap(), state.predict(x.view()).unwrap());
    assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut wrong_version = bytes.clone();
    wrong_version[8] ^= 0xff;
    assert!(read_checkpoint(wrong_version.as_slice()).is_err());
}
