mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{max_gradient_error, random_case};
use flowbundle::nn::{self, Activation, Loss, MinMaxScaler, MlpModel, OutputActivation, TrainingConfig};

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..40 {
        let (model, xs, ys, loss) = random_case(&mut rng);
        let err = max_gradient_error(&model, &xs, &ys, loss);
        assert!(
            err < 1e-4,
            "case {case}: relative error {err} for {:?}",
            model.layer_sizes()
        );
    }
}

#[test]
fn five_three_two_gradient_check() {
    let model = MlpModel::new(&[5, 3, 2], Activation::Tanh, OutputActivation::Softmax, 17).unwrap();
    let xs = vec![vec![0.1, -0.4, 0.9, 0.3, -0.2], vec![0.5, 0.5, -0.5, 0.0, 1.0]];
    let ys = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    assert!(max_gradient_error(&model, &xs, &ys, Loss::CrossEntropy) < 1e-4);
}

fn blobs(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % 2;
        let centre = if c == 0 { (0.25, 0.25) } else { (0.75, 0.75) };
        xs.push(vec![
            centre.0 + rng.random_range(-0.15..0.15),
            centre.1 + rng.random_range(-0.15..0.15),
        ]);
        labels.push(c);
    }
    (xs, labels)
}

#[test]
fn separable_blobs_are_fitted_and_generalise() {
    let (xs, labels) = blobs(1, 200);
    let targets = nn::one_hot(&labels, 2);
    let model = MlpModel::new(&[2, 3, 2], Activation::Relu, OutputActivation::Softmax, 4).unwrap();
    let cfg = TrainingConfig {
        epochs: 200,
        learning_rate: 0.5,
        ..TrainingConfig::default()
    };
    let trained = nn::train(model, &xs, &targets, &cfg).unwrap().model;
    let correct = xs
        .iter()
        .zip(&labels)
        .filter(|(x, &l)| trained.predict_class(x).unwrap() == l)
        .count();
    assert!(correct as f64 / xs.len() as f64 >= 0.99, "{correct}/200");
    assert_eq!(trained.predict_class(&[0.2, 0.3]).unwrap(), 0);
    assert_eq!(trained.predict_class(&[0.8, 0.7]).unwrap(), 1);
}

#[test]
fn zero_learning_rate_leaves_weights_untouched() {
    let (xs, labels) = blobs(2, 20);
    let model = MlpModel::new(&[2, 3, 2], Activation::Relu, OutputActivation::Softmax, 4).unwrap();
    let cfg = TrainingConfig {
        learning_rate: 0.0,
        epochs: 5,
        ..TrainingConfig::default()
    };
    let out = nn::train(model.clone(), &xs, &nn::one_hot(&labels, 2), &cfg).unwrap();
    assert_eq!(out.model, model);
    assert_eq!(out.loss_history.len(), 5);
}

#[test]
fn training_is_bit_for_bit_deterministic() {
    let (xs, labels) = blobs(3, 100);
    let targets = nn::one_hot(&labels, 2);
    let cfg = TrainingConfig {
        epochs: 30,
        batch_size: Some(16),
        seed: 5,
        ..TrainingConfig::default()
    };
    let run = || {
        let m = MlpModel::new(&[2, 4, 2], Activation::Tanh, OutputActivation::Softmax, 5).unwrap();
        nn::train(m, &xs, &targets, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(a.model, b.model);
}

#[test]
fn one_gradient_step_equals_the_plain_update_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (model, xs, ys, loss) = random_case(&mut rng);
    let lr = 0.3;
    let (_, grads) = nn::loss_and_gradients(&model, &xs, &ys, loss).unwrap();
    let cfg = TrainingConfig {
        learning_rate: lr,
        epochs: 1,
        loss,
        ..TrainingConfig::default()
    };
    let stepped = nn::train(model.clone(), &xs, &ys, &cfg).unwrap().model;
    for ((before, after), g) in model.layers.iter().zip(&stepped.layers).zip(&grads.layers) {
        for i in 0..before.weights.len() {
            assert!((after.weights[i] - (before.weights[i] - lr * g.weights[i])).abs() < 1e-12);
        }
        for i in 0..before.biases.len() {
            assert!((after.biases[i] - (before.biases[i] - lr * g.biases[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn diverging_training_reports_the_epoch() {
    let xs = vec![vec![1.0e6], vec![-1.0e6]];
    let ys = vec![vec![1.0e6], vec![-1.0e6]];
    let model = MlpModel::new(&[1, 1], Activation::Relu, OutputActivation::Identity, 0).unwrap();
    let cfg = TrainingConfig {
        learning_rate: 10.0,
        epochs: 50,
        loss: Loss::Mse,
        ..TrainingConfig::default()
    };
    match nn::train(model, &xs, &ys, &cfg) {
        Err(flowbundle::Error::Training { epoch, .. }) => assert!(epoch < 50),
        other => panic!("expected a training error, got {other:?}"),
    }
}

#[test]
fn saved_models_load_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let model = MlpModel::new(&[6, 4, 3], Activation::Sigmoid, OutputActivation::Softmax, 8).unwrap();
    model.save(&path).unwrap();
    assert_eq!(MlpModel::load(&path).unwrap(), model);
}

proptest! {
    #[test]
    fn softmax_outputs_form_a_distribution(seed in any::<u64>(), x in prop::collection::vec(-50.0f64..50.0, 4)) {
        let m = MlpModel::new(&[4, 6, 5], Activation::Tanh, OutputActivation::Softmax, seed).unwrap();
        let out = m.forward(&x).unwrap();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn scaler_maps_training_extremes_to_zero_and_one(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 2..30)) {
        let s = MinMaxScaler::fit(&rows).unwrap();
        let scaled = s.transform_all(&rows).unwrap();
        for c in 0..3 {
            if s.max[c] > s.min[c] {
                let col: Vec<f64> = scaled.iter().map(|r| r[c]).collect();
                prop_assert_eq!(col.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
                prop_assert_eq!(col.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
            }
        }
    }

    #[test]
    fn argmax_breaks_ties_low(values in prop::collection::vec(0u8..4, 1..10)) {
        let v: Vec<f64> = values.iter().map(|&x| f64::from(x)).collect();
        let best = nn::argmax(&v);
        prop_assert!(v.iter().all(|&x| x <= v[best]));
        prop_assert!(v[..best].iter().all(|&x| x < v[best]));
    }
}
