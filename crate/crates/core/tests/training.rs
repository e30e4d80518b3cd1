use cnf_core::data::Sample;
use cnf_core::nn::{ModelSpec, Tensor};
use cnf_core::train::{
    evaluate_model, train, Checkpoint, EarlyStoppingConfig, OptimizerConfig, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_points() -> Vec<Sample> {
    let pts = [
        (0.9, 0.8, 0),
        (0.7, 0.9, 0),
        (0.8, 0.6, 0),
        (0.6, 0.7, 0),
        (-0.9, -0.8, 1),
        (-0.7, -0.6, 1),
        (-0.6, -0.9, 1),
        (-0.8, -0.7, 1),
    ];
    pts.iter()
        .enumerate()
        .map(|(i, &(x, y, label))| Sample {
            image: Tensor::new(vec![1, 1, 2], vec![x, y]).unwrap(),
            label,
            source_id: format!("p{i}"),
        })
        .collect()
}

fn dense_model() -> ModelSpec {
    ModelSpec::from_layer_text([1, 1, 2], 2, "flatten,dense(2),softmax").unwrap()
}

fn random_images(n: usize, classes: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Sample {
            image: Tensor::new(vec![1, 8, 8], (0..64).map(|_| rng.random::<f64>()).collect()).unwrap(),
            label: i % classes,
            source_id: i.to_string(),
        })
        .collect()
}

fn small_cnn() -> ModelSpec {
    ModelSpec::from_layer_text(
        [1, 8, 8],
        4,
        "conv(4,3,same),relu,pool(2,max),flatten,dropout(0.25),dense(16),relu,dense(4),softmax",
    )
    .unwrap()
}

#[test]
fn separable_toy_set_reaches_full_accuracy() {
    let data = toy_points();
    let cfg = TrainConfig {
        epochs_max: 50,
        batch_size: 4,
        optimizer: OptimizerConfig::adam(0.05),
        early_stopping: EarlyStoppingConfig {
            enabled: false,
            ..Default::default()
        },
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&dense_model(), &data, &data, &cfg).unwrap();
    assert_eq!(out.history.len(), 50);
    assert_eq!(evaluate_model(&out.network, &data).unwrap().accuracy, 1.0);
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let data = toy_points();
    let cfg = TrainConfig {
        epochs_max: 1,
        optimizer: OptimizerConfig::Sgd { alpha: 0.0 },
        seed: 5,
        ..TrainConfig::default()
    };
    let out = train(&dense_model(), &data, &data, &cfg).unwrap();
    assert_eq!(out.history.len(), 1);
    let init = cnf_core::nn::Network::init(dense_model(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(out.network.params(), init.params());
}

#[test]
fn same_seed_is_bitwise_reproducible_across_thread_counts() {
    let data = random_images(24, 4, 1);
    let cfg = TrainConfig {
        epochs_max: 3,
        batch_size: 8,
        seed: 42,
        ..TrainConfig::default()
    };
    let a = train(&small_cnn(), &data[..16], &data[16..], &cfg).unwrap();
    let b = train(&small_cnn(), &data[..16], &data[16..], &TrainConfig { threads: 3, ..cfg.clone() }).unwrap();
    assert_eq!(a.network.params(), b.network.params());
    for (x, y) in a.history.records.iter().zip(&b.history.records) {
        assert!(x.same_metrics(y));
    }
}

#[test]
fn first_epoch_loss_is_near_uniform() {
    let data = random_images(40, 4, 2);
    let cfg = TrainConfig {
        epochs_max: 1,
        batch_size: 40,
        optimizer: OptimizerConfig::adam(1e-5),
        seed: 9,
        ..TrainConfig::default()
    };
    let out = train(&small_cnn(), &data, &data, &cfg).unwrap();
    let l = out.history.records[0].train_loss;
    let ln_k = 4f64.ln();
    assert!((0.8 * ln_k..=1.3 * ln_k).contains(&l), "first-epoch loss {l}");
}

#[test]
fn history_length_respects_early_stopping() {
    let data = random_images(16, 4, 3);
    let cfg = TrainConfig {
        epochs_max: 40,
        batch_size: 8,
        optimizer: OptimizerConfig::adam(0.01),
        early_stopping: EarlyStoppingConfig {
            enabled: true,
            patience: 2,
            min_delta: 0.0,
        },
        seed: 1,
        ..TrainConfig::default()
    };
    // Random labels on disjoint halves: validation loss cannot keep improving.
    let out = train(&small_cnn(), &data[..8], &data[8..], &cfg).unwrap();
    let n = out.history.len();
    assert!(n >= 3 && n < 40, "history length {n}");
    let best = out.best.epoch as usize;
    let best_val = out.history.records[best - 1].val_loss;
    assert!(out.history.records.iter().all(|r| r.val_loss >= best_val));
    assert_eq!(evaluate_model(&out.network, &data[8..]).unwrap().loss, best_val);
}

#[test]
fn reloaded_checkpoint_predicts_identically() {
    let data = random_images(16, 4, 4);
    let cfg = TrainConfig {
        epochs_max: 2,
        batch_size: 8,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = train(&small_cnn(), &data[..12], &data[12..], &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    out.best.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes(), out.best.to_bytes());
    assert_eq!(back.config_digest, cfg.digest());
    let a = evaluate_model(&out.network, &data).unwrap();
    let b = evaluate_model(&back.network().unwrap(), &data).unwrap();
    assert_eq!(a, b);
}

#[test]
fn uniform_outputs_predict_class_zero() {
    let spec = ModelSpec::from_layer_text([1, 1, 2], 4, "flatten,dense(4),softmax").unwrap();
    let params = vec![Tensor::zeros(&[4, 2]), Tensor::zeros(&[4])];
    let net = cnf_core::nn::Network::from_parts(spec, params).unwrap();
    let data: Vec<Sample> = (0..10)
        .map(|i| Sample {
            image: Tensor::new(vec![1, 1, 2], vec![0.1 * i as f64, 0.0]).unwrap(),
            label: [0, 1, 2, 3, 0][i % 5],
            source_id: i.to_string(),
        })
        .collect();
    let ev = evaluate_model(&net, &data).unwrap();
    assert!(ev.predictions.iter().all(|&p| p == 0));
    assert_eq!(ev.accuracy, 0.4);
    assert!((ev.loss - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn non_finite_loss_aborts_with_location() {
    let mut data = toy_points();
    data[0].image.data_mut()[0] = f64::NAN;
    let cfg = TrainConfig {
        epochs_max: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let err = train(&dense_model(), &data, &data, &cfg).unwrap_err();
    assert!(matches!(err, cnf_core::Error::NonFiniteLoss { epoch: 1, batch: 1 }), "{err}");
}
