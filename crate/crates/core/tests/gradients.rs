use cnf_core::data::Sample;
use cnf_core::loss::softmax_ce_sample;
use cnf_core::nn::gradcheck::{run_suite, STEP};
use cnf_core::nn::{ModelSpec, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_layer_matches_finite_differences() {
    let results = run_suite(20, 2024).unwrap();
    assert_eq!(results.len(), 9);
    for r in &results {
        assert!(r.instances >= 20);
        assert!(r.max_rel_err < 1e-6, "{}: {:e}", r.layer, r.max_rel_err);
    }
}

/// End-to-end check through a whole small network in the infer phase
/// (dropout is the identity there).
#[test]
fn network_backward_matches_finite_differences() {
    let spec = ModelSpec::from_layer_text(
        [1, 6, 6],
        3,
        "conv(2,3,same),relu,pool(2,mean),conv(3,2,valid),flatten,dense(5),relu,dense(3),softmax",
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = Network::init(spec, &mut rng).unwrap();
    let s = Sample {
        image: Tensor::new(vec![1, 6, 6], (0..36).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        label: 2,
        source_id: "x".into(),
    };
    let loss_of = |n: &Network| softmax_ce_sample(&n.logits(&s.image).unwrap(), s.label, 1.0).unwrap().0;
    let mut norng = ChaCha8Rng::seed_from_u64(0);
    let (logits, trace) = net.forward_train(&s.image, &mut norng).unwrap();
    let (_, g) = softmax_ce_sample(&logits, s.label, 1.0).unwrap();
    let grads = net.backward(&trace, &g).unwrap();
    let mut worst: f64 = 0.0;
    for (pi, pg) in grads.iter().enumerate() {
        for i in 0..pg.len() {
            let mut plus = net.clone();
            plus.params_mut()[pi].data_mut()[i] += STEP;
            let mut minus = net.clone();
            minus.params_mut()[pi].data_mut()[i] -= STEP;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * STEP);
            let a = pg.data()[i];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-7 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-5, "network gradient error {worst:e}");
}
