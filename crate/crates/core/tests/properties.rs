use std::collections::HashSet;

use cnf_core::data::{augment, encode_pgm, hflip, parse_pgm, resize_bilinear, split_dataset, AugmentConfig, Sample};
use cnf_core::eval::{accuracy, classification_report, sensitivity, class_confusion, ConfusionMatrix};
use cnf_core::nn::ops::softmax;
use cnf_core::nn::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize, vals: &[f64]) -> Tensor {
    Tensor::new(vec![1, h, w], vals[..h * w].to_vec()).unwrap()
}

proptest! {
    #[test]
    fn resize_stays_within_input_range(
        h in 1usize..8, w in 1usize..8, oh in 1usize..12, ow in 1usize..12,
        vals in prop::collection::vec(0.0f64..1.0, 64),
    ) {
        let img = image(h, w, &vals);
        let lo = img.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = img.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = resize_bilinear(&img, oh, ow).unwrap();
        prop_assert_eq!(out.shape(), &[1, oh, ow][..]);
        prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn hflip_is_an_involution(h in 1usize..8, w in 1usize..8, vals in prop::collection::vec(-1.0f64..1.0, 64)) {
        let img = image(h, w, &vals);
        prop_assert_eq!(hflip(&hflip(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn augmentation_keeps_shape_label_and_range(
        side in 4usize..12, seed in any::<u64>(), label in 0usize..4,
        vals in prop::collection::vec(0.0f64..1.0, 144),
    ) {
        let s = Sample { image: image(side, side, &vals), label, source_id: "s".into() };
        let cfg = AugmentConfig { multiplier: 3, shear_deg: Some((-45.0, 45.0)), scale: Some((0.5, 2.0)), ..AugmentConfig::default() };
        for a in augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap() {
            prop_assert_eq!(a.label, label);
            prop_assert_eq!(a.image.shape(), s.image.shape());
            prop_assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn split_is_a_partition(
        labels in prop::collection::vec(0usize..3, 6..60), frac in 0.05f64..0.95,
        seed in any::<u64>(), stratified in any::<bool>(),
    ) {
        let samples: Vec<Sample> = labels.iter().enumerate()
            .map(|(i, &l)| Sample { image: Tensor::zeros(&[1, 1, 1]), label: l, source_id: format!("id{i}") })
            .collect();
        let counts: Vec<usize> = (0..3).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
        let res = split_dataset(&samples, frac, &mut ChaCha8Rng::seed_from_u64(seed), stratified);
        if stratified && counts.iter().any(|&c| c == 1) {
            prop_assert!(res.is_err());
        } else {
            let (train, val) = res.unwrap();
            prop_assert_eq!(train.len() + val.len(), samples.len());
            let a: HashSet<_> = train.iter().map(|s| s.source_id.clone()).collect();
            let b: HashSet<_> = val.iter().map(|s| s.source_id.clone()).collect();
            prop_assert!(a.is_disjoint(&b));
            prop_assert_eq!(a.len() + b.len(), samples.len());
            let again = split_dataset(&samples, frac, &mut ChaCha8Rng::seed_from_u64(seed), stratified).unwrap();
            prop_assert_eq!(again.0, train);
        }
    }

    #[test]
    fn pgm_round_trip_at_full_precision(h in 1usize..6, w in 1usize..6, levels in prop::collection::vec(0u16..=65535, 36)) {
        let vals: Vec<f64> = levels.iter().map(|&l| f64::from(l) / 65535.0).collect();
        let img = image(h, w, &vals);
        prop_assert_eq!(parse_pgm(&encode_pgm(&img, 65535).unwrap()).unwrap(), img);
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-500.0f64..500.0, 1..10)) {
        let p = softmax(&Tensor::from_vec(z));
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        prop_assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn confusion_identities(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = ConfusionMatrix::from_predictions(&t, &p, 4).unwrap();
        prop_assert_eq!(cm.total() as usize, t.len());
        let rep = classification_report(&cm).unwrap();
        prop_assert_eq!(rep.classes.iter().map(|c| c.support).sum::<u64>(), cm.total());
        let acc = accuracy(&cm).unwrap();
        let via_recall: f64 = rep.classes.iter().map(|c| c.support as f64 * c.recall).sum::<f64>() / cm.total() as f64;
        prop_assert!((acc - via_recall).abs() < 1e-12);
        for c in &rep.classes {
            for m in [c.precision, c.recall, c.f1] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }
        for k in 0..4 {
            prop_assert_eq!(sensitivity(&cm, k).unwrap(), class_confusion(&cm, k, k).unwrap());
        }
    }
}
