use malimg_core::augment::{
    apply_op, mixup, mixup_with, rng_stream, trivial_augment, LabeledBatch, MixupConfig, TaConfig, TaOp,
};
use malimg_core::nn::Tensor;
use proptest::prelude::*;
use rand::Rng;

const ALL_OPS: [TaOp; 14] = [
    TaOp::Identity,
    TaOp::Rotate,
    TaOp::ShearX,
    TaOp::ShearY,
    TaOp::TranslateX,
    TaOp::TranslateY,
    TaOp::Brightness,
    TaOp::Contrast,
    TaOp::Sharpness,
    TaOp::AutoContrast,
    TaOp::Equalize,
    TaOp::Posterize,
    TaOp::Solarize,
    TaOp::Color,
];

fn batch_from(seed: u64, b: usize, k: usize, side: usize, classes: usize) -> LabeledBatch {
    let mut rng = rng_stream(seed, 0);
    let images = Tensor::new(
        &[b, k, side, side],
        (0..b * k * side * side).map(|_| rng.gen_range(0.0..=1.0)).collect(),
    )
    .unwrap();
    let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..classes)).collect();
    LabeledBatch::one_hot(images, &labels, classes).unwrap()
}

fn in_hull(out: &[f64], a: &[f64], b: &[f64]) -> bool {
    out.iter()
        .zip(a.iter().zip(b))
        .all(|(&o, (&x, &y))| o >= x.min(y) && o <= x.max(y))
}

fn row(t: &Tensor, i: usize, n: usize) -> &[f64] {
    let stride = t.numel() / n;
    &t.data()[i * stride..(i + 1) * stride]
}

#[test]
fn mixup_needs_two_examples() {
    let one = batch_from(1, 1, 1, 4, 3);
    let cfg = MixupConfig {
        enabled: true,
        alpha: 0.2,
    };
    assert!(mixup(&one, &cfg, &mut rng_stream(1, 1)).is_err());
    let disabled = MixupConfig::default();
    assert_eq!(mixup(&one, &disabled, &mut rng_stream(1, 1)).unwrap(), one);
}

#[test]
fn trivial_augment_disabled_is_identity() {
    let b = batch_from(2, 3, 3, 8, 2);
    let out = trivial_augment(&b.images, &TaConfig::default(), &mut rng_stream(2, 2)).unwrap();
    assert_eq!(out, b.images);
}

#[test]
fn augmentation_streams_differ() {
    let b = batch_from(3, 4, 3, 8, 2);
    let cfg = TaConfig::enabled();
    let outs: Vec<Tensor> = (0..6)
        .map(|s| trivial_augment(&b.images, &cfg, &mut rng_stream(9, s)).unwrap())
        .collect();
    assert!(outs.windows(2).any(|w| w[0] != w[1]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixup_outputs_lie_in_convex_hull(seed in any::<u64>(), b in 2usize..6, lambda in 0.0f64..=1.0) {
        let batch = batch_from(seed, b, 2, 4, 3);
        let mut rng = rng_stream(seed, 1);
        let mut partner: Vec<usize> = (0..b).collect();
        rand::seq::SliceRandom::shuffle(&mut partner[..], &mut rng);
        let out = mixup_with(&batch, lambda, &partner).unwrap();
        for (i, &j) in partner.iter().enumerate() {
            prop_assert!(in_hull(row(&out.images, i, b), row(&batch.images, i, b), row(&batch.images, j, b)));
            prop_assert!(in_hull(row(&out.labels, i, b), row(&batch.labels, i, b), row(&batch.labels, j, b)));
            let s: f64 = row(&out.labels, i, b).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_mixup_stays_in_some_pairwise_hull(seed in any::<u64>(), b in 2usize..6, alpha in 0.05f64..2.0) {
        let batch = batch_from(seed, b, 1, 4, 4);
        let cfg = MixupConfig { enabled: true, alpha };
        let out = mixup(&batch, &cfg, &mut rng_stream(seed, 2)).unwrap();
        prop_assert_eq!(out.images.shape(), batch.images.shape());
        for i in 0..b {
            let ok = (0..b).any(|j| {
                in_hull(row(&out.images, i, b), row(&batch.images, i, b), row(&batch.images, j, b))
                    && in_hull(row(&out.labels, i, b), row(&batch.labels, i, b), row(&batch.labels, j, b))
            });
            prop_assert!(ok, "example {} outside every hull", i);
        }
        let again = mixup(&batch, &cfg, &mut rng_stream(seed, 2)).unwrap();
        prop_assert_eq!(again, out);
    }

    #[test]
    fn mixup_with_unit_weight_is_identity(seed in any::<u64>(), b in 2usize..6) {
        let batch = batch_from(seed, b, 3, 4, 3);
        let partner: Vec<usize> = (0..b).rev().collect();
        prop_assert_eq!(mixup_with(&batch, 1.0, &partner).unwrap(), batch);
    }

    #[test]
    fn every_op_preserves_range_and_shape(seed in any::<u64>(), op_index in 0usize..14, t in 0.0f64..=1.0, side in 3usize..12) {
        let op = ALL_OPS[op_index];
        let (lo, hi) = op.default_range();
        let m = lo + t * (hi - lo);
        let k = 3;
        let mut rng = rng_stream(seed, 3);
        let mut img: Vec<f64> = (0..k * side * side).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let len = img.len();
        apply_op(op, m, &mut img, k, side, side);
        prop_assert_eq!(img.len(), len);
        prop_assert!(img.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)), "{:?} m={}", op, m);
    }

    #[test]
    fn trivial_augment_is_reproducible_and_in_range(seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3])) {
        let batch = batch_from(seed, 3, k, 8, 2);
        let cfg = TaConfig::enabled();
        let a = trivial_augment(&batch.images, &cfg, &mut rng_stream(seed, 4)).unwrap();
        let b = trivial_augment(&batch.images, &cfg, &mut rng_stream(seed, 4)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.shape(), batch.images.shape());
        prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
