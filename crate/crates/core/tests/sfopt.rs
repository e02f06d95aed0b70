mod common;

use common::{SfParams, SfReference};
use malimg_core::sfopt::{adamw_step, AdamWHyper, AdamWState, ScheduleFree, SfHyper};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hyper(p: &SfParams) -> SfHyper {
    SfHyper {
        lr: p.lr,
        weight_decay: p.weight_decay,
        warmup_steps: p.warmup,
        beta1: p.beta1,
        beta2: p.beta2,
        eps: p.eps,
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn trajectories_match_straight_line_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for traj in 0..100 {
        let dim = rng.gen_range(1..8);
        let p = SfParams {
            lr: rng.gen_range(1e-4..0.1),
            weight_decay: if traj % 3 == 0 { 0.0 } else { rng.gen_range(0.0..0.1) },
            warmup: [0, 1, 10, 40][traj % 4],
            beta1: rng.gen_range(0.0..0.99),
            beta2: rng.gen_range(0.9..0.9999),
            eps: 1e-8,
        };
        let theta0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut opt = ScheduleFree::new(hyper(&p), &theta0).unwrap();
        let mut reference = SfReference::new(p, &theta0);
        for step in 0..50 {
            let y = opt.eval_point();
            let y_ref = reference.y();
            for (a, b) in y.iter().zip(&y_ref) {
                assert!(close(*a, *b, 1e-12), "traj {traj} step {step}: y {a} vs {b}");
            }
            // Noisy quadratic gradient taken at the reference point.
            let g: Vec<f64> = y_ref
                .iter()
                .zip(&target)
                .map(|(y, t)| (y - t) + rng.gen_range(-0.5..0.5))
                .collect();
            opt.step(&g).unwrap();
            reference.step(&g);
            for i in 0..dim {
                assert!(
                    close(opt.state.x[i], reference.x[i], 1e-12),
                    "traj {traj} step {step}: x"
                );
                assert!(
                    close(opt.state.z[i], reference.z[i], 1e-12),
                    "traj {traj} step {step}: z"
                );
                assert!(
                    close(opt.state.v[i], reference.v[i], 1e-12),
                    "traj {traj} step {step}: v"
                );
            }
        }
        assert_eq!(opt.state.t, 50);
    }
}

#[test]
fn parameters_are_step_size_weighted_average_of_iterates() {
    let p = SfParams {
        lr: 0.01,
        weight_decay: 0.01,
        warmup: 500,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let theta0: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut opt = ScheduleFree::new(hyper(&p), &theta0).unwrap();
    let mut weighted = vec![0.0; 3];
    let mut weight_sum = 0.0;
    for t in 1..=10_000u64 {
        let y = opt.eval_point();
        let g: Vec<f64> = y.iter().map(|v| 2.0 * v + rng.gen_range(-1.0..1.0)).collect();
        opt.step(&g).unwrap();
        let lr = opt.hyper.lr_at(t);
        for (w, z) in weighted.iter_mut().zip(&opt.state.z) {
            *w += lr * lr * z;
        }
        weight_sum += lr * lr;
        if t.is_multiple_of(1000) {
            for (x, w) in opt.state.x.iter().zip(&weighted) {
                let avg = w / weight_sum;
                assert!(close(*x, avg, 1e-10), "t={t}: {x} vs {avg}");
            }
        }
    }
}

#[test]
fn warmup_is_linear_then_flat() {
    for lr in [0.01, 0.001, 0.005] {
        let h = SfHyper {
            lr,
            warmup_steps: 1000,
            ..SfHyper::default()
        };
        for t in 1..=3000u64 {
            let expect = if t < 1000 { lr * (t as f64 / 1000.0) } else { lr };
            assert_eq!(h.lr_at(t), expect, "lr {lr} t {t}");
        }
        assert_eq!(h.lr_at(500), lr / 2.0);
    }
}

#[test]
fn converges_on_ill_conditioned_quadratic() {
    let dim = 10;
    let curv: Vec<f64> = (0..dim).map(|i| 100f64.powf(i as f64 / (dim - 1) as f64)).collect();
    let optimum: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.7).sin()).collect();
    let loss = |x: &[f64]| -> f64 { (0..dim).map(|i| 0.5 * curv[i] * (x[i] - optimum[i]).powi(2)).sum() };
    let h = SfHyper {
        lr: 0.01,
        weight_decay: 0.0,
        warmup_steps: 0,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt = ScheduleFree::new(h, &vec![0.0; dim]).unwrap();
    let start = loss(opt.params());
    let mut reached = None;
    for t in 1..=5000 {
        let y = opt.eval_point();
        let g: Vec<f64> = (0..dim).map(|i| curv[i] * (y[i] - optimum[i])).collect();
        opt.step(&g).unwrap();
        if loss(opt.params()) < 1e-6 {
            reached = Some(t);
            break;
        }
    }
    assert!(reached.is_some(), "loss {start} -> {}", loss(opt.params()));
}

/// Straight-line AdamW.
fn adamw_reference(h: &AdamWHyper, p: &mut [f64], m: &mut [f64], v: &mut [f64], t: i32, g: &[f64]) {
    for i in 0..p.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let mh = m[i] / (1.0 - h.beta1.powi(t));
        let vh = v[i] / (1.0 - h.beta2.powi(t));
        p[i] -= h.lr * (mh / (vh.sqrt() + h.eps) + h.weight_decay * p[i]);
    }
}

#[test]
fn adamw_matches_straight_line_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..50 {
        let h = AdamWHyper {
            lr: rng.gen_range(1e-4..0.05),
            weight_decay: rng.gen_range(0.0..0.1),
            beta1: rng.gen_range(0.5..0.99),
            beta2: rng.gen_range(0.9..0.9999),
            eps: 1e-8,
        };
        let n = 5;
        let mut state = AdamWState::new(h.clone(), n).unwrap();
        let mut params: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut rp = params.clone();
        let (mut rm, mut rv) = (vec![0.0; n], vec![0.0; n]);
        for t in 1..=50 {
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            adamw_step(&mut state, &g, &mut params).unwrap();
            adamw_reference(&h, &mut rp, &mut rm, &mut rv, t, &g);
            for i in 0..n {
                assert!(close(params[i], rp[i], 1e-12));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_gradient_without_decay_is_a_fixpoint(theta in proptest::collection::vec(-10.0f64..10.0, 1..6), steps in 1usize..20) {
        let h = SfHyper { weight_decay: 0.0, warmup_steps: 3, ..SfHyper::default() };
        let mut opt = ScheduleFree::new(h, &theta).unwrap();
        for _ in 0..steps {
            opt.step(&vec![0.0; theta.len()]).unwrap();
        }
        prop_assert_eq!(opt.params(), &theta[..]);
        prop_assert_eq!(&opt.state.z, &theta);
    }

    #[test]
    fn eval_point_lies_between_iterates(theta in proptest::collection::vec(-10.0f64..10.0, 1..6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = ScheduleFree::new(SfHyper { warmup_steps: 0, ..SfHyper::default() }, &theta).unwrap();
        for _ in 0..5 {
            let g: Vec<f64> = theta.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            opt.step(&g).unwrap();
        }
        let y = opt.eval_point();
        for ((y, x), z) in y.iter().zip(&opt.state.x).zip(&opt.state.z) {
            prop_assert!(*y >= x.min(*z) - 1e-12 && *y <= x.max(*z) + 1e-12);
        }
    }
}
