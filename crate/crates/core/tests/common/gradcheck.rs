//! Central-difference gradient checks against the autodiff graph.

use malimg_core::nn::{cross_entropy, BackboneConfig, ClassWeights, FpnConfig, Graph, Model, ModelConfig, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{max_rel_err, numeric_grad};

pub const GRAD_TOL: f64 = 1e-4;
pub const REL_FLOOR: f64 = 1e-6;

/// Values in `±[0.05, 1)`, away from the ReLU kink.
pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

type Build = dyn Fn(&mut Graph, &[Var]) -> Var;

/// Scalar probe `sum(out * r)` for a fixed `r`.
fn probe(inputs: &[Tensor], r: &Tensor, build: &Build, track: bool) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), track).unwrap()).collect();
    let out = build(&mut g, &vars);
    let rv = g.input(r.clone()).unwrap();
    let prod = g.mul(out, rv).unwrap();
    let loss = g.sum(prod).unwrap();
    let value = g.value(loss).item();
    if !track {
        return (value, Vec::new());
    }
    g.backward(loss).unwrap();
    let grads = vars
        .iter()
        .map(|v| {
            g.grad(*v)
                .map_or_else(|| vec![0.0; g.value(*v).numel()], |t| t.data().to_vec())
        })
        .collect();
    (value, grads)
}

/// Worst relative error over every input of one op.
pub fn op_error(inputs: Vec<Tensor>, build: &Build, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone()).unwrap()).collect();
        let out = build(&mut g, &vars);
        g.value(out).shape().to_vec()
    };
    let r = random(&shape, &mut rng);
    let (_, analytic) = probe(&inputs, &r, build, true);
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let numeric = numeric_grad(input.data(), |x| {
            let mut moved = inputs.clone();
            moved[k] = Tensor::new(input.shape(), x.to_vec()).unwrap();
            probe(&moved, &r, build, false).0
        });
        worst = worst.max(max_rel_err(&analytic[k], &numeric, REL_FLOOR));
    }
    worst
}

/// Every differentiable graph op, as `(name, worst relative error)`.
pub fn op_suite() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    let a = random(&[2, 3], &mut rng);
    let b = random(&[2, 3], &mut rng);
    out.push((
        "add".into(),
        op_error(vec![a.clone(), b.clone()], &|g, v| g.add(v[0], v[1]).unwrap(), 2),
    ));
    out.push((
        "mul".into(),
        op_error(vec![a, b], &|g, v| g.mul(v[0], v[1]).unwrap(), 3),
    ));
    let r = random(&[3, 5], &mut rng);
    out.push(("relu".into(), op_error(vec![r], &|g, v| g.relu(v[0]).unwrap(), 5)));

    let x = random(&[2, 3, 6, 6], &mut rng);
    let w = random(&[4, 3, 3, 3], &mut rng);
    let bias = random(&[4], &mut rng);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
        let err = op_error(
            vec![x.clone(), w.clone(), bias.clone()],
            &move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap(),
            7 + stride as u64,
        );
        out.push((format!("conv2d s{stride} p{pad}"), err));
    }
    let w1 = random(&[2, 3, 1, 1], &mut rng);
    out.push((
        "conv2d 1x1".into(),
        op_error(
            vec![x.clone(), w1],
            &|g, v| g.conv2d(v[0], v[1], None, 1, 0).unwrap(),
            11,
        ),
    ));

    let lx = random(&[3, 5], &mut rng);
    let lw = random(&[4, 5], &mut rng);
    let lb = random(&[4], &mut rng);
    out.push((
        "linear".into(),
        op_error(vec![lx, lw, lb], &|g, v| g.linear(v[0], v[1], Some(v[2])).unwrap(), 13),
    ));

    let p = random(&[2, 3, 4, 4], &mut rng);
    out.push((
        "global_avg_pool".into(),
        op_error(vec![p.clone()], &|g, v| g.global_avg_pool(v[0]).unwrap(), 15),
    ));
    out.push((
        "upsample2x".into(),
        op_error(vec![p], &|g, v| g.upsample2x(v[0]).unwrap(), 16),
    ));
    let c1 = random(&[2, 3], &mut rng);
    let c2 = random(&[2, 5], &mut rng);
    out.push((
        "concat".into(),
        op_error(vec![c1, c2], &|g, v| g.concat(&[v[0], v[1]]).unwrap(), 17),
    ));
    out.push(("softmax_cross_entropy".into(), soft_ce_error(18)));
    out
}

/// Weighted soft-target cross-entropy against its own forward value.
pub fn soft_ce_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = random(&[4, 3], &mut rng);
    let mut targets = Vec::new();
    for _ in 0..4 {
        let lam: f64 = rng.gen_range(0.0..1.0);
        let (i, j) = (rng.gen_range(0..3), rng.gen_range(0..3));
        let mut row = [0.0; 3];
        row[i] += lam;
        row[j] += 1.0 - lam;
        targets.extend(row);
    }
    let targets = Tensor::new(&[4, 3], targets).unwrap();
    let weights = ClassWeights::new(vec![0.5, 2.0, 1.25]).unwrap();
    let loss = |x: &[f64]| cross_entropy(&Tensor::new(&[4, 3], x.to_vec()).unwrap(), &targets, &weights).unwrap();
    let mut g = Graph::new();
    let v = g.param(logits.clone()).unwrap();
    let l = g.softmax_cross_entropy(v, &targets, &weights).unwrap();
    assert!((g.value(l).item() - loss(logits.data())).abs() < 1e-12);
    g.backward(l).unwrap();
    max_rel_err(g.grad(v).unwrap().data(), &numeric_grad(logits.data(), loss), REL_FLOOR)
}

pub fn tiny_config(fpn: bool, in_channels: usize) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            in_channels,
            stem_width: 2,
            widths: [2, 3, 3, 4],
        },
        fpn: fpn.then_some(FpnConfig {
            width: 2,
            ..FpnConfig::default()
        }),
        num_classes: 3,
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * classes + l] = 1.0;
    }
    t
}

/// Worst relative error of the whole backbone (+ pyramid) + head gradient.
pub fn model_error(fpn: bool, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::new(tiny_config(fpn, 1), &mut rng).unwrap();
    let images = Tensor::new(&[2, 1, 32, 32], (0..2048).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let targets = one_hot(&[0, 2], 3);
    let weights = ClassWeights::new(vec![1.0, 0.7, 1.6]).unwrap();
    let (_, analytic) = model.loss_and_grad(&images, &targets, &weights).unwrap();
    let mut probe = model.clone();
    let numeric = numeric_grad(&model.flat(), |x| {
        probe.set_flat(x).unwrap();
        cross_entropy(&probe.predict(&images).unwrap(), &targets, &weights).unwrap()
    });
    max_rel_err(&analytic, &numeric, REL_FLOOR)
}
