//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards
//! from the loss visits every node after all of its consumers.

use super::kernels::{conv2d_backward, conv2d_forward, ConvGeom};
use super::loss::{ce_backward, ce_forward, check_targets, ClassWeights};
use super::{NnError, Result, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sum(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    GlobalAvgPool(Var),
    Upsample2x(Var),
    Concat(Vec<Var>),
    SoftmaxCe {
        logits: Var,
        targets: Tensor,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

fn add_into(acc: &mut Option<Tensor>, shape: &[usize], delta: Vec<f64>) {
    match acc {
        Some(t) => {
            for (a, d) in t.data_mut().iter_mut().zip(delta) {
                *a += d;
            }
        }
        None => *acc = Some(Tensor::new(shape, delta).expect("gradient shape")),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(NnError::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf node; gradients are accumulated for it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(NnError::NonFinite("leaf"));
        }
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by [`Graph::backward`], if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        self.push(value, Op::Add(a, b), &[a, b], "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        self.push(value, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        self.push(value, Op::Relu(a), &[a], "relu")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(value, Op::Sum(a), &[a], "sum")
    }

    /// 2-D convolution. `w` is `(cout, cin, k, k)`, `b` is `(cout)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4("conv input")?;
        let (cout, wcin, kh, kw) = self.value(w).dims4("conv weight")?;
        if wcin != cin || kh != kw {
            return Err(NnError::Shape(format!(
                "conv weight {:?} incompatible with input {:?}",
                self.value(w).shape(),
                self.value(x).shape()
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(NnError::Shape(format!("conv bias {:?}", self.value(b).shape())));
            }
        }
        let geom = ConvGeom::new(cin, h, wd, kh, stride, pad)
            .ok_or_else(|| NnError::Shape(format!("kernel {kh} stride {stride} pad {pad} on {h}x{wd}")))?;
        let out = conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            n,
            cout,
            &geom,
        );
        let value = Tensor::new(&[n, cout, geom.ho, geom.wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(value, Op::Conv2d { x, w, b, geom }, &inputs, "conv2d")
    }

    /// `x (B, in) -> x w^T + b`, with `w (out, in)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, fin) = self.value(x).dims2("linear input")?;
        let (fout, win) = self.value(w).dims2("linear weight")?;
        if win != fin {
            return Err(NnError::Shape(format!(
                "linear weight {:?} vs input {:?}",
                self.value(w).shape(),
                self.value(x).shape()
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [fout] {
                return Err(NnError::Shape(format!("linear bias {:?}", self.value(b).shape())));
            }
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; batch * fout];
        for r in 0..batch {
            let xr = &xs[r * fin..(r + 1) * fin];
            for o in 0..fout {
                let dot: f64 = xr.iter().zip(&ws[o * fin..(o + 1) * fin]).map(|(a, b)| a * b).sum();
                out[r * fout + o] = dot + bs.map_or(0.0, |b| b[o]);
            }
        }
        let value = Tensor::new(&[batch, fout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(value, Op::Linear { x, w, b }, &inputs, "linear")
    }

    /// `(B, C, H, W) -> (B, C)` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("pool input")?;
        let area = (h * w) as f64;
        let out = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / area)
            .collect();
        let value = Tensor::new(&[n, c], out)?;
        self.push(value, Op::GlobalAvgPool(x), &[x], "global_avg_pool")
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("upsample input")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * 4 * h * w];
        for (p, plane) in src.chunks(h * w).enumerate() {
            let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
            for y in 0..2 * h {
                for xo in 0..2 * w {
                    dst[y * 2 * w + xo] = plane[(y / 2) * w + xo / 2];
                }
            }
        }
        let value = Tensor::new(&[n, c, 2 * h, 2 * w], out)?;
        self.push(value, Op::Upsample2x(x), &[x], "upsample2x")
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Shape("concat of nothing".into()))?;
        let s0 = self.value(*first).shape().to_vec();
        if s0.len() < 2 {
            return Err(NnError::Shape("concat needs rank >= 2".into()));
        }
        let mut width = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                return Err(NnError::Shape(format!("concat {s:?} with {s0:?}")));
            }
            width += s[1];
        }
        let inner: usize = s0[2..].iter().product();
        let outer = s0[0];
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[1] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = width;
        let value = Tensor::new(&shape, out)?;
        self.push(value, Op::Concat(parts.to_vec()), parts, "concat")
    }

    /// Mean weighted soft-target cross-entropy of `logits (B, C)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &Tensor, weights: &ClassWeights) -> Result<Var> {
        let (batch, classes) = self.value(logits).dims2("logits")?;
        if weights.len() != classes {
            return Err(NnError::Shape(format!(
                "{} class weights for {classes} classes",
                weights.len()
            )));
        }
        check_targets(targets, batch, classes)?;
        let (loss, probs) = ce_forward(self.value(logits).data(), targets.data(), weights.as_slice(), classes);
        let op = Op::SoftmaxCe {
            logits,
            targets: targets.clone(),
            weights: weights.as_slice().to_vec(),
            probs,
        };
        self.push(Tensor::scalar(loss), op, &[logits], "softmax_cross_entropy")
    }

    /// Populates gradients of `loss` on every reachable node that requires them.
    ///
    /// A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(NnError::Graph("graph already consumed by backward".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(NnError::Graph(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let shape = self.value(loss).shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::full(&shape, 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (v, delta) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                let shape = self.nodes[v.0].value.shape().to_vec();
                add_into(&mut self.nodes[v.0].grad, &shape, delta);
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[i];
        let gd = g.data();
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, gd.to_vec()), (*b, gd.to_vec())],
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                vec![
                    (*a, gd.iter().zip(bv).map(|(g, y)| g * y).collect()),
                    (*b, gd.iter().zip(av).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*a, d)]
            }
            Op::Sum(a) => vec![(*a, vec![g.item(); self.value(*a).numel()])],
            Op::Conv2d { x, w, b, geom } => {
                let (n, ..) = self.value(*x).dims4("conv input")?;
                let cout = self.value(*w).shape()[0];
                let (dx, dw, db) = conv2d_backward(self.value(*x).data(), self.value(*w).data(), gd, n, cout, geom);
                let mut v = vec![(*w, dw)];
                if rg(x) {
                    v.push((*x, dx));
                }
                if let Some(b) = b {
                    v.push((*b, db));
                }
                v
            }
            Op::Linear { x, w, b } => {
                let (batch, fin) = self.value(*x).dims2("linear input")?;
                let fout = self.value(*w).shape()[0];
                let (xs, ws) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = vec![0.0; batch * fin];
                let mut dw = vec![0.0; fout * fin];
                let mut db = vec![0.0; fout];
                for r in 0..batch {
                    for o in 0..fout {
                        let go = gd[r * fout + o];
                        db[o] += go;
                        let wrow = &ws[o * fin..(o + 1) * fin];
                        let xrow = &xs[r * fin..(r + 1) * fin];
                        for k in 0..fin {
                            dx[r * fin + k] += go * wrow[k];
                            dw[o * fin + k] += go * xrow[k];
                        }
                    }
                }
                let mut v = vec![(*x, dx), (*w, dw)];
                if let Some(b) = b {
                    v.push((*b, db));
                }
                v
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = self.value(*x).dims4("pool input")?;
                let area = (h * w) as f64;
                let mut dx = Vec::with_capacity(self.value(*x).numel());
                for &gv in gd {
                    dx.extend(std::iter::repeat_n(gv / area, h * w));
                }
                vec![(*x, dx)]
            }
            Op::Upsample2x(x) => {
                let (_, _, h, w) = self.value(*x).dims4("upsample input")?;
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (p, plane) in gd.chunks(4 * h * w).enumerate() {
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..2 * h {
                        for xo in 0..2 * w {
                            dst[(y / 2) * w + xo / 2] += plane[y * 2 * w + xo];
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::Concat(parts) => {
                let s0 = self.value(parts[0]).shape();
                let inner: usize = s0[2..].iter().product();
                let outer = s0[0];
                let width = node.value.shape()[1];
                let mut offset = 0;
                let mut v = Vec::with_capacity(parts.len());
                for p in parts {
                    let cw = self.value(*p).shape()[1];
                    let mut d = Vec::with_capacity(outer * cw * inner);
                    for o in 0..outer {
                        let base = (o * width + offset) * inner;
                        d.extend_from_slice(&gd[base..base + cw * inner]);
                    }
                    offset += cw;
                    v.push((*p, d));
                }
                v
            }
            Op::SoftmaxCe {
                logits,
                targets,
                weights,
                probs,
            } => {
                let classes = weights.len();
                let scale = g.item();
                let d = ce_backward(probs, targets.data(), weights, classes)
                    .into_iter()
                    .map(|v| v * scale)
                    .collect();
                vec![(*logits, d)]
            }
        };
        Ok(out)
    }
}
