//! Desk-scale classifier: a strided conv backbone emitting C2..C5, an
//! optional top-down feature pyramid, and a pooled linear head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::loss::ClassWeights;
use super::{NnError, Result, Tensor};

/// Input height and width must be multiples of this (C5 is at stride 32).
pub const INPUT_DIVISOR: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub in_channels: usize,
    /// Channels of the stride-2 stem conv that precedes the four stages.
    pub stem_width: usize,
    /// Output channels of the stages producing C2, C3, C4, C5.
    pub widths: [usize; 4],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            stem_width: 8,
            widths: [8, 16, 32, 64],
        }
    }
}

impl BackboneConfig {
    /// Total stride of C2..C5 relative to the input.
    pub const fn strides() -> [usize; 4] {
        [4, 8, 16, 32]
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stem_width == 0 || self.widths.contains(&0) {
            return Err(NnError::Config(format!("non-positive width in {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    #[default]
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpnConfig {
    /// Channels of every pyramid level.
    pub width: usize,
    #[serde(default)]
    pub upsample: UpsampleMode,
}

impl Default for FpnConfig {
    fn default() -> Self {
        Self {
            width: 64,
            upsample: UpsampleMode::Nearest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub fpn: Option<FpnConfig>,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if let Some(f) = &self.fpn {
            if f.width == 0 {
                return Err(NnError::Config("FPN width must be positive".into()));
            }
        }
        if self.num_classes < 2 {
            return Err(NnError::Config("need at least two classes".into()));
        }
        Ok(())
    }

    fn head_inputs(&self) -> usize {
        match &self.fpn {
            Some(f) => 4 * f.width,
            None => self.backbone.widths[3],
        }
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let b = &self.backbone;
        let mut specs = vec![
            ("stem.weight".to_string(), vec![b.stem_width, b.in_channels, 3, 3]),
            ("stem.bias".to_string(), vec![b.stem_width]),
        ];
        let mut cin = b.stem_width;
        for (i, &w) in b.widths.iter().enumerate() {
            let s = i + 1;
            specs.push((format!("stage{s}.conv1.weight"), vec![w, cin, 3, 3]));
            specs.push((format!("stage{s}.conv1.bias"), vec![w]));
            specs.push((format!("stage{s}.conv2.weight"), vec![w, w, 3, 3]));
            specs.push((format!("stage{s}.conv2.bias"), vec![w]));
            cin = w;
        }
        if let Some(f) = &self.fpn {
            for (i, &w) in b.widths.iter().enumerate() {
                let level = i + 2;
                specs.push((format!("fpn.lateral{level}.weight"), vec![f.width, w, 1, 1]));
                specs.push((format!("fpn.lateral{level}.bias"), vec![f.width]));
            }
        }
        specs.push(("head.weight".to_string(), vec![self.num_classes, self.head_inputs()]));
        specs.push(("head.bias".to_string(), vec![self.num_classes]));
        specs
    }
}

/// Weight and bias of a conv or linear layer on a graph.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone)]
pub struct BackboneVars {
    pub stem: LayerVars,
    /// `[conv1, conv2]` of each stage.
    pub stages: [[LayerVars; 2]; 4],
}

/// Parameters bound onto a graph, in the same order as [`ModelConfig::param_specs`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub all: Vec<Var>,
    pub backbone: BackboneVars,
    pub laterals: Option<[LayerVars; 4]>,
    pub head: LayerVars,
}

/// Backbone feature maps: `[C2, C3, C4, C5]` at strides 4, 8, 16, 32.
pub fn forward_backbone(g: &mut Graph, p: &BackboneVars, x: Var) -> Result<[Var; 4]> {
    let (_, _, h, w) = g.value(x).dims4("backbone input")?;
    if h % INPUT_DIVISOR != 0 || w % INPUT_DIVISOR != 0 || h == 0 || w == 0 {
        return Err(NnError::Shape(format!(
            "input {h}x{w} is not divisible by {INPUT_DIVISOR}"
        )));
    }
    let mut a = g.conv2d(x, p.stem.weight, Some(p.stem.bias), 2, 1)?;
    a = g.relu(a)?;
    let mut feats = Vec::with_capacity(4);
    for [c1, c2] in &p.stages {
        a = g.conv2d(a, c1.weight, Some(c1.bias), 2, 1)?;
        a = g.relu(a)?;
        a = g.conv2d(a, c2.weight, Some(c2.bias), 1, 1)?;
        a = g.relu(a)?;
        feats.push(a);
    }
    Ok([feats[0], feats[1], feats[2], feats[3]])
}

/// Top-down fusion: `P5 = L5(C5)`, `P_i = L_i(C_i) + up2(P_{i+1})`.
pub fn fpn_fuse(g: &mut Graph, laterals: &[LayerVars; 4], c: [Var; 4]) -> Result<[Var; 4]> {
    for i in 0..3 {
        let (n, _, h, w) = g.value(c[i]).dims4("pyramid input")?;
        let (n2, _, h2, w2) = g.value(c[i + 1]).dims4("pyramid input")?;
        if n != n2 || h != 2 * h2 || w != 2 * w2 {
            return Err(NnError::Shape(format!(
                "C{} {:?} is not twice C{} {:?}",
                i + 2,
                g.value(c[i]).shape(),
                i + 3,
                g.value(c[i + 1]).shape()
            )));
        }
    }
    let top = g.conv2d(c[3], laterals[3].weight, Some(laterals[3].bias), 1, 0)?;
    let mut out = [top; 4];
    for i in (0..3).rev() {
        let lat = g.conv2d(c[i], laterals[i].weight, Some(laterals[i].bias), 1, 0)?;
        let up = g.upsample2x(out[i + 1])?;
        out[i] = g.add(lat, up)?;
    }
    Ok(out)
}

/// Global-average-pools each feature map, concatenates, and applies the linear head.
pub fn classify_head(g: &mut Graph, features: &[Var], head: &LayerVars) -> Result<Var> {
    let pooled = features
        .iter()
        .map(|f| g.global_avg_pool(*f))
        .collect::<Result<Vec<_>>>()?;
    let joined = if pooled.len() == 1 {
        pooled[0]
    } else {
        g.concat(&pooled)?
    };
    g.linear(joined, head.weight, Some(head.bias))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Model {
    /// Kaiming-uniform (fan-in) weights, zero biases.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (names, params) = config
            .param_specs()
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".bias") {
                    Tensor::zeros(&shape)
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                    Tensor::new(&shape, data).expect("spec shape")
                };
                (name, t)
            })
            .unzip();
        Ok(Self { config, names, params })
    }

    /// Assembles a model from named tensors that must match the config exactly.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let mut by_name: std::collections::HashMap<String, Tensor> = named.into_iter().collect();
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in config.param_specs() {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| NnError::Config(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(NnError::Shape(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            params.push(t);
        }
        Ok(Self { config, names, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.params[i])
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for p in &self.params {
            v.extend_from_slice(p.data());
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(NnError::Shape(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut at = 0;
        for p in &mut self.params {
            let n = p.numel();
            p.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Puts every parameter on `g`, tracked for gradients when `track`.
    pub fn bind(&self, g: &mut Graph, track: bool) -> Result<ModelVars> {
        let all = self
            .params
            .iter()
            .map(|t| g.leaf(t.clone(), track))
            .collect::<Result<Vec<_>>>()?;
        let layer = |i: usize| LayerVars {
            weight: all[i],
            bias: all[i + 1],
        };
        let stages = [0, 1, 2, 3].map(|s| [layer(2 + 4 * s), layer(4 + 4 * s)]);
        let mut next = 18;
        let laterals = self.config.fpn.as_ref().map(|_| {
            let l = [0, 1, 2, 3].map(|i| layer(next + 2 * i));
            next += 8;
            l
        });
        Ok(ModelVars {
            backbone: BackboneVars { stem: layer(0), stages },
            laterals,
            head: layer(next),
            all,
        })
    }

    /// Logits for a `(B, K, H, W)` input already on `g`.
    pub fn forward(&self, g: &mut Graph, vars: &ModelVars, x: Var) -> Result<Var> {
        let c = forward_backbone(g, &vars.backbone, x)?;
        match &vars.laterals {
            Some(lat) => {
                let p = fpn_fuse(g, lat, c)?;
                classify_head(g, &p, &vars.head)
            }
            None => classify_head(g, &c[3..], &vars.head),
        }
    }

    /// Logits without gradient tracking.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let x = g.input(images.clone())?;
        let logits = self.forward(&mut g, &vars, x)?;
        Ok(g.value(logits).clone())
    }

    /// Mean loss on a batch and its gradient as a flat vector.
    pub fn loss_and_grad(&self, images: &Tensor, targets: &Tensor, weights: &ClassWeights) -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, true)?;
        let x = g.input(images.clone())?;
        let logits = self.forward(&mut g, &vars, x)?;
        let loss = g.softmax_cross_entropy(logits, targets, weights)?;
        g.backward(loss)?;
        let mut grad = Vec::with_capacity(self.num_params());
        for (v, p) in vars.all.iter().zip(&self.params) {
            match g.grad(*v) {
                Some(t) => grad.extend_from_slice(t.data()),
                None => grad.extend(std::iter::repeat_n(0.0, p.numel())),
            }
        }
        Ok((g.value(loss).item(), grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(fpn: bool) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                in_channels: 3,
                stem_width: 4,
                widths: [8, 16, 32, 64],
            },
            fpn: fpn.then(FpnConfig::default),
            num_classes: 43,
        }
    }

    #[test]
    fn backbone_shapes_follow_stride_chain() {
        let model = Model::new(cfg(false), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false).unwrap();
        let x = g.input(Tensor::full(&[2, 3, 256, 256], 0.5)).unwrap();
        let c = forward_backbone(&mut g, &vars.backbone, x).unwrap();
        let expect = [[2, 8, 64, 64], [2, 16, 32, 32], [2, 32, 16, 16], [2, 64, 8, 8]];
        for (ci, e) in c.iter().zip(expect) {
            assert_eq!(g.value(*ci).shape(), &e);
        }
    }

    #[test]
    fn small_input_reaches_two_by_two() {
        let mut c = cfg(false);
        c.backbone.in_channels = 1;
        let model = Model::new(c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false).unwrap();
        let x = g.input(Tensor::zeros(&[1, 1, 64, 64])).unwrap();
        let feats = forward_backbone(&mut g, &vars.backbone, x).unwrap();
        assert_eq!(&g.value(feats[3]).shape()[2..], &[2, 2]);
        // zero input, zero biases
        for f in feats {
            assert!(g.value(f).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn indivisible_input_rejected() {
        let model = Model::new(cfg(false), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false).unwrap();
        let x = g.input(Tensor::zeros(&[1, 3, 48, 64])).unwrap();
        assert!(matches!(
            forward_backbone(&mut g, &vars.backbone, x),
            Err(NnError::Shape(_))
        ));
    }

    #[test]
    fn logits_have_class_count_columns() {
        for fpn in [false, true] {
            let model = Model::new(cfg(fpn), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let logits = model.predict(&Tensor::full(&[3, 3, 64, 64], 0.25)).unwrap();
            assert_eq!(logits.shape(), &[3, 43]);
        }
    }

    #[test]
    fn flat_roundtrip_and_named_reassembly() {
        let mut model = Model::new(cfg(true), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let flat: Vec<f64> = (0..model.num_params()).map(|i| i as f64 * 1e-3).collect();
        model.set_flat(&flat).unwrap();
        assert_eq!(model.flat(), flat);
        let named = model.named_params().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let again = Model::from_named(cfg(true), named).unwrap();
        assert_eq!(again, model);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = Model::new(cfg(true), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = Model::new(cfg(true), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.param("stem.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }
}
