use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::{AugmentError, Result};
use crate::nn::{Tensor, TARGET_SUM_TOL};

/// Images `(B, K, H, W)` with soft labels `(B, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub images: Tensor,
    pub labels: Tensor,
}

impl LabeledBatch {
    pub fn new(images: Tensor, labels: Tensor) -> Result<Self> {
        let (b, ..) = images.dims4("images").map_err(|e| AugmentError::Shape(e.to_string()))?;
        let (lb, c) = labels.dims2("labels").map_err(|e| AugmentError::Shape(e.to_string()))?;
        if c == 0 {
            return Err(AugmentError::Shape("labels need at least one class".into()));
        }
        if b != lb {
            return Err(AugmentError::Shape(format!("{b} images but {lb} label rows")));
        }
        for row in labels.data().chunks(c) {
            if (row.iter().sum::<f64>() - 1.0).abs() > TARGET_SUM_TOL {
                return Err(AugmentError::Shape("label row is not a distribution".into()));
            }
        }
        Ok(Self { images, labels })
    }

    /// One-hot labels for class indices.
    pub fn one_hot(images: Tensor, classes: &[usize], num_classes: usize) -> Result<Self> {
        let mut labels = Tensor::zeros(&[classes.len(), num_classes]);
        for (b, &c) in classes.iter().enumerate() {
            if c >= num_classes {
                return Err(AugmentError::Shape(format!("class {c} >= {num_classes}")));
            }
            labels.data_mut()[b * num_classes + c] = 1.0;
        }
        Self::new(images, labels)
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixupConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Concentration of the symmetric `Beta(alpha, alpha)` mixing weight.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.2
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            alpha: default_alpha(),
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(AugmentError::Config(format!(
                "mixup alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

fn blend(a: &[f64], b: &[f64], lambda: f64, out: &mut [f64]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        let v = lambda * x + (1.0 - lambda) * y;
        *o = v.clamp(x.min(y), x.max(y));
    }
}

/// Mixes example `i` with example `partner[i]` using a single weight `lambda`.
pub fn mixup_with(batch: &LabeledBatch, lambda: f64, partner: &[usize]) -> Result<LabeledBatch> {
    let n = batch.len();
    if partner.len() != n || partner.iter().any(|&p| p >= n) {
        return Err(AugmentError::Shape("partner list does not index the batch".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(AugmentError::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    let mix = |t: &Tensor| {
        let stride = t.numel() / n;
        let mut out = t.clone();
        for (i, &j) in partner.iter().enumerate() {
            let a = &t.data()[i * stride..(i + 1) * stride];
            let b = &t.data()[j * stride..(j + 1) * stride];
            blend(a, b, lambda, &mut out.data_mut()[i * stride..(i + 1) * stride]);
        }
        out
    };
    Ok(LabeledBatch {
        images: mix(&batch.images),
        labels: mix(&batch.labels),
    })
}

/// Draws `lambda ~ Beta(alpha, alpha)` and a random permutation partner per
/// example, then mixes images and labels.
pub fn mixup<R: Rng + ?Sized>(batch: &LabeledBatch, cfg: &MixupConfig, rng: &mut R) -> Result<LabeledBatch> {
    if !cfg.enabled {
        return Ok(batch.clone());
    }
    cfg.validate()?;
    let n = batch.len();
    if n < 2 {
        return Err(AugmentError::BatchTooSmall(n));
    }
    let beta = Beta::new(cfg.alpha, cfg.alpha).map_err(|e| AugmentError::Config(e.to_string()))?;
    let lambda = beta.sample(rng).clamp(0.0, 1.0);
    let mut partner: Vec<usize> = (0..n).collect();
    partner.shuffle(rng);
    mixup_with(batch, lambda, &partner)
}
