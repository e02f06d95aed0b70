use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{apply_op, TaOp};
use super::{AugmentError, Result};
use crate::nn::Tensor;

/// One entry of the op set: an operation and its magnitude range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaOpSpec {
    pub name: TaOp,
    pub min: f64,
    pub max: f64,
}

impl TaOpSpec {
    pub fn with_default_range(name: TaOp) -> Self {
        let (min, max) = name.default_range();
        Self { name, min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_ops")]
    pub ops: Vec<TaOpSpec>,
}

fn default_ops() -> Vec<TaOpSpec> {
    use TaOp::*;
    [
        Identity,
        Rotate,
        ShearX,
        ShearY,
        TranslateX,
        TranslateY,
        Brightness,
        Contrast,
        Sharpness,
        AutoContrast,
        Equalize,
        Posterize,
        Solarize,
    ]
    .into_iter()
    .map(TaOpSpec::with_default_range)
    .collect()
}

impl Default for TaConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            ops: default_ops(),
        }
    }
}

impl TaConfig {
    pub fn enabled() -> Self {
        Self {
            enabled: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.ops.iter().any(|s| s.name == TaOp::Identity) {
            return Err(AugmentError::Config("op set must include identity".into()));
        }
        for s in &self.ops {
            if !(s.min.is_finite() && s.max.is_finite() && s.min <= s.max) {
                return Err(AugmentError::Config(format!(
                    "bad magnitude range for {:?}: [{}, {}]",
                    s.name, s.min, s.max
                )));
            }
        }
        Ok(())
    }
}

/// Augments one planar `(K, H, W)` image in place with a single sampled op.
pub fn trivial_augment_image<R: Rng + ?Sized>(
    img: &mut [f64],
    k: usize,
    h: usize,
    w: usize,
    ops: &[TaOpSpec],
    rng: &mut R,
) {
    let eligible: Vec<&TaOpSpec> = ops.iter().filter(|s| k == 3 || !s.name.needs_color()).collect();
    let Some(spec) = eligible.choose(rng) else {
        return;
    };
    let m = if spec.min < spec.max {
        rng.gen_range(spec.min..=spec.max)
    } else {
        spec.min
    };
    apply_op(spec.name, m, img, k, h, w);
}

/// Applies one uniformly chosen op with a uniform magnitude to each image of a
/// `(B, K, H, W)` batch. Disabled configs return the input unchanged.
pub fn trivial_augment<R: Rng + ?Sized>(images: &Tensor, cfg: &TaConfig, rng: &mut R) -> Result<Tensor> {
    if !cfg.enabled {
        return Ok(images.clone());
    }
    cfg.validate()?;
    let (_, k, h, w) = images.dims4("images").map_err(|e| AugmentError::Shape(e.to_string()))?;
    let mut out = images.clone();
    if k * h * w == 0 {
        return Ok(out);
    }
    for img in out.data_mut().chunks_mut(k * h * w) {
        trivial_augment_image(img, k, h, w, &cfg.ops, rng);
    }
    Ok(out)
}
