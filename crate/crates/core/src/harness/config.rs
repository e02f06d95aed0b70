use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::augment::{MixupConfig, TaConfig};
use crate::nn::{BackboneConfig, FpnConfig, ModelConfig, UpsampleMode, INPUT_DIVISOR};
use crate::sfopt::{AdamWHyper, SfHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptKind {
    /// Schedule-free AdamW.
    AF,
    /// AdamW with a constant learning rate.
    AW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    CE,
    /// Cross-entropy weighted by inverse class frequency.
    WCE,
}

/// Backbone and pyramid widths; the ablation axes live on [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_stem")]
    pub stem_width: usize,
    #[serde(default = "default_widths")]
    pub widths: [usize; 4],
    #[serde(default = "default_fpn_width")]
    pub fpn_width: usize,
}

fn default_stem() -> usize {
    8
}

fn default_widths() -> [usize; 4] {
    [8, 16, 32, 64]
}

fn default_fpn_width() -> usize {
    64
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            stem_width: default_stem(),
            widths: default_widths(),
            fpn_width: default_fpn_width(),
        }
    }
}

/// One training run. Loaded from JSON; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub id: String,
    /// Checkpoint used as initialization (the PT axis).
    #[serde(default)]
    pub pt: Option<PathBuf>,
    #[serde(default)]
    pub fpn: bool,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default)]
    pub ta: TaConfig,
    #[serde(default)]
    pub mixup: MixupConfig,
    #[serde(default = "default_opt")]
    pub opt: OptKind,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub sf: SfHyper,
    #[serde(default)]
    pub adamw: AdamWHyper,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default)]
    pub seed: u64,
    pub data_root: PathBuf,
    /// Expected class count; checked against the dataset when set.
    #[serde(default)]
    pub num_classes: Option<usize>,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default)]
    pub model: ModelSpec,
}

fn default_in_channels() -> usize {
    1
}

fn default_opt() -> OptKind {
    OptKind::AF
}

fn default_loss() -> LossKind {
    LossKind::CE
}

fn default_batch() -> usize {
    128
}

fn default_epochs() -> u32 {
    10
}

fn default_image_size() -> usize {
    256
}

impl RunConfig {
    /// Defaults for everything except the id and data root.
    pub fn new(id: impl Into<String>, data_root: impl Into<PathBuf>) -> Self {
        serde_json::from_value(serde_json::json!({
            "id": id.into(),
            "data_root": data_root.into(),
        }))
        .expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Config(format!("{}: {msg}", self.id)));
        if self.id.is_empty() || self.id.contains(['/', '\\', ',']) {
            return fail(format!("run id `{}` is not a plain name", self.id));
        }
        if !matches!(self.in_channels, 1 | 3) {
            return fail(format!("in_channels must be 1 or 3, got {}", self.in_channels));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.mixup.enabled && self.batch_size < 2 {
            return fail("mixup needs batch_size >= 2".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(INPUT_DIVISOR) {
            return fail(format!(
                "image_size {} must be a positive multiple of {INPUT_DIVISOR}",
                self.image_size
            ));
        }
        self.mixup.validate()?;
        if self.ta.enabled {
            self.ta.validate()?;
        }
        match self.opt {
            OptKind::AF => self.sf.validate()?,
            OptKind::AW => self.adamw.validate()?,
        }
        self.model_config(2).validate()?;
        Ok(())
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                in_channels: self.in_channels,
                stem_width: self.model.stem_width,
                widths: self.model.widths,
            },
            fpn: self.fpn.then_some(FpnConfig {
                width: self.model.fpn_width,
                upsample: UpsampleMode::Nearest,
            }),
            num_classes,
        }
    }

    /// The seven ablation flags as they appear in the report table.
    pub fn flags(&self) -> Flags {
        Flags {
            pt: self.pt.is_some(),
            fpn: self.fpn,
            in_channels: self.in_channels,
            ta: self.ta.enabled,
            mu: self.mixup.enabled,
            opt: self.opt,
            loss: self.loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub pt: bool,
    pub fpn: bool,
    pub in_channels: usize,
    pub ta: bool,
    pub mu: bool,
    pub opt: OptKind,
    pub loss: LossKind,
}

impl Flags {
    pub fn yn(b: bool) -> &'static str {
        if b {
            "Y"
        } else {
            "N"
        }
    }

    /// `pt,fpn,in,ta,mu,opt,loss` table cells.
    pub fn cells(&self) -> [String; 7] {
        [
            Self::yn(self.pt).to_string(),
            Self::yn(self.fpn).to_string(),
            self.in_channels.to_string(),
            Self::yn(self.ta).to_string(),
            Self::yn(self.mu).to_string(),
            format!("{:?}", self.opt),
            format!("{:?}", self.loss),
        ]
    }
}
