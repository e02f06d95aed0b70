//! "MIFW" checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MIFW"
//! 4       4     u32 format version (currently 1)
//! 8       4     u32 config block length L
//! 12      L     config block:
//!                 u32 in_channels, u32 stem_width, u32 widths[4],
//!                 u32 num_classes, u8 fpn_enabled, u32 fpn_width,
//!                 u8 upsample_mode (0 = nearest)
//! ..      4     u32 tensor count T
//!               T x { u16 name_len, name (UTF-8), u8 rank,
//!                     u32 dims[rank], f32 data[prod(dims)] }
//! ..      4     u32 scalar count S
//!               S x { u16 name_len, name (UTF-8), f64 value }
//! ..      4     u32 metadata length M
//! ..      M     metadata (UTF-8 JSON)
//! ```

use std::fs;
use std::path::Path;

use super::model::{BackboneConfig, FpnConfig, Model, ModelConfig, UpsampleMode};
use super::{NnError, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"MIFW";
pub const FORMAT_VERSION: u32 = 1;
const CONFIG_BLOCK_LEN: u32 = 4 * 7 + 1 + 4 + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Model parameters first, then any optimizer vectors (`opt.*`).
    pub tensors: Vec<(String, Tensor)>,
    pub scalars: Vec<(String, f64)>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    /// Snapshot of a model's parameters. Values are rounded to `f32`, the
    /// storage precision, so the in-memory checkpoint equals its reloaded form.
    pub fn from_model(model: &Model) -> Self {
        let tensors = model
            .named_params()
            .map(|(n, t)| (n.to_string(), round_f32(t)))
            .collect();
        Self {
            config: model.config().clone(),
            tensors,
            scalars: Vec::new(),
            metadata: serde_json::Value::Null,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.tensors.push((name.into(), round_f32(t)));
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.scalars.push((name.into(), v));
    }

    /// Rebuilds the model; every parameter must be present with its configured shape.
    pub fn to_model(&self) -> Result<Model> {
        let named = self
            .tensors
            .iter()
            .filter(|(n, _)| !n.starts_with("opt."))
            .cloned()
            .collect();
        Model::from_named(self.config.clone(), named)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, CONFIG_BLOCK_LEN);
        let b = &self.config.backbone;
        put_u32(&mut out, dim(b.in_channels)?);
        put_u32(&mut out, dim(b.stem_width)?);
        for w in b.widths {
            put_u32(&mut out, dim(w)?);
        }
        put_u32(&mut out, dim(self.config.num_classes)?);
        out.push(self.config.fpn.is_some() as u8);
        put_u32(&mut out, dim(self.config.fpn.as_ref().map_or(0, |f| f.width))?);
        out.push(0);

        put_u32(&mut out, dim(self.tensors.len())?);
        for (name, t) in &self.tensors {
            put_name(&mut out, name)?;
            let rank = u8::try_from(t.shape().len())
                .map_err(|_| NnError::Checkpoint(format!("rank of `{name}` too large")))?;
            out.push(rank);
            for &d in t.shape() {
                put_u32(&mut out, dim(d)?);
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        put_u32(&mut out, dim(self.scalars.len())?);
        for (name, v) in &self.scalars {
            put_name(&mut out, name)?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        put_u32(&mut out, dim(meta.len())?);
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic, not a MIFW file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let block_len = r.u32()?;
        if block_len != CONFIG_BLOCK_LEN {
            return Err(NnError::Checkpoint(format!(
                "config block of {block_len} bytes, expected {CONFIG_BLOCK_LEN}"
            )));
        }
        let in_channels = r.u32()? as usize;
        let stem_width = r.u32()? as usize;
        let mut widths = [0; 4];
        for w in &mut widths {
            *w = r.u32()? as usize;
        }
        let num_classes = r.u32()? as usize;
        let fpn_enabled = r.u8()?;
        let fpn_width = r.u32()? as usize;
        let upsample = match r.u8()? {
            0 => UpsampleMode::Nearest,
            m => return Err(NnError::Checkpoint(format!("unknown upsample mode {m}"))),
        };
        let config = ModelConfig {
            backbone: BackboneConfig {
                in_channels,
                stem_width,
                widths,
            },
            fpn: match fpn_enabled {
                0 => None,
                1 => Some(FpnConfig {
                    width: fpn_width,
                    upsample,
                }),
                v => return Err(NnError::Checkpoint(format!("bad FPN flag {v}"))),
            },
            num_classes,
        };

        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1024) as usize);
        for _ in 0..count {
            let name = r.name()?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| NnError::Checkpoint(format!("`{name}` is too large")))?;
            let raw = r.take(
                numel
                    .checked_mul(4)
                    .ok_or_else(|| NnError::Checkpoint(format!("`{name}` is too large")))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        let count = r.u32()?;
        let mut scalars = Vec::with_capacity(count.min(1024) as usize);
        for _ in 0..count {
            let name = r.name()?;
            let raw = r.take(8)?;
            scalars.push((name, f64::from_le_bytes(raw.try_into().expect("8 bytes"))));
        }
        let meta_len = r.u32()? as usize;
        let meta = r.take(meta_len)?;
        let metadata = serde_json::from_slice(meta).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if r.at != bytes.len() {
            return Err(NnError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self {
            config,
            tensors,
            scalars,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn round_f32(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&v| v as f32 as f64).collect();
    Tensor::new(t.shape(), data).expect("same shape")
}

fn dim(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| NnError::Checkpoint(format!("{v} does not fit in u32")))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_name(out: &mut Vec<u8>, name: &str) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| NnError::Checkpoint(format!("name `{name}` too long")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }

    fn name(&mut self) -> Result<String> {
        let s = self.take(2)?;
        let len = u16::from_le_bytes([s[0], s[1]]) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))
    }
}
