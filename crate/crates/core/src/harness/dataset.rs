use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::binimg::{lanczos_resize, read_png, ImageTensor};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(HarnessError::Data(format!("unknown split `{other}`"))),
        }
    }
}

/// How the dataset root is organized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// `manifest.csv` when present, otherwise a directory tree.
    #[default]
    Auto,
    /// `<root>/<split>/<class>/<image>.png`.
    Tree,
    /// `<root>/manifest.csv` with a `split,class,path` header; relative paths
    /// resolve against the root.
    Manifest,
}

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub path: PathBuf,
    pub class: usize,
}

/// Per-split sample lists sorted by path. Class indices follow the sorted
/// training class names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DatasetIndex {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Training examples per class.
    pub fn train_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.train {
            counts[s.class] += 1;
        }
        counts
    }

    /// Number of training examples.
    pub fn total(&self) -> usize {
        self.train.len()
    }
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        out.push(entry.map_err(|e| HarnessError::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn ingest_tree(root: &Path) -> Result<DatasetIndex> {
    let mut per_split: BTreeMap<Split, Vec<(String, Vec<PathBuf>)>> = BTreeMap::new();
    for split in Split::ALL {
        let dir = root.join(split.as_str());
        if !dir.is_dir() {
            return Err(HarnessError::MissingSplit(split.to_string()));
        }
        let mut classes = Vec::new();
        for class_dir in sorted_entries(&dir)?.into_iter().filter(|p| p.is_dir()) {
            let name = class_dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| HarnessError::Data(format!("non-UTF-8 class dir {}", class_dir.display())))?
                .to_string();
            let images: Vec<PathBuf> = sorted_entries(&class_dir)?
                .into_iter()
                .filter(|p| p.is_file() && is_png(p))
                .collect();
            if images.is_empty() {
                return Err(HarnessError::EmptyClass {
                    split: split.to_string(),
                    class: name,
                });
            }
            classes.push((name, images));
        }
        per_split.insert(split, classes);
    }
    let class_names: Vec<String> = per_split[&Split::Train].iter().map(|(n, _)| n.clone()).collect();
    let mut rows = Vec::new();
    for (split, classes) in per_split {
        for (name, images) in classes {
            rows.extend(images.into_iter().map(|p| (split, name.clone(), p)));
        }
    }
    assemble(root, class_names, rows)
}

fn ingest_manifest(root: &Path) -> Result<DatasetIndex> {
    #[derive(Deserialize)]
    struct Row {
        split: String,
        class: String,
        path: PathBuf,
    }
    let path = root.join(MANIFEST_NAME);
    let mut reader = csv::Reader::from_path(&path)?;
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        let row: Row = rec?;
        let split: Split = row.split.trim().parse()?;
        let file = if row.path.is_absolute() {
            row.path
        } else {
            root.join(row.path)
        };
        if !file.is_file() {
            return Err(HarnessError::UnreadableImage {
                path: file,
                reason: "listed in manifest but not found".into(),
            });
        }
        rows.push((split, row.class.trim().to_string(), file));
    }
    let class_names: Vec<String> = rows
        .iter()
        .filter(|(s, ..)| *s == Split::Train)
        .map(|(_, c, _)| c.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for split in Split::ALL {
        if !rows.iter().any(|(s, ..)| *s == split) {
            return Err(HarnessError::MissingSplit(split.to_string()));
        }
    }
    assemble(root, class_names, rows)
}

fn assemble(root: &Path, class_names: Vec<String>, rows: Vec<(Split, String, PathBuf)>) -> Result<DatasetIndex> {
    if class_names.len() < 2 {
        return Err(HarnessError::Data(format!(
            "need at least two training classes, found {}",
            class_names.len()
        )));
    }
    let mut index = DatasetIndex {
        root: root.to_path_buf(),
        class_names,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let mut seen = HashSet::new();
    for (split, class, path) in rows {
        let class_idx = index
            .class_names
            .iter()
            .position(|c| *c == class)
            .ok_or_else(|| HarnessError::Data(format!("class `{class}` in {split} is absent from train")))?;
        if !seen.insert(path.clone()) {
            return Err(HarnessError::Data(format!("{} appears more than once", path.display())));
        }
        let list = match split {
            Split::Train => &mut index.train,
            Split::Val => &mut index.val,
            Split::Test => &mut index.test,
        };
        list.push(Sample { path, class: class_idx });
    }
    for list in [&mut index.train, &mut index.val, &mut index.test] {
        list.sort_by(|a, b| a.path.cmp(&b.path));
    }
    Ok(index)
}

/// Indexes a dataset root. Sample lists are sorted by path.
pub fn ingest(root: &Path, layout: Layout) -> Result<DatasetIndex> {
    let index = match layout {
        Layout::Tree => ingest_tree(root)?,
        Layout::Manifest => ingest_manifest(root)?,
        Layout::Auto if root.join(MANIFEST_NAME).is_file() => ingest_manifest(root)?,
        Layout::Auto => ingest_tree(root)?,
    };
    for (c, &n) in index.train_counts().iter().enumerate() {
        if n == 0 {
            return Err(HarnessError::EmptyClass {
                split: Split::Train.to_string(),
                class: index.class_names[c].clone(),
            });
        }
    }
    Ok(index)
}

static GRAY_WARNED: AtomicBool = AtomicBool::new(false);

/// Reads a PNG as a `channels x size x size` image in `[0, 1]`.
///
/// Grayscale input is replicated when three channels are requested; RGB input
/// is reduced to one channel by the clamped channel sum, which restores the
/// grayscale rendering of a section-colored image. Other sizes are resampled
/// with Lanczos-3.
pub fn load_image(path: &Path, channels: usize, size: usize) -> Result<ImageTensor> {
    let img = read_png(path).map_err(|e| HarnessError::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let img = match (img.channels(), channels) {
        (a, b) if a == b => img,
        (1, 3) => {
            if !GRAY_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!("grayscale images replicated to 3 channels (first: {})", path.display());
            }
            img.replicate(3)
        }
        (3, 1) => {
            let (h, w) = (img.height(), img.width());
            let data = (0..h * w)
                .map(|i| (img.plane(0)[i] + img.plane(1)[i] + img.plane(2)[i]).min(1.0))
                .collect();
            ImageTensor::from_data(1, h, w, data)?
        }
        (a, b) => {
            return Err(HarnessError::UnreadableImage {
                path: path.to_path_buf(),
                reason: format!("cannot map {a} channels to {b}"),
            })
        }
    };
    if img.height() == size && img.width() == size {
        Ok(img)
    } else {
        Ok(lanczos_resize(&img, size, size)?)
    }
}

/// Loads `samples[i]` for each `i` in `order` into a `(B, K, size, size)`
/// tensor plus class labels. Decoding runs in parallel; assembly order follows
/// `order`.
pub fn load_batch(samples: &[Sample], order: &[usize], channels: usize, size: usize) -> Result<(Tensor, Vec<usize>)> {
    let images = order
        .par_iter()
        .map(|&i| load_image(&samples[i].path, channels, size))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(order.len() * channels * size * size);
    for img in images {
        data.extend(img.into_data());
    }
    let labels = order.iter().map(|&i| samples[i].class).collect();
    Ok((Tensor::new(&[order.len(), channels, size, size], data)?, labels))
}
