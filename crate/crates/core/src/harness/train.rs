use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{Flags, LossKind, OptKind, RunConfig};
use super::dataset::{ingest, load_batch, DatasetIndex, Layout, Split};
use super::{HarnessError, Result};
use crate::augment::{mixup, rng_stream, trivial_augment, LabeledBatch};
use crate::metrics::{better_epoch, select_checkpoint, EpochScore, MetricsReport};
use crate::nn::{cross_entropy, softmax, Checkpoint, ClassWeights, Model, NnError, Tensor};
use crate::sfopt::{adamw_step, AdamWState, OptError, ScheduleFree};

// RNG stream ids derived from the run seed: `kind << 56 | epoch << 28 | batch`.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;

fn stream(kind: u64, epoch: u32, batch: usize) -> u64 {
    (kind << 56) | (u64::from(epoch) << 28) | batch as u64
}

/// One line of `history.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub run_id: String,
    pub seed: u64,
    pub epoch: u32,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_p_macro: f64,
    pub val_r_macro: f64,
    pub val_f1_macro: f64,
    pub val_auc_macro: f64,
}

impl HistoryRecord {
    pub fn score(&self) -> EpochScore {
        EpochScore {
            epoch: self.epoch,
            val_f1_macro: self.val_f1_macro,
            val_loss: self.val_loss,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<HistoryRecord>,
    pub best_epoch: u32,
    /// Parameters of the selected epoch, stored at checkpoint precision.
    pub best: Checkpoint,
    /// Final parameters with optimizer state.
    pub last: Checkpoint,
    pub steps: u64,
    pub steps_per_epoch: u64,
}

/// Contents of a run's `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub id: String,
    pub seed: u64,
    pub flags: Flags,
    pub best_epoch: u32,
    pub epochs: u32,
    pub steps: u64,
    pub class_names: Vec<String>,
    pub test: MetricsReport,
}

enum Optimizer {
    ScheduleFree(ScheduleFree),
    AdamW { state: AdamWState, params: Vec<f64> },
}

impl Optimizer {
    fn new(cfg: &RunConfig, theta0: Vec<f64>) -> Result<Self> {
        Ok(match cfg.opt {
            OptKind::AF => Self::ScheduleFree(ScheduleFree::new(cfg.sf.clone(), &theta0)?),
            OptKind::AW => Self::AdamW {
                state: AdamWState::new(cfg.adamw.clone(), theta0.len())?,
                params: theta0,
            },
        })
    }

    /// Where the next gradient is evaluated.
    fn grad_point(&self) -> Vec<f64> {
        match self {
            Self::ScheduleFree(sf) => sf.eval_point(),
            Self::AdamW { params, .. } => params.clone(),
        }
    }

    fn step(&mut self, g: &[f64]) -> std::result::Result<(), OptError> {
        match self {
            Self::ScheduleFree(sf) => sf.step(g),
            Self::AdamW { state, params } => adamw_step(state, g, params),
        }
    }

    /// Parameters for evaluation and checkpoints.
    fn params(&self) -> &[f64] {
        match self {
            Self::ScheduleFree(sf) => sf.params(),
            Self::AdamW { params, .. } => params,
        }
    }

    fn steps(&self) -> u64 {
        match self {
            Self::ScheduleFree(sf) => sf.state.t,
            Self::AdamW { state, .. } => state.t,
        }
    }

    fn store(&self, ckpt: &mut Checkpoint) {
        let vec = |v: &[f64]| Tensor::new(&[v.len()], v.to_vec()).expect("1-D");
        match self {
            Self::ScheduleFree(sf) => {
                ckpt.push_tensor("opt.z", &vec(&sf.state.z));
                ckpt.push_tensor("opt.v", &vec(&sf.state.v));
                ckpt.push_scalar("opt.t", sf.state.t as f64);
                ckpt.push_scalar("opt.S", sf.state.lr_sq_sum);
            }
            Self::AdamW { state, .. } => {
                ckpt.push_tensor("opt.m", &vec(&state.m));
                ckpt.push_tensor("opt.v", &vec(&state.v));
                ckpt.push_scalar("opt.t", state.t as f64);
            }
        }
    }
}

/// Copies every compatible non-head tensor of `src` into `model`.
///
/// A stem trained on the other channel count is adapted: 3 -> 1 averages the
/// input-channel kernels, 1 -> 3 replicates the kernel into each channel, which
/// is exact when the three channels partition the grayscale image.
fn transfer(model: &mut Model, src: &Checkpoint) -> Result<()> {
    for (name, t) in &src.tensors {
        if name.starts_with("head.") || name.starts_with("opt.") {
            continue;
        }
        let Some(dst) = model.param_mut(name) else {
            log::info!("pretrained tensor `{name}` has no counterpart; skipped");
            continue;
        };
        if dst.shape() == t.shape() {
            dst.data_mut().copy_from_slice(t.data());
            continue;
        }
        let (ds, ss) = (dst.shape().to_vec(), t.shape());
        let adaptable = name == "stem.weight" && ds.len() == 4 && ss.len() == 4 && ds[0] == ss[0] && ds[2..] == ss[2..];
        if !adaptable {
            return Err(HarnessError::ConfigMismatch(format!(
                "pretrained `{name}` has shape {ss:?}, model expects {ds:?}"
            )));
        }
        let (out, k_dst, k_src, taps) = (ds[0], ds[1], ss[1], ds[2] * ds[3]);
        let data = dst.data_mut();
        for o in 0..out {
            for kd in 0..k_dst {
                for p in 0..taps {
                    data[(o * k_dst + kd) * taps + p] = match (k_src, k_dst) {
                        (1, _) => t.data()[o * taps + p],
                        _ => (0..k_src).map(|ks| t.data()[(o * k_src + ks) * taps + p]).sum::<f64>() / k_src as f64,
                    };
                }
            }
        }
        log::info!("adapted pretrained stem from {k_src} to {k_dst} input channels");
    }
    Ok(())
}

/// Seeded initialization, optionally overwritten from the `pt` checkpoint.
pub fn init_model(cfg: &RunConfig, num_classes: usize) -> Result<Model> {
    let mut model = Model::new(cfg.model_config(num_classes), &mut rng_stream(cfg.seed, STREAM_INIT))?;
    if let Some(path) = &cfg.pt {
        transfer(&mut model, &Checkpoint::load(path)?)?;
    }
    Ok(model)
}

/// Metrics on one split with no augmentation. The loss is the unweighted
/// mean cross-entropy.
pub fn evaluate(
    model: &Model,
    index: &DatasetIndex,
    split: Split,
    image_size: usize,
    batch_size: usize,
) -> Result<MetricsReport> {
    let classes = model.config().num_classes;
    if classes != index.num_classes() {
        return Err(HarnessError::ConfigMismatch(format!(
            "model has {classes} classes, dataset has {}",
            index.num_classes()
        )));
    }
    let samples = index.split(split);
    if samples.is_empty() {
        return Err(HarnessError::Data(format!("split `{split}` is empty")));
    }
    let channels = model.config().backbone.in_channels;
    let uniform = ClassWeights::uniform(classes);
    let order: Vec<usize> = (0..samples.len()).collect();
    let mut probs = Vec::with_capacity(samples.len() * classes);
    let mut truths = Vec::with_capacity(samples.len());
    let mut loss_sum = 0.0;
    for chunk in order.chunks(batch_size.max(1)) {
        let (images, labels) = load_batch(samples, chunk, channels, image_size)?;
        let logits = model.predict(&images)?;
        let onehot = LabeledBatch::one_hot(images, &labels, classes)?.labels;
        loss_sum += cross_entropy(&logits, &onehot, &uniform)? * chunk.len() as f64;
        probs.extend_from_slice(softmax(&logits)?.data());
        truths.extend(labels);
    }
    Ok(MetricsReport::from_scores(
        &probs,
        classes,
        &truths,
        loss_sum / samples.len() as f64,
    )?)
}

fn metadata(cfg: &RunConfig, index: &DatasetIndex, epoch: u32) -> serde_json::Value {
    serde_json::json!({
        "run_id": cfg.id,
        "seed": cfg.seed,
        "epoch": epoch,
        "image_size": cfg.image_size,
        "class_names": index.class_names,
        "config": cfg,
    })
}

#[derive(Serialize)]
struct Dump<'a> {
    run_id: &'a str,
    seed: u64,
    epoch: u32,
    step: u64,
    batch: &'a [usize],
    loss: String,
    error: String,
    param_max_abs: f64,
    nonfinite_params: usize,
}

fn dump_state(
    out_dir: &Path,
    cfg: &RunConfig,
    (epoch, step): (u32, u64),
    batch: &[usize],
    loss: f64,
    error: String,
    params: &[f64],
) -> Result<HarnessError> {
    let path = out_dir.join("nonfinite_dump.json");
    let dump = Dump {
        run_id: &cfg.id,
        seed: cfg.seed,
        epoch,
        step,
        batch,
        loss: loss.to_string(),
        error,
        param_max_abs: params
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0, |m, v| f64::max(m, v.abs())),
        nonfinite_params: params.iter().filter(|v| !v.is_finite()).count(),
    };
    std::fs::write(&path, serde_json::to_vec_pretty(&dump)?).map_err(|e| HarnessError::io(&path, e))?;
    Ok(HarnessError::NonFiniteLoss {
        epoch,
        step,
        dump: path,
    })
}

/// Trains with per-epoch validation and writes `history.jsonl`, `best.mifw`
/// and `last.mifw` into `out_dir`.
pub fn train(cfg: &RunConfig, index: &DatasetIndex, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let classes = index.num_classes();
    let mut model = init_model(cfg, classes)?;
    let weights = match cfg.loss {
        LossKind::CE => ClassWeights::uniform(classes),
        LossKind::WCE => ClassWeights::from_counts(&index.train_counts())?,
    };
    let mut optim = Optimizer::new(cfg, model.flat())?;
    let history_path = out_dir.join("history.jsonl");
    let mut history_file = BufWriter::new(File::create(&history_path).map_err(|e| HarnessError::io(&history_path, e))?);

    let n = index.train.len();
    let mut history = Vec::new();
    let mut best: Option<(EpochScore, Checkpoint)> = None;
    let mut steps_per_epoch = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_stream(cfg.seed, stream(STREAM_SHUFFLE, epoch, 0)));
        let (mut loss_sum, mut batches) = (0.0, 0u64);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.mixup.enabled && chunk.len() < 2 {
                continue;
            }
            let (images, labels) = load_batch(&index.train, chunk, cfg.in_channels, cfg.image_size)?;
            let mut rng = rng_stream(cfg.seed, stream(STREAM_AUGMENT, epoch, b));
            let images = trivial_augment(&images, &cfg.ta, &mut rng)?;
            let batch = mixup(&LabeledBatch::one_hot(images, &labels, classes)?, &cfg.mixup, &mut rng)?;
            model.set_flat(&optim.grad_point())?;
            let step = optim.steps() + 1;
            let failure = match model.loss_and_grad(&batch.images, &batch.labels, &weights) {
                Ok((loss, g)) if loss.is_finite() => match optim.step(&g) {
                    Ok(()) => {
                        loss_sum += loss;
                        batches += 1;
                        None
                    }
                    Err(e) => Some((loss, e.to_string())),
                },
                Ok((loss, _)) => Some((loss, "loss is not finite".to_string())),
                Err(e @ NnError::NonFinite(_)) => Some((f64::NAN, e.to_string())),
                Err(e) => return Err(e.into()),
            };
            if let Some((loss, error)) = failure {
                let params = model.flat();
                return Err(dump_state(out_dir, cfg, (epoch, step), chunk, loss, error, &params)?);
            }
        }
        steps_per_epoch = batches;
        model.set_flat(optim.params())?;
        let val = evaluate(&model, index, Split::Val, cfg.image_size, cfg.batch_size)?;
        let record = HistoryRecord {
            run_id: cfg.id.clone(),
            seed: cfg.seed,
            epoch,
            step: optim.steps(),
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            val_loss: val.mean_loss,
            val_p_macro: val.p_macro,
            val_r_macro: val.r_macro,
            val_f1_macro: val.f1_macro,
            val_auc_macro: val.auc_macro,
        };
        log::info!(
            "[{}] epoch {epoch}: train_loss {:.4} val_loss {:.4} val_f1 {:.4}",
            cfg.id,
            record.train_loss,
            record.val_loss,
            record.val_f1_macro
        );
        serde_json::to_writer(&mut history_file, &record)?;
        history_file
            .write_all(b"\n")
            .and_then(|()| history_file.flush())
            .map_err(|e| HarnessError::io(&history_path, e))?;
        let score = record.score();
        if best.as_ref().is_none_or(|(b, _)| better_epoch(&score, b)) {
            let mut ckpt = Checkpoint::from_model(&model);
            ckpt.metadata = metadata(cfg, index, epoch);
            best = Some((score, ckpt));
        }
        history.push(record);
    }

    let scores: Vec<EpochScore> = history.iter().map(HistoryRecord::score).collect();
    let best_epoch = select_checkpoint(&scores)?;
    let (_, best) = best.expect("at least one epoch");
    debug_assert_eq!(best.metadata["epoch"], best_epoch);
    best.save(&out_dir.join("best.mifw"))?;

    let mut last = Checkpoint::from_model(&model);
    optim.store(&mut last);
    last.metadata = metadata(cfg, index, cfg.epochs);
    last.save(&out_dir.join("last.mifw"))?;

    Ok(TrainOutcome {
        history,
        best_epoch,
        best,
        last,
        steps: optim.steps(),
        steps_per_epoch,
    })
}

/// Ingests `cfg.data_root`, trains, evaluates the selected checkpoint on the
/// test split and writes `report.json` next to the training artifacts.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let index = ingest(&cfg.data_root, Layout::Auto)?;
    if let Some(c) = cfg.num_classes {
        if c != index.num_classes() {
            return Err(HarnessError::ConfigMismatch(format!(
                "config expects {c} classes, dataset has {}",
                index.num_classes()
            )));
        }
    }
    let outcome = train(cfg, &index, out_dir)?;
    let model = outcome.best.to_model()?;
    let test = evaluate(&model, &index, Split::Test, cfg.image_size, cfg.batch_size)?;
    let report = RunReport {
        id: cfg.id.clone(),
        seed: cfg.seed,
        flags: cfg.flags(),
        best_epoch: outcome.best_epoch,
        epochs: cfg.epochs,
        steps: outcome.steps,
        class_names: index.class_names.clone(),
        test,
    };
    let path = out_dir.join("report.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| HarnessError::io(&path, e))?;
    Ok(report)
}
