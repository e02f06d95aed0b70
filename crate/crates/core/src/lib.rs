//! Malware byte-image classification toolkit.
//!
//! * [`binimg`]: DEX-aware conversion of binaries into grayscale or
//!   section-colored images.
//! * [`nn`]: tensor engine, conv backbone, feature pyramid and losses.
//! * [`sfopt`]: schedule-free AdamW and a reference AdamW.
//! * [`augment`]: Mixup and TrivialAugment.
//! * [`metrics`]: macro precision / recall / F1 / AUC and checkpoint selection.
//! * [`harness`]: configuration, datasets, training, evaluation and ablation grids.

pub mod augment;
pub mod binimg;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod sfopt;
