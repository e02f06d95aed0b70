//! Class-balanced evaluation: every class counts equally in the macro
//! averages of precision, recall, F1 and one-vs-rest AUC.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("no class has both positive and negative examples")]
    DegenerateLabels,
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("checkpoint history is empty")]
    EmptyHistory,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// `counts[t][p]`: examples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(MetricsError::LengthMismatch(format!(
                "{} counts for {classes} classes",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        for index in [truth, pred] {
            if index >= self.classes {
                return Err(MetricsError::IndexOutOfRange {
                    index,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    /// Adds another shard's counts.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(MetricsError::LengthMismatch(format!(
                "merging {} classes into {}",
                other.classes, self.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, pred)).sum()
    }
}

pub fn confusion(preds: &[usize], truths: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} predictions for {} labels",
            preds.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in preds.iter().zip(truths) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfSummary {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub p_macro: f64,
    pub r_macro: f64,
    pub f1_macro: f64,
}

/// Per-class and macro precision, recall and F1. Zero denominators give 0.
pub fn macro_prf(cm: &ConfusionMatrix) -> PrfSummary {
    let c = cm.classes();
    let mut precision = Vec::with_capacity(c);
    let mut recall = Vec::with_capacity(c);
    let mut f1 = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.get(k, k);
        let p = ratio(tp, cm.col_sum(k));
        let r = ratio(tp, cm.row_sum(k));
        precision.push(p);
        recall.push(r);
        f1.push(f1_score(p, r));
    }
    PrfSummary {
        p_macro: mean(&precision),
        r_macro: mean(&recall),
        f1_macro: mean(&f1),
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    /// `None` for classes without both positives and negatives.
    pub per_class: Vec<Option<f64>>,
    pub auc_macro: f64,
}

/// 1-based ranks of `values`, ties sharing their average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// One-vs-rest AUC per class via the Mann-Whitney rank statistic, and their
/// mean over classes that have both positives and negatives.
///
/// `scores` is row-major `(N, C)`.
pub fn macro_auc(scores: &[f64], classes: usize, truths: &[usize]) -> Result<AucSummary> {
    let n = truths.len();
    if n == 0 || scores.len() != n * classes {
        return Err(MetricsError::LengthMismatch(format!(
            "{} scores for {n} examples x {classes} classes",
            scores.len()
        )));
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(s));
    }
    if let Some(&index) = truths.iter().find(|&&t| t >= classes) {
        return Err(MetricsError::IndexOutOfRange { index, classes });
    }
    let mut per_class = Vec::with_capacity(classes);
    let mut column = vec![0.0; n];
    for c in 0..classes {
        let n_pos = truths.iter().filter(|&&t| t == c).count();
        let n_neg = n - n_pos;
        if n_pos == 0 || n_neg == 0 {
            log::warn!(
                "class {c} has no {} in this split; excluded from macro AUC",
                if n_pos == 0 { "positives" } else { "negatives" }
            );
            per_class.push(None);
            continue;
        }
        for (i, v) in column.iter_mut().enumerate() {
            *v = scores[i * classes + c];
        }
        let ranks = midranks(&column);
        let pos_rank_sum: f64 = truths.iter().zip(&ranks).filter(|(&t, _)| t == c).map(|(_, r)| r).sum();
        let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
        per_class.push(Some(u / (n_pos as f64 * n_neg as f64)));
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(MetricsError::DegenerateLabels);
    }
    Ok(AucSummary {
        auc_macro: mean(&defined),
        per_class,
    })
}

/// Validation result of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochScore {
    pub epoch: u32,
    pub val_f1_macro: f64,
    pub val_loss: f64,
}

/// True when `a` should be selected over `b`: higher F1, then lower loss.
pub fn better_epoch(a: &EpochScore, b: &EpochScore) -> bool {
    a.val_f1_macro > b.val_f1_macro || (a.val_f1_macro == b.val_f1_macro && a.val_loss < b.val_loss)
}

/// Epoch with the best validation F1; lower validation loss breaks ties, then
/// the earliest epoch.
pub fn select_checkpoint(history: &[EpochScore]) -> Result<u32> {
    let mut best = history.first().ok_or(MetricsError::EmptyHistory)?;
    for h in &history[1..] {
        if better_epoch(h, best) || (!better_epoch(best, h) && h.epoch < best.epoch) {
            best = h;
        }
    }
    Ok(best.epoch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub auc: Vec<Option<f64>>,
}

/// Full evaluation report for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: PerClassMetrics,
    pub p_macro: f64,
    pub r_macro: f64,
    pub f1_macro: f64,
    pub auc_macro: f64,
    pub mean_loss: f64,
    pub count: usize,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// Builds a report from class probabilities `(N, C)`, labels and mean loss.
    /// Predictions are the arg-max class (lowest index on ties).
    pub fn from_scores(probs: &[f64], classes: usize, truths: &[usize], mean_loss: f64) -> Result<Self> {
        if probs.len() != truths.len() * classes {
            return Err(MetricsError::LengthMismatch(format!(
                "{} scores for {} examples",
                probs.len(),
                truths.len()
            )));
        }
        let preds: Vec<usize> = probs
            .chunks(classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                    )
                    .0
            })
            .collect();
        let cm = confusion(&preds, truths, classes)?;
        let prf = macro_prf(&cm);
        let auc = macro_auc(probs, classes, truths)?;
        Ok(Self {
            per_class: PerClassMetrics {
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                auc: auc.per_class,
            },
            p_macro: prf.p_macro,
            r_macro: prf.r_macro,
            f1_macro: prf.f1_macro,
            auc_macro: auc.auc_macro,
            mean_loss,
            count: truths.len(),
            confusion: cm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_predictions_are_diagonal() {
        let cm = confusion(&[0, 2, 1, 2], &[0, 2, 1, 2], 3).unwrap();
        assert_eq!(cm.get(2, 2), 2);
        assert_eq!(cm.total(), 4);
        assert_eq!(cm.total() - (0..3).map(|k| cm.get(k, k)).sum::<u64>(), 0);
        let s = macro_prf(&cm);
        assert_eq!((s.p_macro, s.r_macro, s.f1_macro), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_off_diagonal() {
        let cm = confusion(&[1], &[0], 2).unwrap();
        assert_eq!(cm.get(0, 1), 1);
        assert!(matches!(
            confusion(&[3], &[0], 2),
            Err(MetricsError::IndexOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn two_class_worked_example() {
        let cm = ConfusionMatrix::from_counts(2, vec![8, 2, 3, 7]).unwrap();
        let s = macro_prf(&cm);
        assert_eq!(s.precision, vec![8.0 / 11.0, 7.0 / 9.0]);
        assert_eq!(s.recall, vec![0.8, 0.7]);
        assert!((s.f1[0] - 0.7619).abs() < 1e-4);
        assert!((s.f1[1] - 0.7368).abs() < 1e-4);
        assert!((s.f1_macro - 0.7494).abs() < 1e-4);
    }

    #[test]
    fn unsupported_unpredicted_class_scores_zero() {
        let cm = confusion(&[0, 1], &[0, 1], 3).unwrap();
        let s = macro_prf(&cm);
        assert_eq!(s.f1[2], 0.0);
        assert!((s.f1_macro - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking_has_unit_auc() {
        let scores = [0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.05, 0.95];
        let a = macro_auc(&scores, 2, &[0, 0, 1, 1]).unwrap();
        assert_eq!(a.auc_macro, 1.0);
    }

    #[test]
    fn constant_scores_give_half() {
        let a = macro_auc(&[0.5; 12], 3, &[0, 1, 2, 0]).unwrap();
        for v in a.per_class.iter().flatten() {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn missing_class_is_excluded() {
        let scores = [0.9, 0.1, 0.0, 0.2, 0.8, 0.0];
        let a = macro_auc(&scores, 3, &[0, 1]).unwrap();
        assert_eq!(a.per_class[2], None);
        assert_eq!(a.auc_macro, 1.0);
        assert_eq!(macro_auc(&[0.3, 0.7], 2, &[1]), Err(MetricsError::DegenerateLabels));
    }

    #[test]
    fn checkpoint_selection_rules() {
        let e = |epoch, f1, loss| EpochScore {
            epoch,
            val_f1_macro: f1,
            val_loss: loss,
        };
        assert_eq!(select_checkpoint(&[e(3, 0.2, 9.0)]), Ok(3));
        assert_eq!(select_checkpoint(&[e(1, 0.70, 1.2), e(2, 0.70, 1.1)]), Ok(2));
        assert_eq!(
            select_checkpoint(&[e(1, 0.1, 1.0), e(2, 0.2, 1.0), e(3, 0.3, 1.0)]),
            Ok(3)
        );
        assert_eq!(select_checkpoint(&[e(2, 0.5, 1.0), e(1, 0.5, 1.0)]), Ok(1));
        assert_eq!(select_checkpoint(&[]), Err(MetricsError::EmptyHistory));
    }
}
