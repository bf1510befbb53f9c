//! Classification metrics: confusion matrix, macro-averaged
//! precision/recall/F1, one-vs-rest ROC curves with AUC, and the exported
//! report files.
//!
//! Undefined ratios (0/0) are reported as 0 and flagged per class, so the
//! report never holds non-numbers.

mod export;
mod roc;

use serde::{Deserialize, Serialize};

pub use export::{
    export_report, read_confusion_csv, read_loss_csv, read_metrics_json, read_roc_csv, to_json_6dp, write_loss_csv,
    LossRecord, ReportFiles,
};
pub use roc::{macro_auc, mann_whitney_auc, roc_ovr, MacroAuc, RocCurve};

use crate::error::{Error, Result};

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

pub fn confusion(preds: &[usize], truths: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &t) in preds.iter().zip(truths) {
        if p >= k || t >= k {
            return Err(Error::Index(format!("class index outside 0..{k}: pred {p}, truth {t}")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    /// Number of examples whose true class is this one.
    pub support: u64,
    pub predicted: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
    /// One-vs-rest AUC; absent without both positives and negatives.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_examples: u64,
    pub accuracy: f64,
    /// Always "macro": unweighted mean over classes.
    pub averaging: String,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_auc: Option<f64>,
    pub auc_undefined_classes: usize,
    pub per_class: Vec<ClassMetrics>,
    /// Class codes, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Accuracy and per-class/macro precision, recall and F1. AUC fields are
/// left empty; see [`MetricsReport::with_auc`].
pub fn summary(cm: &ConfusionMatrix) -> MetricsReport {
    let k = cm.num_classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let support = cm.row_sum(c);
            let predicted = cm.col_sum(c);
            let (precision, precision_undefined) = ratio(tp, predicted);
            let (recall, recall_undefined) = ratio(tp, support);
            let (f1, f1_undefined) = if precision + recall > 0.0 {
                (2.0 * precision * recall / (precision + recall), false)
            } else {
                (0.0, true)
            };
            ClassMetrics {
                class: c,
                support,
                predicted,
                precision,
                recall,
                f1,
                precision_undefined,
                recall_undefined,
                f1_undefined,
                auc: None,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if k == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / k as f64
        }
    };
    MetricsReport {
        n_examples: cm.total(),
        accuracy: ratio(cm.trace(), cm.total()).0,
        averaging: "macro".into(),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        macro_auc: None,
        auc_undefined_classes: 0,
        per_class,
        labels: None,
    }
}

impl MetricsReport {
    pub fn with_auc(mut self, auc: &MacroAuc) -> Self {
        for (m, a) in self.per_class.iter_mut().zip(&auc.per_class) {
            m.auc = *a;
        }
        self.macro_auc = auc.value;
        self.auc_undefined_classes = auc.undefined;
        self
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_tally() {
        let cm = confusion(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(confusion(&[], &[], 3).unwrap(), ConfusionMatrix::zeros(3));
        assert!(confusion(&[0], &[2], 2).is_err());
        assert!(confusion(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn hand_summary() {
        let r = summary(&ConfusionMatrix {
            counts: vec![vec![1, 1], vec![0, 2]],
        });
        assert_eq!(r.accuracy, 0.75);
        let c0 = &r.per_class[0];
        assert_eq!((c0.precision, c0.recall), (1.0, 0.5));
        assert!((c0.f1 - 2.0 / 3.0).abs() < 1e-15);
        let c1 = &r.per_class[1];
        assert!((c1.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c1.recall, 1.0);
        assert!((c1.f1 - 0.8).abs() < 1e-15);
        assert!((r.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert!((r.macro_f1 - 0.7333).abs() < 1e-4);
    }

    #[test]
    fn diagonal_is_perfect() {
        let cm = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        let r = summary(&cm);
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn absent_class_is_zero_and_flagged() {
        let r = summary(&confusion(&[0, 1], &[0, 1], 3).unwrap());
        let c = &r.per_class[2];
        assert_eq!((c.precision, c.recall, c.f1), (0.0, 0.0, 0.0));
        assert!(c.precision_undefined && c.recall_undefined && c.f1_undefined);
        assert!(!r.per_class[0].f1_undefined);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }
}
