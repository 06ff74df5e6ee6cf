use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("confusion matrix is empty")]
pub struct EmptyMatrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn record(&mut self, truth_positive: bool, predicted_positive: bool) {
        match (truth_positive, predicted_positive) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&mut self, other: &Self) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    /// Recall had no positives to find and was set to 1.
    pub recall_vacuous: bool,
    /// Nothing was predicted positive and precision was set to 1.
    pub precision_vacuous: bool,
}

/// Accuracy `(tp+tn)/total`, recall `tp/(tp+fn)`, precision `tp/(tp+fp)`.
/// Empty recall or precision denominators yield 1 and set the matching flag.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics, EmptyMatrix> {
    let total = cm.total();
    if total == 0 {
        return Err(EmptyMatrix);
    }
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            (1.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (recall, recall_vacuous) = ratio(cm.tp, cm.tp + cm.fn_);
    let (precision, precision_vacuous) = ratio(cm.tp, cm.tp + cm.fp);
    Ok(Metrics {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        recall,
        precision,
        recall_vacuous,
        precision_vacuous,
    })
}
