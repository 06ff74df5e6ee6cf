//! Dataset assembly, train/validation splitting, inference and scoring.

pub mod metrics;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::audio_io::{AnnotationTrack, DetectionEntry, DetectionReport, Label, Recording};
use crate::dsp::{self, DspError, PreprocessConfig, Window};
use crate::labelprop::{self, PropagationConfig, PropagationError};
use crate::nn::{self, ModelConfig, ModelParams, NnError, TrainingSet};
use crate::par;
pub use metrics::{compute_metrics, ConfusionMatrix, EmptyMatrix, Metrics};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("window {recording_id}@{start_sample} appears twice")]
    DuplicateWindow { recording_id: String, start_sample: usize },
    #[error("windows have differing lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
}

/// Preprocessed, labelled windows of one or more recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    windows: Vec<Window>,
    pub sample_rate: u32,
    pub propagation_applied: bool,
}

impl Dataset {
    /// Checks that all windows share one length and that no
    /// (recording, start) pair repeats.
    pub fn new(windows: Vec<Window>, sample_rate: u32, propagation_applied: bool) -> Result<Self, DetectorError> {
        if let Some(first) = windows.first() {
            if let Some(w) = windows.iter().find(|w| w.len() != first.len()) {
                return Err(DetectorError::LengthMismatch(first.len(), w.len()));
            }
        }
        let mut seen = HashSet::with_capacity(windows.len());
        for w in &windows {
            if !seen.insert((w.recording_id.as_str(), w.start_sample)) {
                return Err(DetectorError::DuplicateWindow {
                    recording_id: w.recording_id.clone(),
                    start_sample: w.start_sample,
                });
            }
        }
        Ok(Self {
            windows,
            sample_rate,
            propagation_applied,
        })
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn into_windows(self) -> Vec<Window> {
        self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.windows.iter().filter(|w| w.label.is_positive()).count()
    }

    /// Recording ids in order of first appearance.
    pub fn recording_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.windows
            .iter()
            .map(|w| w.recording_id.as_str())
            .filter(|id| seen.insert(*id))
            .collect()
    }

    /// Borrowed view for [`nn::train`].
    pub fn training_set(&self) -> TrainingSet<'_> {
        TrainingSet {
            inputs: self.windows.iter().map(|w| w.samples.as_slice()).collect(),
            labels: self.windows.iter().map(|w| w.label.class_index()).collect(),
        }
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            windows: indices.iter().map(|&i| self.windows[i].clone()).collect(),
            sample_rate: self.sample_rate,
            propagation_applied: self.propagation_applied,
        }
    }
}

/// Preprocesses every recording and, when asked and enabled, propagates
/// labels within each recording.
pub fn build_dataset(
    recordings: &[(Recording, AnnotationTrack)],
    preprocess: &PreprocessConfig,
    propagation: &PropagationConfig,
    apply_propagation: bool,
) -> Result<Dataset, DetectorError> {
    preprocess.validate()?;
    propagation.validate()?;
    let applied = apply_propagation && propagation.enabled;
    let per_recording: Vec<Result<Vec<Window>, DetectorError>> = par::map(recordings, |(rec, track)| {
        let windows = dsp::preprocess_recording(rec, track, preprocess)?;
        if applied {
            Ok(labelprop::propagate(&windows, propagation)?)
        } else {
            Ok(windows)
        }
    });
    let mut windows = Vec::new();
    for r in per_recording {
        windows.extend(r?);
    }
    Dataset::new(windows, preprocess.sample_rate, applied)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Shuffle individual windows.
    #[default]
    Window,
    /// Shuffle whole recordings, keeping each recording on one side.
    Recording,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::Window => "window",
            SplitMode::Recording => "recording",
        }
    }
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "window" => Ok(SplitMode::Window),
            "recording" => Ok(SplitMode::Recording),
            other => Err(format!("unknown split mode `{other}` (expected window or recording)")),
        }
    }
}

/// Seeded shuffle; the first `floor(fraction * n)` units go to training.
pub fn split_train_val(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(Dataset, Dataset), DetectorError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DetectorError::InvalidFraction(fraction));
    }
    if dataset.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, val): (Vec<usize>, Vec<usize>) = match mode {
        SplitMode::Window => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut rng);
            let cut = (fraction * idx.len() as f64).floor() as usize;
            (idx[..cut].to_vec(), idx[cut..].to_vec())
        }
        SplitMode::Recording => {
            let mut ids = dataset.recording_ids();
            ids.sort_unstable();
            ids.shuffle(&mut rng);
            let cut = (fraction * ids.len() as f64).floor() as usize;
            let train_ids: HashSet<&str> = ids[..cut].iter().copied().collect();
            (0..dataset.len()).partition(|&i| train_ids.contains(dataset.windows[i].recording_id.as_str()))
        }
    };
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

/// Anything that labels a preprocessed window.
pub trait WindowClassifier: Sync {
    fn classify(&self, window: &Window) -> Result<(Label, f64), DetectorError>;
}

/// A trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub config: ModelConfig,
}

impl WindowClassifier for Model {
    fn classify(&self, window: &Window) -> Result<(Label, f64), DetectorError> {
        Ok(nn::predict(&self.params, &self.config, &window.samples)?)
    }
}

/// Returns each window's own label; used to check the scoring harness.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelOracle;

impl WindowClassifier for LabelOracle {
    fn classify(&self, window: &Window) -> Result<(Label, f64), DetectorError> {
        let p = if window.label.is_positive() { 1.0 } else { 0.0 };
        Ok((window.label, p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// One report per recording, in order of first appearance.
    pub reports: Vec<DetectionReport>,
}

/// One JSON-lines record of evaluation results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub recall_vacuous: bool,
    pub precision_vacuous: bool,
}

impl MetricsSummary {
    pub fn new(cm: &ConfusionMatrix, m: &Metrics) -> Self {
        Self {
            accuracy: m.accuracy,
            recall: m.recall,
            precision: m.precision,
            tp: cm.tp,
            tn: cm.tn,
            fp: cm.fp,
            fn_: cm.fn_,
            recall_vacuous: m.recall_vacuous,
            precision_vacuous: m.precision_vacuous,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

/// Classifies every window and scores the predictions against its labels.
pub fn evaluate(classifier: &impl WindowClassifier, dataset: &Dataset) -> Result<Evaluation, DetectorError> {
    if dataset.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    let predictions = par::map(dataset.windows(), |w| classifier.classify(w));
    let ids = dataset.recording_ids();
    let mut reports: Vec<DetectionReport> = ids
        .iter()
        .map(|id| DetectionReport::new(*id, dataset.sample_rate))
        .collect();
    let mut confusion = ConfusionMatrix::default();
    for (w, pred) in dataset.windows().iter().zip(predictions) {
        let (label, p) = pred?;
        confusion.record(w.label.is_positive(), label.is_positive());
        let slot = ids.iter().position(|id| *id == w.recording_id).expect("id collected above");
        reports[slot].entries.push(DetectionEntry {
            window_start_sample: w.start_sample,
            label,
            probability_positive: p,
        });
    }
    let metrics = compute_metrics(&confusion).map_err(|_| DetectorError::EmptyDataset)?;
    Ok(Evaluation {
        confusion,
        metrics,
        reports,
    })
}

/// Preprocesses a recording on its own and classifies every window.
pub fn detect_recording(
    classifier: &impl WindowClassifier,
    recording: &Recording,
    preprocess: &PreprocessConfig,
) -> Result<DetectionReport, DetectorError> {
    let windows = dsp::preprocess_windows(recording, preprocess)?;
    let predictions = par::map(&windows, |w| classifier.classify(w));
    let mut report = DetectionReport::new(recording.id.clone(), recording.sample_rate);
    for (w, pred) in windows.iter().zip(predictions) {
        let (label, probability_positive) = pred?;
        report.entries.push(DetectionEntry {
            window_start_sample: w.start_sample,
            label,
            probability_positive,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::LabelSource;
    use proptest::prelude::*;

    fn win(id: &str, start: usize, label: Label) -> Window {
        Window {
            recording_id: id.into(),
            start_sample: start,
            samples: vec![start as f64; 4],
            label,
            label_source: LabelSource::Expert,
            normalized: true,
            degenerate: false,
        }
    }

    fn dataset(n: usize) -> Dataset {
        let windows = (0..n)
            .map(|i| win(if i % 3 == 0 { "a" } else { "b" }, i, Label::from_class_index(i % 2)))
            .collect();
        Dataset::new(windows, 2000, false).unwrap()
    }

    #[test]
    fn empty_recording_list() {
        let d = build_dataset(&[], &PreprocessConfig::default(), &PropagationConfig::default(), true).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn duplicate_windows_rejected() {
        let e = Dataset::new(vec![win("a", 0, Label::Negative), win("a", 0, Label::Positive)], 2000, false);
        assert!(matches!(e, Err(DetectorError::DuplicateWindow { .. })));
        assert!(Dataset::new(vec![win("a", 0, Label::Negative), win("b", 0, Label::Negative)], 2000, false).is_ok());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = dataset(10);
        let (t, v) = split_train_val(&d, 0.8, 3, SplitMode::Window).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        assert_eq!(split_train_val(&d, 0.8, 3, SplitMode::Window).unwrap(), (t, v));
        assert!(matches!(
            split_train_val(&d, 1.0, 3, SplitMode::Window),
            Err(DetectorError::InvalidFraction(_))
        ));
        let empty = Dataset::new(Vec::new(), 2000, false).unwrap();
        assert!(matches!(
            split_train_val(&empty, 0.5, 0, SplitMode::Window),
            Err(DetectorError::EmptyDataset)
        ));
    }

    #[test]
    fn recording_split_keeps_recordings_whole() {
        let d = dataset(30);
        let (t, v) = split_train_val(&d, 0.5, 1, SplitMode::Recording).unwrap();
        let ti: HashSet<&str> = t.recording_ids().into_iter().collect();
        let vi: HashSet<&str> = v.recording_ids().into_iter().collect();
        assert!(ti.is_disjoint(&vi));
        assert_eq!(t.len() + v.len(), 30);
    }

    #[test]
    fn oracle_scores_perfectly() {
        let e = evaluate(&LabelOracle, &dataset(12)).unwrap();
        assert_eq!((e.metrics.accuracy, e.metrics.recall, e.metrics.precision), (1.0, 1.0, 1.0));
        assert_eq!(e.confusion.total(), 12);
        assert_eq!(e.reports.len(), 2);
        assert_eq!(e.reports.iter().map(|r| r.entries.len()).sum::<usize>(), 12);
    }

    struct AllNegative;
    impl WindowClassifier for AllNegative {
        fn classify(&self, _: &Window) -> Result<(Label, f64), DetectorError> {
            Ok((Label::Negative, 0.0))
        }
    }

    #[test]
    fn all_negative_has_zero_recall() {
        let e = evaluate(&AllNegative, &dataset(12)).unwrap();
        assert_eq!(e.metrics.recall, 0.0);
        assert!(e.metrics.precision_vacuous);
        assert!(matches!(
            evaluate(&AllNegative, &Dataset::new(Vec::new(), 2000, false).unwrap()),
            Err(DetectorError::EmptyDataset)
        ));
    }

    #[test]
    fn summary_json_keys() {
        let cm = ConfusionMatrix::new(1374, 1696, 429, 96);
        let m = compute_metrics(&cm).unwrap();
        let line = MetricsSummary::new(&cm, &m).to_json_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        for k in ["accuracy", "recall", "precision", "tp", "tn", "fp", "fn"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
        assert_eq!(v["fn"], 96);
    }

    #[test]
    fn short_recording_is_too_short() {
        let rec = Recording::new("s", 2000, vec![0.1; 4999]).unwrap();
        assert!(matches!(
            detect_recording(&LabelOracle, &rec, &PreprocessConfig::default()),
            Err(DetectorError::Dsp(DspError::TooShort { .. }))
        ));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 1usize..60, f in 0.05f64..0.95, seed in any::<u64>(), by_rec in any::<bool>()) {
            let d = dataset(n);
            let mode = if by_rec { SplitMode::Recording } else { SplitMode::Window };
            let (t, v) = split_train_val(&d, f, seed, mode).unwrap();
            let mut keys: Vec<(String, usize)> = t.windows().iter().chain(v.windows())
                .map(|w| (w.recording_id.clone(), w.start_sample)).collect();
            keys.sort();
            let mut expect: Vec<(String, usize)> = d.windows().iter()
                .map(|w| (w.recording_id.clone(), w.start_sample)).collect();
            expect.sort();
            prop_assert_eq!(keys, expect);
            if !by_rec {
                prop_assert_eq!(t.len(), (f * n as f64).floor() as usize);
            }
        }

        #[test]
        fn confusion_conserves_windows(labels in proptest::collection::vec(any::<bool>(), 1..40)) {
            let windows = labels.iter().enumerate()
                .map(|(i, &p)| win("r", i, if p { Label::Positive } else { Label::Negative })).collect();
            let d = Dataset::new(windows, 2000, false).unwrap();
            let e = evaluate(&AllNegative, &d).unwrap();
            prop_assert_eq!(e.confusion.total() as usize, labels.len());
            prop_assert!((0.0..=1.0).contains(&e.metrics.accuracy));
            prop_assert_eq!(e.metrics.accuracy, (e.confusion.tp + e.confusion.tn) as f64 / labels.len() as f64);
        }
    }
}
