//! Similarity-based label propagation within a single recording.
//!
//! An expert-negative window becomes positive when its normalized inner
//! product with some expert-positive window of the same recording reaches the
//! threshold. Only expert positives act as anchors, so a second pass changes
//! nothing.

use thiserror::Error;

use crate::audio_io::Label;
use crate::dsp::{LabelSource, Window};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("window at sample {0} is not normalized")]
    NotNormalized(usize),
    #[error("window at sample {0} is degenerate")]
    DegenerateWindow(usize),
    #[error("windows come from more than one recording (`{0}` and `{1}`)")]
    MixedRecordings(String, String),
    #[error("window lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    pub threshold: f64,
    pub enabled: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            threshold: 0.95,
            enabled: true,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<(), PropagationError> {
        if self.threshold > 0.0 && self.threshold <= 1.0 {
            Ok(())
        } else {
            Err(PropagationError::InvalidThreshold(self.threshold))
        }
    }
}

/// `(1/W) * sum a[i] b[i]` for two normalized windows.
pub fn similarity(a: &Window, b: &Window) -> Result<f64, PropagationError> {
    for w in [a, b] {
        if !w.normalized {
            return Err(PropagationError::NotNormalized(w.start_sample));
        }
        if w.degenerate {
            return Err(PropagationError::DegenerateWindow(w.start_sample));
        }
    }
    if a.samples.len() != b.samples.len() {
        return Err(PropagationError::LengthMismatch(a.samples.len(), b.samples.len()));
    }
    Ok(inner(&a.samples, &b.samples))
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Outcome for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flip {
    pub index: usize,
    /// Best similarity to any expert positive; `None` when no anchor applies.
    pub best_similarity: Option<f64>,
    pub flipped: bool,
}

/// Best similarity of each expert-negative, non-degenerate window to the
/// expert positives.
pub fn scan(windows: &[Window], threshold: f64) -> Result<Vec<Flip>, PropagationError> {
    let Some(first) = windows.first() else {
        return Ok(Vec::new());
    };
    for w in windows {
        if w.recording_id != first.recording_id {
            return Err(PropagationError::MixedRecordings(
                first.recording_id.clone(),
                w.recording_id.clone(),
            ));
        }
        if w.samples.len() != first.samples.len() {
            return Err(PropagationError::LengthMismatch(
                first.samples.len(),
                w.samples.len(),
            ));
        }
        if !w.normalized {
            return Err(PropagationError::NotNormalized(w.start_sample));
        }
    }
    let anchors: Vec<&Window> = windows
        .iter()
        .filter(|w| w.label.is_positive() && w.label_source == LabelSource::Expert && !w.degenerate)
        .collect();
    let candidates: Vec<usize> = (0..windows.len())
        .filter(|&i| {
            let w = &windows[i];
            !w.label.is_positive() && w.label_source == LabelSource::Expert && !w.degenerate
        })
        .collect();
    Ok(par::map(&candidates, |&i| {
        let best = anchors
            .iter()
            .map(|p| inner(&windows[i].samples, &p.samples))
            .reduce(f64::max);
        Flip {
            index: i,
            best_similarity: best,
            flipped: best.is_some_and(|s| s >= threshold),
        }
    }))
}

/// Relabels expert negatives that match an expert positive.
pub fn propagate(
    windows: &[Window],
    config: &PropagationConfig,
) -> Result<Vec<Window>, PropagationError> {
    config.validate()?;
    let mut out = windows.to_vec();
    if !config.enabled {
        // still reject batches that would have been invalid
        scan(windows, config.threshold)?;
        return Ok(out);
    }
    for flip in scan(windows, config.threshold)? {
        if flip.flipped {
            out[flip.index].label = Label::Positive;
            out[flip.index].label_source = LabelSource::Propagated;
        }
    }
    Ok(out)
}
