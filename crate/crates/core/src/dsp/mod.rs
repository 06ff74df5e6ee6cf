//! Signal conditioning: segmentation, spectral-floor denoising, bandpass
//! filtering and per-window normalization.
//!
//! [`preprocess_recording`] runs the stages in order: segment, assign expert
//! labels, estimate the spectral floor from the raw segments, denoise each
//! window, bandpass each window, normalize each window.

pub mod butterworth;
pub mod fft;

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::audio_io::{AnnotationTrack, Label, Recording};
use crate::par;
pub use butterworth::SosFilter;
pub use fft::{dft, idft, power_spectrum, DftPlan};

/// Standard deviation below which a window counts as silent.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("recording has {n} samples, fewer than one {window}-sample window")]
    TooShort { n: usize, window: usize },
    #[error("window of {0} s is not a whole number of samples")]
    NonIntegerWindow(f64),
    #[error("hop of {0} s is not a positive whole number of samples")]
    NonIntegerHop(f64),
    #[error("window [{start}, {end}) lies outside the annotation track")]
    OutOfRange { start: usize, end: usize },
    #[error("no windows supplied")]
    EmptyInput,
    #[error("windows come from more than one recording")]
    MixedRecordings,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid denoise parameters: {0}")]
    InvalidDenoise(String),
    #[error("invalid bandpass: {0}")]
    InvalidSpec(String),
    #[error("recording sample rate {actual} Hz differs from the configured {expected} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },
    #[error("annotation track covers {track} samples but recording has {recording}")]
    TrackLengthMismatch { track: usize, recording: usize },
}

/// Where a window's label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelSource {
    Expert,
    Propagated,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Expert => "expert",
            LabelSource::Propagated => "propagated",
        }
    }
}

/// A fixed-length segment of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub recording_id: String,
    pub start_sample: usize,
    pub samples: Vec<f64>,
    /// Negative until labels are assigned.
    pub label: Label,
    pub label_source: LabelSource,
    pub normalized: bool,
    /// Set by [`normalize`] for zero-variance input.
    pub degenerate: bool,
}

impl Window {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Window length and overlap, both in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowGeometry {
    pub window_seconds: f64,
    pub overlap_seconds: f64,
}

impl Default for WindowGeometry {
    fn default() -> Self {
        Self {
            window_seconds: 2.5,
            overlap_seconds: 1.0,
        }
    }
}

fn whole_samples(seconds: f64, sample_rate: u32) -> Option<usize> {
    let x = seconds * sample_rate as f64;
    let r = x.round();
    ((x - r).abs() < 1e-9 && r >= 1.0).then_some(r as usize)
}

impl WindowGeometry {
    /// `(window_len, hop)` in samples.
    pub fn in_samples(&self, sample_rate: u32) -> Result<(usize, usize), DspError> {
        let w = whole_samples(self.window_seconds, sample_rate)
            .ok_or(DspError::NonIntegerWindow(self.window_seconds))?;
        let hop_s = self.window_seconds - self.overlap_seconds;
        let h = whole_samples(hop_s, sample_rate).ok_or(DspError::NonIntegerHop(hop_s))?;
        Ok((w, h))
    }
}

/// Number of windows `floor((n - w) / hop) + 1`, or 0 when `n < w`.
pub fn window_count(n: usize, window: usize, hop: usize) -> usize {
    if n < window {
        0
    } else {
        (n - window) / hop + 1
    }
}

/// Splits a recording into windows starting at `0, hop, 2*hop, ...`; a
/// trailing remainder shorter than a window is dropped.
pub fn segment(recording: &Recording, geometry: WindowGeometry) -> Result<Vec<Window>, DspError> {
    let (w, hop) = geometry.in_samples(recording.sample_rate)?;
    let n = recording.samples.len();
    if n < w {
        return Err(DspError::TooShort { n, window: w });
    }
    Ok((0..window_count(n, w, hop))
        .map(|i| {
            let start = i * hop;
            Window {
                recording_id: recording.id.clone(),
                start_sample: start,
                samples: recording.samples[start..start + w].to_vec(),
                label: Label::Negative,
                label_source: LabelSource::Expert,
                normalized: false,
                degenerate: false,
            }
        })
        .collect())
}

/// Positive iff every sample the window spans is annotated positive.
pub fn assign_window_label(window: &Window, track: &AnnotationTrack) -> Result<Label, DspError> {
    let (start, end) = (window.start_sample, window.start_sample + window.samples.len());
    match track.all_positive(start, end) {
        Some(true) => Ok(Label::Positive),
        Some(false) => Ok(Label::Negative),
        None => Err(DspError::OutOfRange { start, end }),
    }
}

// ---------------------------------------------------------------------------
// Spectral floor denoising
// ---------------------------------------------------------------------------

/// Power spectrum of a representative noise window.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFloor {
    pub recording_id: String,
    pub power: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseParams {
    /// Sigmoid steepness.
    pub alpha: f64,
    /// Floor scaling.
    pub beta: f64,
    /// Relative division guard; the absolute guard added to the gain
    /// denominator is `epsilon * max(floor) + 1e-30`.
    pub epsilon: f64,
}

impl Default for DenoiseParams {
    fn default() -> Self {
        Self {
            alpha: 2.5,
            beta: 50.0,
            epsilon: 1e-12,
        }
    }
}

impl DenoiseParams {
    pub fn validate(&self) -> Result<(), DspError> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("epsilon", self.epsilon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DspError::InvalidDenoise(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

fn population_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Picks the window at rank `floor(0.25 * (count - 1))` when windows are
/// ordered by their peak spectral power, and returns its power spectrum.
/// Silent windows are not candidates unless every window is silent.
pub fn spectral_floor(windows: &[Window]) -> Result<SpectralFloor, DspError> {
    let first = windows.first().ok_or(DspError::EmptyInput)?;
    if windows.iter().any(|w| w.recording_id != first.recording_id) {
        return Err(DspError::MixedRecordings);
    }
    let len = first.samples.len();
    if let Some(w) = windows.iter().find(|w| w.samples.len() != len) {
        return Err(DspError::LengthMismatch {
            expected: len,
            actual: w.samples.len(),
        });
    }
    let mut candidates: Vec<&Window> = windows
        .iter()
        .filter(|w| population_std(&w.samples) >= DEGENERATE_STD)
        .collect();
    if candidates.is_empty() {
        candidates = windows.iter().collect();
    }

    let plan = DftPlan::new(len);
    let spectra: Vec<Vec<f64>> = par::map(&candidates, |w| {
        plan.forward_real(&w.samples)
            .iter()
            .map(|c| c.norm_sqr())
            .collect()
    });
    let mut order: Vec<(f64, usize)> = spectra
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().copied().fold(0.0, f64::max), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let rank = (0.25 * (order.len() - 1) as f64).floor() as usize;
    let chosen = order[rank].1;
    Ok(SpectralFloor {
        recording_id: first.recording_id.clone(),
        power: spectra[chosen].clone(),
    })
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-bin gain `sigma(alpha * (p - beta*floor) / (beta*floor + guard))`.
pub fn denoise_gain(power: f64, floor: f64, params: &DenoiseParams, guard: f64) -> f64 {
    let scaled = params.beta * floor;
    sigmoid(params.alpha * (power - scaled) / (scaled + guard))
}

/// Applies the spectral-floor gain to windows of one fixed length.
#[derive(Debug, Clone)]
pub struct Denoiser {
    plan: DftPlan,
    floor: Vec<f64>,
    params: DenoiseParams,
    guard: f64,
}

impl Denoiser {
    pub fn new(floor: &SpectralFloor, params: DenoiseParams) -> Result<Self, DspError> {
        params.validate()?;
        if floor.power.is_empty() {
            return Err(DspError::EmptyInput);
        }
        let peak = floor.power.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            plan: DftPlan::new(floor.power.len()),
            floor: floor.power.clone(),
            params,
            guard: params.epsilon * peak + 1e-30,
        })
    }

    pub fn gains(&self, power: &[f64]) -> Vec<f64> {
        power
            .iter()
            .zip(&self.floor)
            .map(|(&p, &f)| denoise_gain(p, f, &self.params, self.guard))
            .collect()
    }

    /// Returns the denoised signal and the largest imaginary residue left by
    /// the inverse transform.
    pub fn apply_with_residual(&self, samples: &[f64]) -> Result<(Vec<f64>, f64), DspError> {
        if samples.len() != self.floor.len() {
            return Err(DspError::LengthMismatch {
                expected: self.floor.len(),
                actual: samples.len(),
            });
        }
        let mut spec = self.plan.forward_real(samples);
        for (c, &f) in spec.iter_mut().zip(&self.floor) {
            *c *= denoise_gain(c.norm_sqr(), f, &self.params, self.guard);
        }
        self.plan.inverse_in_place(&mut spec);
        let residual = spec.iter().map(|c: &Complex64| c.im.abs()).fold(0.0, f64::max);
        Ok((spec.iter().map(|c| c.re).collect(), residual))
    }

    pub fn apply(&self, samples: &[f64]) -> Result<Vec<f64>, DspError> {
        self.apply_with_residual(samples).map(|(x, _)| x)
    }
}

pub fn denoise(
    window_samples: &[f64],
    floor: &SpectralFloor,
    params: &DenoiseParams,
) -> Result<Vec<f64>, DspError> {
    Denoiser::new(floor, *params)?.apply(window_samples)
}

// ---------------------------------------------------------------------------
// Bandpass
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Poles of the lowpass prototype; the bandpass has twice as many.
    pub order: usize,
}

impl Default for BandpassSpec {
    fn default() -> Self {
        Self {
            low_hz: 20.0,
            high_hz: 200.0,
            order: 4,
        }
    }
}

impl BandpassSpec {
    pub fn validate(&self, sample_rate: u32) -> Result<(), DspError> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < nyquist) {
            return Err(DspError::InvalidSpec(format!(
                "need 0 < low ({}) < high ({}) < Nyquist ({nyquist})",
                self.low_hz, self.high_hz
            )));
        }
        if self.order == 0 {
            return Err(DspError::InvalidSpec("order must be at least 1".into()));
        }
        Ok(())
    }

    pub fn design(&self, sample_rate: u32) -> Result<SosFilter, DspError> {
        self.validate(sample_rate)?;
        Ok(SosFilter::butterworth_bandpass(
            self.order,
            self.low_hz,
            self.high_hz,
            sample_rate as f64,
        ))
    }

    /// Reflective padding per side used by [`bandpass`].
    pub fn padding(&self) -> usize {
        3 * self.order
    }
}

/// Zero-phase Butterworth bandpass.
pub fn bandpass(signal: &[f64], spec: &BandpassSpec, sample_rate: u32) -> Result<Vec<f64>, DspError> {
    let filter = spec.design(sample_rate)?;
    Ok(filter.filtfilt(signal, spec.padding()))
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Zero mean, unit population standard deviation. Returns `(output,
/// degenerate)`; zero-variance input maps to all zeros with `degenerate` set.
pub fn normalize(samples: &[f64]) -> (Vec<f64>, bool) {
    if samples.is_empty() {
        return (Vec::new(), true);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std >= DEGENERATE_STD) {
        return (vec![0.0; samples.len()], true);
    }
    (samples.iter().map(|v| (v - mean) / std).collect(), false)
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    /// Sample rate recordings must have; window lengths depend on it.
    pub sample_rate: u32,
    pub geometry: WindowGeometry,
    pub denoise: DenoiseParams,
    pub bandpass: BandpassSpec,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            sample_rate: 2000,
            geometry: WindowGeometry::default(),
            denoise: DenoiseParams::default(),
            bandpass: BandpassSpec::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        self.geometry.in_samples(self.sample_rate)?;
        self.denoise.validate()?;
        self.bandpass.validate(self.sample_rate)
    }

    pub fn window_len(&self) -> Result<usize, DspError> {
        Ok(self.geometry.in_samples(self.sample_rate)?.0)
    }
}

/// Conditions every window of a recording without assigning labels.
pub fn preprocess_windows(
    recording: &Recording,
    config: &PreprocessConfig,
) -> Result<Vec<Window>, DspError> {
    config.validate()?;
    if recording.sample_rate != config.sample_rate {
        return Err(DspError::SampleRateMismatch {
            expected: config.sample_rate,
            actual: recording.sample_rate,
        });
    }
    let windows = segment(recording, config.geometry)?;
    condition(windows, config)
}

fn condition(mut windows: Vec<Window>, config: &PreprocessConfig) -> Result<Vec<Window>, DspError> {
    let floor = spectral_floor(&windows)?;
    let denoiser = Denoiser::new(&floor, config.denoise)?;
    let filter = config.bandpass.design(config.sample_rate)?;
    let pad = config.bandpass.padding();

    let conditioned: Vec<Result<(Vec<f64>, bool), DspError>> = par::map(&windows, |w| {
        let clean = denoiser.apply(&w.samples)?;
        let band = filter.filtfilt(&clean, pad);
        Ok(normalize(&band))
    });
    for (w, result) in windows.iter_mut().zip(conditioned) {
        let (samples, degenerate) = result?;
        w.samples = samples;
        w.normalized = true;
        w.degenerate = degenerate;
        if degenerate {
            w.label = Label::Negative;
        }
    }
    Ok(windows)
}

/// Full conditioning of one labelled recording.
pub fn preprocess_recording(
    recording: &Recording,
    track: &AnnotationTrack,
    config: &PreprocessConfig,
) -> Result<Vec<Window>, DspError> {
    config.validate()?;
    if recording.sample_rate != config.sample_rate {
        return Err(DspError::SampleRateMismatch {
            expected: config.sample_rate,
            actual: recording.sample_rate,
        });
    }
    if track.n_samples() != recording.samples.len() {
        return Err(DspError::TrackLengthMismatch {
            track: track.n_samples(),
            recording: recording.samples.len(),
        });
    }
    let mut windows = segment(recording, config.geometry)?;
    for w in &mut windows {
        w.label = assign_window_label(w, track)?;
        w.label_source = LabelSource::Expert;
    }
    condition(windows, config)
}
