//! Seeded synthetic recordings of whale-like calls in noise.
//!
//! A call is a run of tonal units, each a linear frequency sweep with
//! raised-cosine onset and offset ramps, separated by short gaps. Calls sit
//! at random non-overlapping offsets over white noise plus a 1-10 Hz rumble.
//! Complete calls are annotated positive; a truncated call is annotated
//! negative while the ground truth still records its activity.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::audio_io::{AnnotationTrack, Recording};
use crate::dsp::{window_count, WindowGeometry};
use crate::par;

/// Lowest and highest instantaneous frequency a call may use.
pub const CALL_BAND_HZ: (f64, f64) = (20.0, 200.0);
pub const RAMP_SECONDS: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
    #[error("cannot place {calls} calls totalling {needed} samples in {available} samples")]
    Overcrowded { calls: usize, needed: usize, available: usize },
}

/// Inclusive range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span<T> {
    pub min: T,
    pub max: T,
}

impl<T> Span<T> {
    pub const fn new(min: T, max: T) -> Self {
        Self { min, max }
    }
}

impl Span<f64> {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }

    fn check(&self, name: &str) -> Result<(), SynthError> {
        if self.min.is_finite() && self.max.is_finite() && self.min <= self.max {
            Ok(())
        } else {
            Err(SynthError::InvalidParams(format!("{name}: empty range [{}, {}]", self.min, self.max)))
        }
    }
}

impl Span<usize> {
    fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallParams {
    pub n_units: Span<usize>,
    pub unit_duration_seconds: Span<f64>,
    pub gap_seconds: Span<f64>,
    /// Start frequency of each unit.
    pub fundamental_hz: Span<f64>,
    pub sweep_hz_per_s: Span<f64>,
    pub amplitude: Span<f64>,
}

impl Default for CallParams {
    fn default() -> Self {
        Self {
            n_units: Span::new(3, 5),
            unit_duration_seconds: Span::new(1.5, 3.0),
            gap_seconds: Span::new(0.1, 0.3),
            fundamental_hz: Span::new(30.0, 180.0),
            sweep_hz_per_s: Span::new(-4.0, 4.0),
            amplitude: Span::new(0.1, 0.3),
        }
    }
}

impl CallParams {
    pub fn validate(&self, sample_rate: u32) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParams(m));
        if self.n_units.min == 0 || self.n_units.min > self.n_units.max {
            return bad(format!("n_units: invalid range [{}, {}]", self.n_units.min, self.n_units.max));
        }
        self.unit_duration_seconds.check("unit_duration_seconds")?;
        self.gap_seconds.check("gap_seconds")?;
        self.fundamental_hz.check("fundamental_hz")?;
        self.sweep_hz_per_s.check("sweep_hz_per_s")?;
        self.amplitude.check("amplitude")?;
        if self.unit_duration_seconds.min < 2.0 * RAMP_SECONDS {
            return bad(format!("units must last at least {} s", 2.0 * RAMP_SECONDS));
        }
        if self.gap_seconds.min < 0.0 {
            return bad("gap_seconds must be non-negative".into());
        }
        let (lo, hi) = CALL_BAND_HZ;
        if self.fundamental_hz.min < lo || self.fundamental_hz.max > hi {
            return bad(format!("fundamental_hz must lie within [{lo}, {hi}]"));
        }
        if hi >= sample_rate as f64 / 2.0 {
            return bad(format!("call band exceeds the Nyquist frequency of {sample_rate} Hz"));
        }
        if self.amplitude.min < 0.0 || self.amplitude.max >= 1.0 {
            return bad("amplitude must lie in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Standard deviation of the white Gaussian component.
    pub white_level: f64,
    /// Peak amplitude of the 1-10 Hz rumble.
    pub rumble_level: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            white_level: 0.05,
            rumble_level: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub duration_seconds: f64,
    pub sample_rate: u32,
    pub calls_per_recording: Span<usize>,
    pub call: CallParams,
    pub noise: NoiseParams,
    pub partial_call_probability: f64,
    /// Minimum silence between neighbouring calls.
    pub min_separation_seconds: f64,
    /// Grid that truncation points snap to.
    pub geometry: WindowGeometry,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_seconds: 60.0,
            sample_rate: 2000,
            calls_per_recording: Span::new(1, 2),
            call: CallParams::default(),
            noise: NoiseParams::default(),
            partial_call_probability: 0.1,
            min_separation_seconds: 2.5,
            geometry: WindowGeometry::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParams(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if !(self.duration_seconds > 0.0 && self.duration_seconds.is_finite()) {
            return bad(format!("duration_seconds must be positive, got {}", self.duration_seconds));
        }
        if self.calls_per_recording.min > self.calls_per_recording.max {
            return bad("calls_per_recording: empty range".into());
        }
        if !(0.0..=1.0).contains(&self.partial_call_probability) {
            return bad("partial_call_probability must lie in [0, 1]".into());
        }
        if !(self.noise.white_level >= 0.0 && self.noise.rumble_level >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !(self.min_separation_seconds >= 0.0) {
            return bad("min_separation_seconds must be non-negative".into());
        }
        self.geometry
            .in_samples(self.sample_rate)
            .map_err(|e| SynthError::InvalidParams(e.to_string()))?;
        self.call.validate(self.sample_rate)
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_seconds * self.sample_rate as f64).round() as usize
    }
}

/// A call waveform with its unit extents as sample ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    pub samples: Vec<f64>,
    pub units: Vec<(usize, usize)>,
}

impl Call {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn ramp(i: usize, n: usize, ramp_len: usize) -> f64 {
    let edge = i.min(n - 1 - i);
    if edge >= ramp_len {
        1.0
    } else {
        0.5 * (1.0 - (PI * edge as f64 / ramp_len as f64).cos())
    }
}

/// One swept unit: start frequency `f0`, sweep `rate` Hz/s.
fn render_unit(n: usize, f0: f64, rate: f64, amplitude: f64, sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let ramp_len = (RAMP_SECONDS * fs).round() as usize;
    let phase0 = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let phase = phase0 + 2.0 * PI * (f0 * t + 0.5 * rate * t * t);
            amplitude * ramp(i, n, ramp_len) * phase.sin()
        })
        .collect()
}

/// Sweep rate keeping `f0 + rate * d` inside `[lo, hi]`.
fn bounded_sweep(f0: f64, rate: f64, d: f64, lo: f64, hi: f64) -> f64 {
    let end = f0 + rate * d;
    if end >= lo && end <= hi {
        return rate;
    }
    let mirrored = f0 - rate * d;
    if mirrored >= lo && mirrored <= hi {
        return -rate;
    }
    (end.clamp(lo, hi) - f0) / d
}

/// Draws one call: `n_units` swept tones with gaps in between.
pub fn generate_call(params: &CallParams, sample_rate: u32, rng: &mut impl Rng) -> Result<Call, SynthError> {
    params.validate(sample_rate)?;
    let fs = sample_rate as f64;
    let n_units = params.n_units.sample(rng);
    let amplitude = params.amplitude.sample(rng);
    let mut samples = Vec::new();
    let mut units = Vec::with_capacity(n_units);
    for u in 0..n_units {
        if u > 0 {
            let gap = (params.gap_seconds.sample(rng) * fs).round() as usize;
            samples.resize(samples.len() + gap, 0.0);
        }
        let d = params.unit_duration_seconds.sample(rng);
        let n = (d * fs).round() as usize;
        let f0 = params.fundamental_hz.sample(rng);
        let rate = bounded_sweep(
            f0,
            params.sweep_hz_per_s.sample(rng),
            n as f64 / fs,
            params.fundamental_hz.min,
            params.fundamental_hz.max,
        );
        let start = samples.len();
        samples.extend(render_unit(n, f0, rate, amplitude, sample_rate));
        units.push((start, samples.len()));
    }
    Ok(Call { samples, units })
}

/// Where a call landed and whether it was cut short.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacedCall {
    pub start: usize,
    pub end: usize,
    pub truncated: bool,
}

/// Per-window construction-time labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowTruth {
    pub start_sample: usize,
    /// Some sample lies inside a call, complete or truncated.
    pub active: bool,
    /// Every sample lies inside one complete call.
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub calls: Vec<PlacedCall>,
    pub activity: Vec<bool>,
    pub windows: Vec<WindowTruth>,
}

impl GroundTruth {
    fn new(calls: Vec<PlacedCall>, n_samples: usize, window: usize, hop: usize) -> Self {
        let mut activity = vec![false; n_samples];
        for c in &calls {
            activity[c.start..c.end].fill(true);
        }
        let windows = (0..window_count(n_samples, window, hop))
            .map(|k| {
                let (s, e) = (k * hop, k * hop + window);
                WindowTruth {
                    start_sample: s,
                    active: activity[s..e].iter().any(|&a| a),
                    covered: calls.iter().any(|c| !c.truncated && c.start <= s && e <= c.end),
                }
            })
            .collect();
        Self {
            calls,
            activity,
            windows,
        }
    }

    pub fn covered_windows(&self) -> usize {
        self.windows.iter().filter(|w| w.covered).count()
    }

    pub fn active_windows(&self) -> usize {
        self.windows.iter().filter(|w| w.active).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecording {
    pub recording: Recording,
    pub track: AnnotationTrack,
    pub truth: GroundTruth,
}

/// White noise plus three random sinusoids between 1 and 10 Hz.
fn background(n: usize, sample_rate: u32, noise: &NoiseParams, rng: &mut impl Rng) -> Vec<f64> {
    let fs = sample_rate as f64;
    let rumble: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(1.0..10.0), rng.random_range(0.0..2.0 * PI)))
        .collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let r: f64 = rumble.iter().map(|(f, ph)| (2.0 * PI * f * t + ph).sin()).sum::<f64>() / 3.0;
            noise.white_level * rng.sample::<f64, _>(StandardNormal) + noise.rumble_level * r
        })
        .collect()
}

/// Mixes calls at given offsets into fresh background noise. Each entry is
/// `(start, call, truncate_at)`, where `truncate_at` cuts the call at that
/// absolute sample.
pub fn render(
    id: &str,
    config: &SynthConfig,
    calls: &[(usize, Call, Option<usize>)],
    rng: &mut impl Rng,
) -> Result<SynthRecording, SynthError> {
    config.validate()?;
    let n = config.n_samples();
    let (window, hop) = config
        .geometry
        .in_samples(config.sample_rate)
        .map_err(|e| SynthError::InvalidParams(e.to_string()))?;
    let mut samples = background(n, config.sample_rate, &config.noise, rng);
    let mut placed = Vec::with_capacity(calls.len());
    for (start, call, cut) in calls {
        let full_end = start + call.len();
        let end = cut.map_or(full_end, |c| c.min(full_end));
        if end > n || end <= *start {
            return Err(SynthError::InvalidParams(format!(
                "call [{start}, {end}) does not fit in {n} samples"
            )));
        }
        for (dst, src) in samples[*start..end].iter_mut().zip(&call.samples) {
            *dst += src;
        }
        placed.push(PlacedCall {
            start: *start,
            end,
            truncated: end < full_end,
        });
    }
    placed.sort_by_key(|c| c.start);
    if placed.windows(2).any(|p| p[1].start < p[0].end) {
        return Err(SynthError::InvalidParams("calls overlap".into()));
    }
    let positives: Vec<(usize, usize)> = placed.iter().filter(|c| !c.truncated).map(|c| (c.start, c.end)).collect();
    let recording =
        Recording::new(id, config.sample_rate, samples).map_err(|e| SynthError::InvalidParams(e.to_string()))?;
    let track = AnnotationTrack::from_positive_ranges(id, n, &positives)
        .map_err(|e| SynthError::InvalidParams(e.to_string()))?;
    Ok(SynthRecording {
        recording,
        track,
        truth: GroundTruth::new(placed, n, window, hop),
    })
}

/// Draws calls, places them without overlap and renders the recording.
pub fn generate_recording(id: &str, config: &SynthConfig, rng: &mut impl Rng) -> Result<SynthRecording, SynthError> {
    config.validate()?;
    let n = config.n_samples();
    let fs = config.sample_rate as f64;
    let sep = (config.min_separation_seconds * fs).round() as usize;
    let (_, hop) = config
        .geometry
        .in_samples(config.sample_rate)
        .map_err(|e| SynthError::InvalidParams(e.to_string()))?;
    let k = config.calls_per_recording.sample(rng);
    let calls: Vec<Call> = (0..k)
        .map(|_| generate_call(&config.call, config.sample_rate, rng))
        .collect::<Result<_, _>>()?;
    let needed = calls.iter().map(Call::len).sum::<usize>() + sep * k.saturating_sub(1);
    if needed > n {
        return Err(SynthError::Overcrowded {
            calls: k,
            needed,
            available: n,
        });
    }
    // split the slack into k+1 random gaps
    let slack = n - needed;
    let mut cuts: Vec<usize> = (0..k).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut placements = Vec::with_capacity(k);
    let mut cursor = 0;
    let mut prev_cut = 0;
    for (i, call) in calls.into_iter().enumerate() {
        cursor += cuts[i] - prev_cut;
        prev_cut = cuts[i];
        let start = cursor;
        let end = start + call.len();
        let truncate = rng.random_bool(config.partial_call_probability);
        let cut = truncate.then(|| {
            let candidates: Vec<usize> = (start / hop + 1..=end.div_ceil(hop))
                .map(|j| j * hop)
                .filter(|&b| b > start && b < end)
                .collect();
            if candidates.is_empty() {
                start + call.len() / 2
            } else {
                candidates[rng.random_range(0..candidates.len())]
            }
        });
        cursor = end + sep;
        placements.push((start, call, cut));
    }
    render(id, config, &placements, rng)
}

/// Recording `index` of a seeded corpus; every index draws from its own
/// stream so recordings can be generated independently.
pub fn corpus_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `count` recordings named `{prefix}_{index:03}`, using streams
/// `first_stream..first_stream + count`.
pub fn generate_corpus(
    config: &SynthConfig,
    prefix: &str,
    count: usize,
    first_stream: u64,
) -> Result<Vec<SynthRecording>, SynthError> {
    par::map_range(count, |i| {
        let mut rng = corpus_rng(config.seed, first_stream + i as u64);
        generate_recording(&format!("{prefix}_{i:03}"), config, &mut rng)
    })
    .into_iter()
    .collect()
}

/// A constant 50 Hz tone whose annotation stops before the tone does, so
/// several expert-negative windows are copies of positive ones. At 2000 Hz a
/// 50 Hz period is 40 samples and divides the 3000-sample hop.
pub fn truncated_call_fixture(seed: u64) -> SynthRecording {
    let config = SynthConfig {
        duration_seconds: 30.0,
        noise: NoiseParams {
            white_level: 0.01,
            rumble_level: 0.0,
        },
        ..SynthConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (start, end) = (6000, 27000);
    let tone = Call {
        samples: (0..end - start)
            .map(|i| 0.3 * (2.0 * PI * 50.0 * i as f64 / 2000.0).sin())
            .collect(),
        units: vec![(0, end - start)],
    };
    let mut out = render("fixture", &config, &[(start, tone, None)], &mut rng).expect("fixture is valid");
    out.track = AnnotationTrack::from_positive_ranges("fixture", config.n_samples(), &[(start, 18000)])
        .expect("fixture is valid");
    out
}

pub const GROUND_TRUTH_HEADER: &str = "window_start_sample,active,covered";

/// Per-window ground truth as CSV with 0/1 flags.
pub fn format_ground_truth(truth: &GroundTruth) -> String {
    let mut out = String::from(GROUND_TRUTH_HEADER);
    out.push('\n');
    for w in &truth.windows {
        let _ = writeln!(out, "{},{},{}", w.start_sample, u8::from(w.active), u8::from(w.covered));
    }
    out
}
