//! Spectrogram matrix and three-panel label image.
//!
//! The STFT uses 512-sample Hann windows with a 128-sample hop, so there are
//! 257 frequency bins and `floor((n - 512) / 128) + 1` frames. The CSV has one
//! row per bin (ascending frequency): the bin frequency followed by one dB
//! value per frame. The PPM image is one pixel column per frame; from top to
//! bottom it stacks a true-label band, a predicted-label band (only when
//! detections are given) and the spectrogram with high frequencies on top.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::audio_io::{AnnotationTrack, DetectionReport, Recording};
use crate::dsp::DftPlan;

pub const STFT_WINDOW: usize = 512;
pub const STFT_HOP: usize = 128;
/// Rows of each label band in the image.
pub const BAND_HEIGHT: usize = 16;
/// Dynamic range mapped onto the image's grey levels.
const DB_RANGE: f64 = 80.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub sample_rate: u32,
    pub frame_starts: Vec<usize>,
    /// `[bin][frame]`, power in dB.
    pub db: Vec<Vec<f64>>,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.db.len()
    }

    pub fn n_frames(&self) -> usize {
        self.frame_starts.len()
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / STFT_WINDOW as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frequency_hz");
        for s in &self.frame_starts {
            let _ = write!(out, ",{:.4}", *s as f64 / self.sample_rate as f64);
        }
        out.push('\n');
        for (k, row) in self.db.iter().enumerate() {
            let _ = write!(out, "{}", self.bin_hz(k));
            for v in row {
                let _ = write!(out, ",{v:.3}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
#[error("recording has {0} samples, fewer than one {STFT_WINDOW}-sample frame")]
pub struct TooShortForStft(pub usize);

pub fn spectrogram(rec: &Recording) -> Result<Spectrogram, TooShortForStft> {
    let n = rec.samples.len();
    if n < STFT_WINDOW {
        return Err(TooShortForStft(n));
    }
    let frames = (n - STFT_WINDOW) / STFT_HOP + 1;
    let hann: Vec<f64> = (0..STFT_WINDOW)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / STFT_WINDOW as f64).cos())
        .collect();
    let plan = DftPlan::new(STFT_WINDOW);
    let bins = STFT_WINDOW / 2 + 1;
    let mut db = vec![vec![0.0; frames]; bins];
    let mut frame_starts = Vec::with_capacity(frames);
    let mut buf = vec![0.0; STFT_WINDOW];
    for f in 0..frames {
        let start = f * STFT_HOP;
        frame_starts.push(start);
        for (i, b) in buf.iter_mut().enumerate() {
            *b = rec.samples[start + i] * hann[i];
        }
        let spec = plan.forward_real(&buf);
        for (k, row) in db.iter_mut().enumerate() {
            row[f] = 10.0 * (spec[k].norm_sqr() + 1e-20).log10();
        }
    }
    Ok(Spectrogram {
        sample_rate: rec.sample_rate,
        frame_starts,
        db,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB.
    pub pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }
}

const POSITIVE: [u8; 3] = [230, 120, 30];
const NEGATIVE: [u8; 3] = [40, 40, 60];

/// Builds the label/spectrogram figure. A frame's true label is the
/// annotation at its centre sample; its predicted label is positive when
/// any positive detection window of length `window` covers that sample.
pub fn plot_image(
    spec: &Spectrogram,
    track: &AnnotationTrack,
    detections: Option<&DetectionReport>,
    window: usize,
) -> Image {
    let width = spec.n_frames();
    let bands = if detections.is_some() { 2 } else { 1 };
    let height = bands * BAND_HEIGHT + spec.n_bins();
    let mut pixels = Vec::with_capacity(width * height);
    let centres: Vec<usize> = spec.frame_starts.iter().map(|s| s + STFT_WINDOW / 2).collect();

    let truth: Vec<[u8; 3]> = centres
        .iter()
        .map(|&c| match track.label_at(c) {
            Some(l) if l.is_positive() => POSITIVE,
            _ => NEGATIVE,
        })
        .collect();
    for _ in 0..BAND_HEIGHT {
        pixels.extend_from_slice(&truth);
    }
    if let Some(report) = detections {
        let predicted: Vec<[u8; 3]> = centres
            .iter()
            .map(|&c| {
                let hit = report.entries.iter().any(|e| {
                    e.label.is_positive() && e.window_start_sample <= c && c < e.window_start_sample + window
                });
                if hit {
                    POSITIVE
                } else {
                    NEGATIVE
                }
            })
            .collect();
        for _ in 0..BAND_HEIGHT {
            pixels.extend_from_slice(&predicted);
        }
    }
    let top = spec.db.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    for row in spec.db.iter().rev() {
        for v in row {
            let level = ((v - (top - DB_RANGE)) / DB_RANGE).clamp(0.0, 1.0);
            let g = (255.0 * level).round() as u8;
            pixels.push([g, g, g]);
        }
    }
    Image { width, height, pixels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::{DetectionEntry, Label};

    fn tone(hz: f64, n: usize) -> Recording {
        let s = (0..n).map(|i| 0.5 * (2.0 * PI * hz * i as f64 / 2000.0).sin()).collect();
        Recording::new("t", 2000, s).unwrap()
    }

    #[test]
    fn tone_peaks_in_nearest_bin() {
        let spec = spectrogram(&tone(100.0, 4000)).unwrap();
        assert_eq!(spec.n_bins(), 257);
        assert_eq!(spec.n_frames(), (4000 - 512) / 128 + 1);
        let nearest = (0..257)
            .min_by(|&a, &b| (spec.bin_hz(a) - 100.0).abs().total_cmp(&(spec.bin_hz(b) - 100.0).abs()))
            .unwrap();
        for f in 0..spec.n_frames() {
            let best = (0..257).max_by(|&a, &b| spec.db[a][f].total_cmp(&spec.db[b][f])).unwrap();
            assert_eq!(best, nearest);
        }
    }

    #[test]
    fn image_layout() {
        let rec = tone(60.0, 6000);
        let spec = spectrogram(&rec).unwrap();
        let track = AnnotationTrack::from_positive_ranges("t", 6000, &[(0, 3000)]).unwrap();
        let two = plot_image(&spec, &track, None, 5000);
        assert_eq!((two.width, two.height), (spec.n_frames(), 257 + BAND_HEIGHT));
        assert_eq!(two.pixels[0], POSITIVE);
        assert_eq!(two.pixels[two.width - 1], NEGATIVE);
        let mut report = DetectionReport::new("t", 2000);
        report.entries.push(DetectionEntry {
            window_start_sample: 0,
            label: Label::Positive,
            probability_positive: 0.9,
        });
        let three = plot_image(&spec, &track, Some(&report), 5000);
        assert_eq!(three.height, 257 + 2 * BAND_HEIGHT);
        assert_eq!(three.pixels[BAND_HEIGHT * three.width], POSITIVE);
        let ppm = three.to_ppm();
        let header = format!("P6\n{} {}\n255\n", three.width, three.height);
        assert_eq!(ppm.len(), header.len() + 3 * three.width * three.height);
    }

    #[test]
    fn csv_shape() {
        let spec = spectrogram(&tone(100.0, 1024)).unwrap();
        let csv = spec.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 258);
        assert_eq!(lines[1].split(',').count(), spec.n_frames() + 1);
        assert!(lines[2].starts_with("3.90625,"));
    }
}
