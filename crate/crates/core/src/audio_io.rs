//! Audio, annotation and detection-report file formats.
//!
//! * WAV: RIFF/WAVE, PCM (format tag 1), 16-bit, mono. A 16-bit value `v`
//!   decodes to `v / 32768`; encoding rounds `x * 32768` to the nearest
//!   integer and clamps to `[-32768, 32767]`.
//! * Annotations: UTF-8 CSV with header `start_sample,end_sample,label`,
//!   labels `positive`/`negative`, `#` comment lines ignored. Ranges not
//!   listed are negative.
//! * Detections: UTF-8 CSV with header
//!   `window_start_sample,window_start_seconds,label,probability_positive`.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("overlapping annotation intervals [{0}, {1}) and [{2}, {3})")]
    OverlapError(usize, usize, usize, usize),
    #[error("annotation interval [{start}, {end}) out of range for {n_samples} samples")]
    RangeError {
        start: usize,
        end: usize,
        n_samples: usize,
    },
    #[error("parse error on line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AudioIoError + '_ {
    move |source| AudioIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Binary window/sample label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }

    /// Class index used by the network (0 = negative, 1 = positive).
    pub fn class_index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_class_index(idx: usize) -> Self {
        if idx == 1 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// A mono recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl Recording {
    pub fn new(
        id: impl Into<String>,
        sample_rate: u32,
        samples: Vec<f64>,
    ) -> Result<Self, AudioIoError> {
        if sample_rate == 0 {
            return Err(AudioIoError::InvalidRecording("sample rate is zero".into()));
        }
        if samples.is_empty() {
            return Err(AudioIoError::InvalidRecording("no samples".into()));
        }
        Ok(Self {
            id: id.into(),
            sample_rate,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

/// Decodes a RIFF/WAVE PCM 16-bit mono byte stream.
pub fn decode_wav(id: &str, bytes: &[u8]) -> Result<Recording, AudioIoError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioIoError::UnsupportedFormat("not a RIFF/WAVE file".into()));
    }
    let riff_size = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if riff_size + 8 > bytes.len() {
        return Err(AudioIoError::CorruptHeader(format!(
            "RIFF size {riff_size} exceeds file length {}",
            bytes.len()
        )));
    }
    let body = &bytes[12..riff_size + 8];

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 0usize;
    while pos + 8 <= body.len() {
        let tag = &body[pos..pos + 4];
        let size = u32::from_le_bytes(body[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(size)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| {
                AudioIoError::CorruptHeader(format!(
                    "chunk `{}` of size {size} overruns the file",
                    String::from_utf8_lossy(tag)
                ))
            })?;
        let chunk = &body[start..end];
        match tag {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioIoError::CorruptHeader(format!(
                        "fmt chunk too short ({size} bytes)"
                    )));
                }
                let format_tag = u16::from_le_bytes([chunk[0], chunk[1]]);
                let channels = u16::from_le_bytes([chunk[2], chunk[3]]);
                let rate = u32::from_le_bytes(chunk[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes([chunk[14], chunk[15]]);
                fmt = Some((format_tag, channels, rate, bits));
            }
            b"data" => data = Some(chunk),
            _ => {}
        }
        // chunks are word aligned
        pos = end + (size & 1);
    }

    let (format_tag, channels, rate, bits) =
        fmt.ok_or_else(|| AudioIoError::CorruptHeader("missing fmt chunk".into()))?;
    if format_tag != 1 {
        return Err(AudioIoError::UnsupportedFormat(format!(
            "audio format {format_tag} (only PCM = 1 is supported)"
        )));
    }
    if channels != 1 {
        return Err(AudioIoError::UnsupportedFormat(format!(
            "{channels} channels (only mono is supported)"
        )));
    }
    if bits != 16 {
        return Err(AudioIoError::UnsupportedFormat(format!(
            "{bits} bits per sample (only 16 is supported)"
        )));
    }
    let data = data.ok_or_else(|| AudioIoError::CorruptHeader("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(AudioIoError::CorruptHeader(format!(
            "data chunk length {} is not a multiple of the frame size",
            data.len()
        )));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Recording::new(id, rate, samples).map_err(|e| AudioIoError::CorruptHeader(e.to_string()))
}

/// Reads a mono 16-bit PCM WAV file; the recording id is the file stem.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Recording, AudioIoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_wav(&id, &bytes)
}

/// Quantizes an amplitude to a 16-bit PCM value.
pub fn quantize_sample(x: f64) -> i16 {
    let v = (x * 32768.0).round();
    if v.is_nan() {
        0
    } else {
        v.clamp(-32768.0, 32767.0) as i16
    }
}

pub fn encode_wav(recording: &Recording) -> Vec<u8> {
    let data_len = recording.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&recording.sample_rate.to_le_bytes());
    out.extend_from_slice(&(recording.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &x in &recording.samples {
        out.extend_from_slice(&quantize_sample(x).to_le_bytes());
    }
    out
}

/// Writes a mono 16-bit PCM WAV file. Out-of-range amplitudes are clamped.
pub fn write_wav(recording: &Recording, path: impl AsRef<Path>) -> Result<(), AudioIoError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(recording)).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Annotations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
    pub label: Label,
}

/// Per-sample labels stored as a sorted partition of `[0, n_samples)`.
///
/// Adjacent intervals always carry different labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationTrack {
    pub recording_id: String,
    intervals: Vec<Interval>,
}

impl AnnotationTrack {
    /// Builds a track from (possibly unsorted) labelled intervals, filling
    /// gaps with negative labels.
    pub fn from_intervals(
        recording_id: impl Into<String>,
        n_samples: usize,
        mut rows: Vec<Interval>,
    ) -> Result<Self, AudioIoError> {
        rows.sort_by_key(|iv| (iv.start, iv.end));
        for iv in &rows {
            if iv.start >= iv.end {
                return Err(AudioIoError::RangeError {
                    start: iv.start,
                    end: iv.end,
                    n_samples,
                });
            }
            if iv.end > n_samples {
                return Err(AudioIoError::RangeError {
                    start: iv.start,
                    end: iv.end,
                    n_samples,
                });
            }
        }
        for pair in rows.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(AudioIoError::OverlapError(
                    pair[0].start,
                    pair[0].end,
                    pair[1].start,
                    pair[1].end,
                ));
            }
        }

        let mut intervals: Vec<Interval> = Vec::with_capacity(rows.len() * 2 + 1);
        let push = |iv: Interval, out: &mut Vec<Interval>| match out.last_mut() {
            Some(last) if last.label == iv.label && last.end == iv.start => last.end = iv.end,
            _ => out.push(iv),
        };
        let mut cursor = 0;
        for iv in rows {
            if iv.start > cursor {
                push(
                    Interval {
                        start: cursor,
                        end: iv.start,
                        label: Label::Negative,
                    },
                    &mut intervals,
                );
            }
            push(iv, &mut intervals);
            cursor = iv.end;
        }
        if cursor < n_samples {
            push(
                Interval {
                    start: cursor,
                    end: n_samples,
                    label: Label::Negative,
                },
                &mut intervals,
            );
        }
        Ok(Self {
            recording_id: recording_id.into(),
            intervals,
        })
    }

    pub fn from_positive_ranges(
        recording_id: impl Into<String>,
        n_samples: usize,
        ranges: &[(usize, usize)],
    ) -> Result<Self, AudioIoError> {
        let rows = ranges
            .iter()
            .map(|&(start, end)| Interval {
                start,
                end,
                label: Label::Positive,
            })
            .collect();
        Self::from_intervals(recording_id, n_samples, rows)
    }

    pub fn all_negative(recording_id: impl Into<String>, n_samples: usize) -> Self {
        Self::from_intervals(recording_id, n_samples, Vec::new()).expect("empty track is valid")
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn n_samples(&self) -> usize {
        self.intervals.last().map_or(0, |iv| iv.end)
    }

    pub fn positive_ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.intervals
            .iter()
            .filter(|iv| iv.label.is_positive())
            .map(|iv| (iv.start, iv.end))
    }

    pub fn positive_sample_count(&self) -> usize {
        self.positive_ranges().map(|(s, e)| e - s).sum()
    }

    fn interval_index(&self, sample: usize) -> Option<usize> {
        if sample >= self.n_samples() {
            return None;
        }
        Some(self.intervals.partition_point(|iv| iv.end <= sample))
    }

    pub fn label_at(&self, sample: usize) -> Option<Label> {
        self.interval_index(sample).map(|i| self.intervals[i].label)
    }

    /// Whether every sample in `[start, end)` is positive; `None` when the
    /// range is empty or leaves the track.
    pub fn all_positive(&self, start: usize, end: usize) -> Option<bool> {
        if start >= end || end > self.n_samples() {
            return None;
        }
        let i = self.interval_index(start)?;
        let iv = self.intervals[i];
        // adjacent intervals differ in label, so one interval must cover the range
        Some(iv.label.is_positive() && end <= iv.end)
    }
}

fn parse_usize(field: Option<&str>, line: usize, name: &str) -> Result<usize, AudioIoError> {
    let raw = field.ok_or_else(|| AudioIoError::ParseError {
        line,
        msg: format!("missing `{name}`"),
    })?;
    raw.trim().parse().map_err(|_| AudioIoError::ParseError {
        line,
        msg: format!("`{}` is not a valid {name}", raw.trim()),
    })
}

/// Parses annotation CSV text.
pub fn parse_annotations(
    recording_id: &str,
    text: &str,
    n_samples: usize,
) -> Result<AnnotationTrack, AudioIoError> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != ["start_sample", "end_sample", "label"] {
                return Err(AudioIoError::ParseError {
                    line: line_no,
                    msg: format!("expected header `start_sample,end_sample,label`, got `{line}`"),
                });
            }
            saw_header = true;
            continue;
        }
        let mut fields = line.split(',');
        let start = parse_usize(fields.next(), line_no, "start_sample")?;
        let end = parse_usize(fields.next(), line_no, "end_sample")?;
        let label: Label = fields
            .next()
            .ok_or_else(|| AudioIoError::ParseError {
                line: line_no,
                msg: "missing `label`".into(),
            })?
            .parse()
            .map_err(|msg| AudioIoError::ParseError { line: line_no, msg })?;
        if fields.next().is_some() {
            return Err(AudioIoError::ParseError {
                line: line_no,
                msg: "too many columns".into(),
            });
        }
        if start >= end || end > n_samples {
            return Err(AudioIoError::RangeError {
                start,
                end,
                n_samples,
            });
        }
        rows.push(Interval { start, end, label });
    }
    if !saw_header {
        return Err(AudioIoError::ParseError {
            line: 1,
            msg: "missing header".into(),
        });
    }
    AnnotationTrack::from_intervals(recording_id, n_samples, rows)
}

/// Reads an annotation CSV; the recording id is the file stem.
pub fn read_annotations(
    path: impl AsRef<Path>,
    n_samples: usize,
) -> Result<AnnotationTrack, AudioIoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_annotations(&id, &text, n_samples)
}

pub fn format_annotations(track: &AnnotationTrack) -> String {
    let mut out = String::from("start_sample,end_sample,label\n");
    for iv in track.intervals() {
        out.push_str(&format!("{},{},{}\n", iv.start, iv.end, iv.label));
    }
    out
}

pub fn write_annotations(
    track: &AnnotationTrack,
    path: impl AsRef<Path>,
) -> Result<(), AudioIoError> {
    let path = path.as_ref();
    fs::write(path, format_annotations(track)).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEntry {
    pub window_start_sample: usize,
    pub label: Label,
    pub probability_positive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub recording_id: String,
    pub sample_rate: u32,
    pub entries: Vec<DetectionEntry>,
}

impl DetectionReport {
    pub fn new(recording_id: impl Into<String>, sample_rate: u32) -> Self {
        Self {
            recording_id: recording_id.into(),
            sample_rate,
            entries: Vec::new(),
        }
    }

    pub fn sorted_entries(&self) -> Vec<DetectionEntry> {
        let mut entries = self.entries.clone();
        entries.sort_by_key(|e| e.window_start_sample);
        entries
    }
}

pub const DETECTIONS_HEADER: &str =
    "window_start_sample,window_start_seconds,label,probability_positive";

pub fn format_detections(report: &DetectionReport) -> String {
    let mut out = String::from(DETECTIONS_HEADER);
    out.push('\n');
    for e in report.sorted_entries() {
        let seconds = e.window_start_sample as f64 / report.sample_rate as f64;
        out.push_str(&format!(
            "{},{:.3},{},{}\n",
            e.window_start_sample, seconds, e.label, e.probability_positive
        ));
    }
    out
}

pub fn write_detections(
    report: &DetectionReport,
    path: impl AsRef<Path>,
) -> Result<(), AudioIoError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(format_detections(report).as_bytes())
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

pub fn parse_detections(
    recording_id: &str,
    sample_rate: u32,
    text: &str,
) -> Result<DetectionReport, AudioIoError> {
    let mut report = DetectionReport::new(recording_id, sample_rate);
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != DETECTIONS_HEADER {
                return Err(AudioIoError::ParseError {
                    line: line_no,
                    msg: "unexpected detections header".into(),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(AudioIoError::ParseError {
                line: line_no,
                msg: format!("expected 4 columns, got {}", fields.len()),
            });
        }
        let window_start_sample = parse_usize(Some(fields[0]), line_no, "window_start_sample")?;
        let label: Label = fields[2]
            .parse()
            .map_err(|msg| AudioIoError::ParseError { line: line_no, msg })?;
        let probability_positive: f64 =
            fields[3].trim().parse().map_err(|_| AudioIoError::ParseError {
                line: line_no,
                msg: format!("`{}` is not a probability", fields[3]),
            })?;
        if !(0.0..=1.0).contains(&probability_positive) {
            return Err(AudioIoError::ParseError {
                line: line_no,
                msg: format!("probability {probability_positive} outside [0, 1]"),
            });
        }
        report.entries.push(DetectionEntry {
            window_start_sample,
            label,
            probability_positive,
        });
    }
    Ok(report)
}

pub fn read_detections(
    path: impl AsRef<Path>,
    sample_rate: u32,
) -> Result<DetectionReport, AudioIoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_detections(&id, sample_rate, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(samples: Vec<f64>) -> Recording {
        Recording::new("t", 2000, samples).unwrap()
    }

    #[test]
    fn zero_sample_round_trip() {
        let bytes = encode_wav(&rec(vec![0.0]));
        assert_eq!(&bytes[44..], &[0, 0]);
        assert_eq!(decode_wav("t", &bytes).unwrap().samples, vec![0.0]);
    }

    #[test]
    fn decodes_most_negative_value() {
        let mut bytes = encode_wav(&rec(vec![0.0]));
        bytes[44..46].copy_from_slice(&(-32768i16).to_le_bytes());
        assert_eq!(decode_wav("t", &bytes).unwrap().samples, vec![-1.0]);
    }

    #[test]
    fn half_encodes_to_16384() {
        let bytes = encode_wav(&rec(vec![0.5]));
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 16384);
    }

    #[test]
    fn out_of_range_is_clamped() {
        let bytes = encode_wav(&rec(vec![1.5, -2.0]));
        let back = decode_wav("t", &bytes).unwrap();
        assert_eq!(back.samples, vec![32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn rejects_stereo_and_float() {
        let mut bytes = encode_wav(&rec(vec![0.0, 0.1]));
        bytes[22] = 2;
        assert!(matches!(
            decode_wav("t", &bytes),
            Err(AudioIoError::UnsupportedFormat(_))
        ));
        let mut bytes = encode_wav(&rec(vec![0.0, 0.1]));
        bytes[20] = 3;
        assert!(matches!(
            decode_wav("t", &bytes),
            Err(AudioIoError::UnsupportedFormat(_))
        ));
        let mut bytes = encode_wav(&rec(vec![0.0, 0.1]));
        bytes[34] = 24;
        assert!(matches!(
            decode_wav("t", &bytes),
            Err(AudioIoError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn rejects_overrunning_chunk() {
        let mut bytes = encode_wav(&rec(vec![0.0, 0.1]));
        bytes[40..44].copy_from_slice(&1000u32.to_le_bytes());
        assert!(matches!(
            decode_wav("t", &bytes),
            Err(AudioIoError::CorruptHeader(_))
        ));
        let mut bytes = encode_wav(&rec(vec![0.0, 0.1]));
        bytes[4..8].copy_from_slice(&9999u32.to_le_bytes());
        assert!(matches!(
            decode_wav("t", &bytes),
            Err(AudioIoError::CorruptHeader(_))
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let bytes = encode_wav(&rec(vec![0.25, -0.25]));
        let mut patched = Vec::new();
        patched.extend_from_slice(&bytes[..12]);
        patched.extend_from_slice(b"LIST");
        patched.extend_from_slice(&3u32.to_le_bytes());
        patched.extend_from_slice(&[1, 2, 3, 0]);
        patched.extend_from_slice(&bytes[12..]);
        let size = (patched.len() - 8) as u32;
        patched[4..8].copy_from_slice(&size.to_le_bytes());
        assert_eq!(decode_wav("t", &patched).unwrap().samples, vec![0.25, -0.25]);
    }

    #[test]
    fn empty_annotations_are_all_negative() {
        let track = parse_annotations("r", "start_sample,end_sample,label\n", 100).unwrap();
        assert_eq!(
            track.intervals(),
            &[Interval {
                start: 0,
                end: 100,
                label: Label::Negative
            }]
        );
    }

    #[test]
    fn annotation_gaps_filled() {
        let text = "# expert labels\nstart_sample,end_sample,label\n10,20,positive\n";
        let track = parse_annotations("r", text, 30).unwrap();
        let got: Vec<_> = track
            .intervals()
            .iter()
            .map(|iv| (iv.start, iv.end, iv.label))
            .collect();
        assert_eq!(
            got,
            vec![
                (0, 10, Label::Negative),
                (10, 20, Label::Positive),
                (20, 30, Label::Negative)
            ]
        );
    }

    #[test]
    fn annotation_errors() {
        let overlap = "start_sample,end_sample,label\n0,10,positive\n5,15,positive\n";
        assert!(matches!(
            parse_annotations("r", overlap, 30),
            Err(AudioIoError::OverlapError(..))
        ));
        let range = "start_sample,end_sample,label\n0,40,positive\n";
        assert!(matches!(
            parse_annotations("r", range, 30),
            Err(AudioIoError::RangeError { .. })
        ));
        let bad = "start_sample,end_sample,label\n0,x,positive\n";
        assert!(matches!(
            parse_annotations("r", bad, 30),
            Err(AudioIoError::ParseError { line: 2, .. })
        ));
        let bad_label = "start_sample,end_sample,label\n0,3,maybe\n";
        assert!(matches!(
            parse_annotations("r", bad_label, 30),
            Err(AudioIoError::ParseError { .. })
        ));
    }

    #[test]
    fn all_positive_boundaries() {
        let track = AnnotationTrack::from_positive_ranges("r", 100, &[(10, 20)]).unwrap();
        assert_eq!(track.all_positive(10, 20), Some(true));
        assert_eq!(track.all_positive(9, 20), Some(false));
        assert_eq!(track.all_positive(10, 21), Some(false));
        assert_eq!(track.all_positive(90, 101), None);
    }

    #[test]
    fn detection_rows() {
        let mut report = DetectionReport::new("r", 2000);
        report.entries.push(DetectionEntry {
            window_start_sample: 3000,
            label: Label::Positive,
            probability_positive: 0.97,
        });
        report.entries.push(DetectionEntry {
            window_start_sample: 0,
            label: Label::Negative,
            probability_positive: 0.1,
        });
        let text = format_detections(&report);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], DETECTIONS_HEADER);
        assert_eq!(lines[1], "0,0.000,negative,0.1");
        assert_eq!(lines[2], "3000,1.500,positive,0.97");
        assert_eq!(
            format_detections(&DetectionReport::new("r", 2000)),
            format!("{DETECTIONS_HEADER}\n")
        );
    }

    proptest! {
        #[test]
        fn wav_round_trip_within_one_lsb(samples in prop::collection::vec(-1.0f64..1.0, 1..600)) {
            let r = rec(samples.clone());
            let back = decode_wav("t", &encode_wav(&r)).unwrap();
            for (a, b) in samples.iter().zip(&back.samples) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
            // quantized data is a fixed point
            prop_assert_eq!(encode_wav(&back), encode_wav(&r));
        }

        #[test]
        fn annotations_partition(
            n in 1usize..2000,
            cuts in prop::collection::vec((0usize..2000, 1usize..200, any::<bool>()), 0..12),
        ) {
            let mut rows: Vec<Interval> = Vec::new();
            for (s, len, pos) in cuts {
                let start = s % n;
                let end = (start + len).min(n);
                if start >= end || rows.iter().any(|r| start < r.end && r.start < end) {
                    continue;
                }
                let label = if pos { Label::Positive } else { Label::Negative };
                rows.push(Interval { start, end, label });
            }
            let track = AnnotationTrack::from_intervals("r", n, rows).unwrap();
            let ivs = track.intervals();
            prop_assert_eq!(ivs.first().unwrap().start, 0);
            prop_assert_eq!(ivs.last().unwrap().end, n);
            prop_assert_eq!(ivs.iter().map(|iv| iv.end - iv.start).sum::<usize>(), n);
            for w in ivs.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
            let reparsed = parse_annotations("r", &format_annotations(&track), n).unwrap();
            prop_assert_eq!(reparsed, track);
        }

        #[test]
        fn detections_round_trip(
            rows in prop::collection::vec((0usize..1_000_000, any::<bool>(), 0.0f64..=1.0), 0..40)
        ) {
            let mut report = DetectionReport::new("r", 2000);
            for (start, pos, p) in rows {
                let label = if pos { Label::Positive } else { Label::Negative };
                report.entries.push(DetectionEntry { window_start_sample: start, label, probability_positive: p });
            }
            let parsed = parse_detections("r", 2000, &format_detections(&report)).unwrap();
            prop_assert_eq!(parsed.entries, report.sorted_entries());
        }
    }
}
