//! `whalewatch` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 data, 4 training,
//! 5 model format. Diagnostics and the effective configuration go to stderr;
//! results go to files or stdout.

pub mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::audio_io::{self, AnnotationTrack, Recording};
use crate::config::{ConfigError, PipelineConfig};
use crate::detector::{self, Dataset, DetectorError, MetricsSummary, Model, WindowClassifier};
use crate::dsp::{self, LabelSource};
use crate::labelprop;
use crate::nn::{self, NnError};
use crate::synth::{self, SynthRecording};

pub use plot::{plot_image, spectrogram, Image, Spectrogram, STFT_HOP, STFT_WINDOW};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;
pub const EXIT_MODEL: i32 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: msg.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<audio_io::AudioIoError> for CliError {
    fn from(e: audio_io::AudioIoError) -> Self {
        Self::data(e.to_string())
    }
}

fn model_error(path: &Path, e: NnError) -> CliError {
    let code = match e {
        NnError::Io(_) => EXIT_DATA,
        _ => EXIT_MODEL,
    };
    CliError {
        code,
        message: format!("{}: {e}", path.display()),
    }
}

fn detector_error(e: DetectorError) -> CliError {
    match e {
        DetectorError::Nn(e) => CliError {
            code: EXIT_TRAINING,
            message: e.to_string(),
        },
        other => CliError::data(other.to_string()),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "whalewatch", version, about = "Blue whale call detection in underwater audio")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Condition a recording into normalized windows.
    Preprocess(PreprocessArgs),
    /// Report label propagation for one annotated recording.
    Propagate(PropagateArgs),
    /// Train a model on a directory of annotated recordings.
    Train(TrainArgs),
    /// Classify every window of a recording.
    Detect(DetectArgs),
    /// Score a model on a directory of annotated recordings.
    Evaluate(EvaluateArgs),
    /// Spectrogram CSV and label/spectrogram image.
    Plot(PlotArgs),
}

#[derive(Debug, Args, Clone)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory; recordings go to `train/` and `test/` inside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Training recordings.
    #[arg(long, default_value_t = 28)]
    pub recordings: usize,
    /// Held-out test recordings.
    #[arg(long, default_value_t = 6)]
    pub test_recordings: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub wav: PathBuf,
    /// Annotation CSV; without it every window is labelled negative.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Window CSV: metadata columns followed by the conditioned samples.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct PropagateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory of `name.wav` files with `name.csv` annotations.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Per-epoch JSON-lines history; defaults to `<model>.history.jsonl`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone)]
pub struct DetectArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON-lines metrics summary.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional directory for per-recording detection CSVs.
    #[arg(long)]
    pub detections: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct PlotArgs {
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Output prefix; writes `<out>.csv` and `<out>.ppm`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Loads the config file (if any), then applies `--set` overrides and the
/// command's own flags, validates, and echoes the result to stderr.
pub fn effective_config(args: &ConfigArgs, flags: &[(&str, String)]) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v)?;
    }
    for (k, v) in flags {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    eprint!("# effective configuration\n{}", cfg.to_text());
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn write_synth(dir: &Path, rec: &SynthRecording) -> Result<(), CliError> {
    let id = &rec.recording.id;
    audio_io::write_wav(&rec.recording, dir.join(format!("{id}.wav")))?;
    audio_io::write_annotations(&rec.track, dir.join(format!("{id}.csv")))?;
    write_file(&dir.join(format!("{id}.truth.csv")), synth::format_ground_truth(&rec.truth))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    if args.recordings == 0 {
        return Err(CliError::usage("--recordings must be at least 1"));
    }
    let mut flags = Vec::new();
    if let Some(s) = args.seed {
        flags.push(("synth.seed", s.to_string()));
    }
    if let Some(d) = args.duration {
        flags.push(("synth.duration_seconds", d.to_string()));
    }
    let cfg = effective_config(&args.config, &flags)?;
    let sc = cfg.synth_config();
    let synth_err = |e: synth::SynthError| CliError::data(e.to_string());
    for (sub, count, stream) in [("train", args.recordings, 0u64), ("test", args.test_recordings, 1 << 32)] {
        if count == 0 {
            continue;
        }
        let dir = args.out.join(sub);
        create_dir(&dir)?;
        for rec in synth::generate_corpus(&sc, sub, count, stream).map_err(synth_err)? {
            write_synth(&dir, &rec)?;
        }
        eprintln!("wrote {count} recordings to {}", dir.display());
    }
    Ok(())
}

/// Every `name.wav` in `dir` (sorted by name) paired with `name.csv`.
pub fn load_labelled_dir(dir: &Path) -> Result<Vec<(Recording, AnnotationTrack)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut wavs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(CliError::data(format!("{}: no .wav files", dir.display())));
    }
    wavs.iter()
        .map(|wav| {
            let csv = wav.with_extension("csv");
            if !csv.is_file() {
                return Err(CliError::data(format!(
                    "{}: missing annotations {}",
                    wav.display(),
                    csv.display()
                )));
            }
            let rec = audio_io::read_wav(wav)?;
            let track = audio_io::read_annotations(&csv, rec.len())?;
            Ok((rec, track))
        })
        .collect()
}

fn read_track(path: Option<&Path>, rec: &Recording) -> Result<AnnotationTrack, CliError> {
    match path {
        Some(p) => Ok(audio_io::read_annotations(p, rec.len())?),
        None => Ok(AnnotationTrack::all_negative(rec.id.clone(), rec.len())),
    }
}

pub const WINDOWS_HEADER_PREFIX: &str = "recording_id,window_start_sample,label,label_source,degenerate";

pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<(), CliError> {
    let cfg = effective_config(&args.config, &[])?;
    let rec = audio_io::read_wav(&args.wav)?;
    let track = read_track(args.annotations.as_deref(), &rec)?;
    let windows = dsp::preprocess_recording(&rec, &track, &cfg.preprocess).map_err(|e| CliError::data(e.to_string()))?;
    let w = cfg.preprocess.window_len().map_err(|e| CliError::usage(e.to_string()))?;
    let mut out = String::from(WINDOWS_HEADER_PREFIX);
    for i in 0..w {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for win in &windows {
        out.push_str(&format!(
            "{},{},{},{},{}",
            win.recording_id,
            win.start_sample,
            win.label,
            win.label_source.as_str(),
            u8::from(win.degenerate)
        ));
        for v in &win.samples {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    write_file(&args.out, out)?;
    eprintln!("{} windows written to {}", windows.len(), args.out.display());
    Ok(())
}

pub const PROPAGATION_HEADER: &str = "window_start_sample,expert_label,label,label_source,best_similarity";

pub fn cmd_propagate(args: &PropagateArgs) -> Result<(), CliError> {
    let flags: Vec<(&str, String)> = args
        .threshold
        .map(|t| ("labelprop.threshold", t.to_string()))
        .into_iter()
        .collect();
    let cfg = effective_config(&args.config, &flags)?;
    let rec = audio_io::read_wav(&args.wav)?;
    let track = audio_io::read_annotations(&args.annotations, rec.len())?;
    let windows = dsp::preprocess_recording(&rec, &track, &cfg.preprocess).map_err(|e| CliError::data(e.to_string()))?;
    let flips = labelprop::scan(&windows, cfg.propagation.threshold).map_err(|e| CliError::data(e.to_string()))?;
    let propagated = labelprop::propagate(&windows, &cfg.propagation).map_err(|e| CliError::data(e.to_string()))?;
    let mut out = format!("{PROPAGATION_HEADER}\n");
    for (i, (before, after)) in windows.iter().zip(&propagated).enumerate() {
        let best = flips
            .iter()
            .find(|f| f.index == i)
            .and_then(|f| f.best_similarity)
            .map(|s| s.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{best}\n",
            before.start_sample,
            before.label,
            after.label,
            after.label_source.as_str()
        ));
    }
    write_file(&args.out, out)?;
    let flipped = propagated.iter().filter(|w| w.label_source == LabelSource::Propagated).count();
    eprintln!("{flipped} of {} windows relabelled positive", windows.len());
    Ok(())
}

fn history_path(args: &TrainArgs) -> PathBuf {
    args.history.clone().unwrap_or_else(|| {
        let mut p = args.model.clone().into_os_string();
        p.push(".history.jsonl");
        PathBuf::from(p)
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let mut flags = Vec::new();
    if let Some(e) = args.epochs {
        flags.push(("train.epochs", e.to_string()));
    }
    if let Some(s) = args.seed {
        flags.push(("train.seed", s.to_string()));
    }
    let cfg = effective_config(&args.config, &flags)?;
    let recordings = load_labelled_dir(&args.data)?;
    let dataset = detector::build_dataset(&recordings, &cfg.preprocess, &cfg.propagation, true).map_err(detector_error)?;
    let (train_set, val_set) =
        detector::split_train_val(&dataset, cfg.split.train_fraction, cfg.split.seed, cfg.split.mode)
            .map_err(detector_error)?;
    eprintln!(
        "{} windows ({} positive), {} for training, {} for validation",
        dataset.len(),
        dataset.positives(),
        train_set.len(),
        val_set.len()
    );
    if train_set.is_empty() {
        return Err(CliError::data("training split is empty"));
    }
    let (params, history) = nn::train(
        &train_set.training_set(),
        Some(&val_set.training_set()),
        &cfg.model,
        &cfg.train,
    )
    .map_err(|e| CliError {
        code: if matches!(e, NnError::EmptyDataset) {
            EXIT_DATA
        } else {
            EXIT_TRAINING
        },
        message: e.to_string(),
    })?;
    for w in &history.warnings {
        eprintln!("warning: {w}");
    }
    nn::save_model(&params, &cfg.model, &args.model).map_err(|e| model_error(&args.model, e))?;
    let lines: String = history
        .epochs
        .iter()
        .map(|e| serde_json::to_string(e).expect("plain struct serializes") + "\n")
        .collect();
    write_file(&history_path(args), lines)?;
    if let Some(v) = history.epochs.last().and_then(|e| e.validation.as_ref()) {
        println!("{}", serde_json::to_string(v).expect("plain struct serializes"));
    }
    Ok(())
}

fn load_classifier(path: &Path, cfg: &PipelineConfig) -> Result<Model, CliError> {
    let (params, config) = nn::load_model(path).map_err(|e| model_error(path, e))?;
    let w = cfg.preprocess.window_len().map_err(|e| CliError::usage(e.to_string()))?;
    if config.input_length != w {
        return Err(CliError::usage(format!(
            "model expects {} samples per window but the configuration yields {w}",
            config.input_length
        )));
    }
    Ok(Model { params, config })
}

pub fn cmd_detect(args: &DetectArgs) -> Result<(), CliError> {
    let cfg = effective_config(&args.config, &[])?;
    let model = load_classifier(&args.model, &cfg)?;
    let rec = audio_io::read_wav(&args.wav)?;
    let report = detector::detect_recording(&model, &rec, &cfg.preprocess).map_err(detector_error)?;
    audio_io::write_detections(&report, &args.out)?;
    let positives = report.entries.iter().filter(|e| e.label.is_positive()).count();
    eprintln!("{positives} of {} windows positive", report.entries.len());
    Ok(())
}

/// Test-protocol evaluation of any classifier on a labelled directory; labels
/// are never propagated.
pub fn evaluate_dir(
    classifier: &impl WindowClassifier,
    data: &Path,
    cfg: &PipelineConfig,
) -> Result<(Dataset, detector::Evaluation), CliError> {
    let recordings = load_labelled_dir(data)?;
    let dataset = detector::build_dataset(&recordings, &cfg.preprocess, &cfg.propagation, false).map_err(detector_error)?;
    assert!(!dataset.propagation_applied, "test data must keep expert labels");
    let eval = detector::evaluate(classifier, &dataset).map_err(detector_error)?;
    Ok((dataset, eval))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let cfg = effective_config(&args.config, &[])?;
    let model = load_classifier(&args.model, &cfg)?;
    let (_, eval) = evaluate_dir(&model, &args.data, &cfg)?;
    let line = MetricsSummary::new(&eval.confusion, &eval.metrics).to_json_line();
    write_file(&args.out, format!("{line}\n"))?;
    if let Some(dir) = &args.detections {
        create_dir(dir)?;
        for r in &eval.reports {
            audio_io::write_detections(r, dir.join(format!("{}.detections.csv", r.recording_id)))?;
        }
    }
    println!("{line}");
    Ok(())
}

pub fn cmd_plot(args: &PlotArgs) -> Result<(), CliError> {
    let rec = audio_io::read_wav(&args.wav)?;
    let track = audio_io::read_annotations(&args.annotations, rec.len())?;
    let detections = args
        .detections
        .as_ref()
        .map(|p| audio_io::read_detections(p, rec.sample_rate))
        .transpose()?;
    let spec = spectrogram(&rec).map_err(|e| CliError::data(e.to_string()))?;
    let mut csv_path = args.out.clone().into_os_string();
    csv_path.push(".csv");
    let mut ppm_path = args.out.clone().into_os_string();
    ppm_path.push(".ppm");
    write_file(Path::new(&csv_path), spec.to_csv())?;
    let window = dsp::WindowGeometry::default()
        .in_samples(rec.sample_rate)
        .map(|(w, _)| w)
        .unwrap_or(0);
    let image = plot_image(&spec, &track, detections.as_ref(), window);
    write_file(Path::new(&ppm_path), image.to_ppm())?;
    eprintln!(
        "{}x{} image with {} panels",
        image.width,
        image.height,
        if detections.is_some() { 3 } else { 2 }
    );
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Propagate(a) => cmd_propagate(a),
        Command::Train(a) => cmd_train(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
