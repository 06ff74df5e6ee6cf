//! Flat `key = value` configuration covering every pipeline stage.
//!
//! Lines are UTF-8, `#` starts a comment, blank lines are ignored and
//! unknown keys are errors. Lists are comma-separated. [`PipelineConfig::to_text`]
//! writes every key, so its output parses back to the same configuration.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::detector::SplitMode;
use crate::dsp::PreprocessConfig;
use crate::labelprop::PropagationConfig;
use crate::nn::{ModelConfig, TrainConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    /// Share of windows (or recordings) used for training.
    pub train_fraction: f64,
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            mode: SplitMode::Window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub propagation: PropagationConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub synth: SynthConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        msg: format!("`{value}`: {e}"),
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.preprocess;
        let m = &self.model;
        let t = &self.train;
        let s = &self.synth;
        let c = &s.call;
        vec![
            ("sample_rate", p.sample_rate.to_string()),
            ("window_seconds", p.geometry.window_seconds.to_string()),
            ("overlap_seconds", p.geometry.overlap_seconds.to_string()),
            ("denoise.alpha", p.denoise.alpha.to_string()),
            ("denoise.beta", p.denoise.beta.to_string()),
            ("denoise.epsilon", p.denoise.epsilon.to_string()),
            ("bandpass.low_hz", p.bandpass.low_hz.to_string()),
            ("bandpass.high_hz", p.bandpass.high_hz.to_string()),
            ("bandpass.order", p.bandpass.order.to_string()),
            ("labelprop.threshold", self.propagation.threshold.to_string()),
            ("labelprop.enabled", self.propagation.enabled.to_string()),
            ("nn.input_length", m.input_length.to_string()),
            ("nn.conv_channels", join(&m.conv_channels)),
            ("nn.kernel_size", m.kernel_size.to_string()),
            ("nn.padding_per_side", m.padding_per_side.to_string()),
            ("nn.pool_size", m.pool_size.to_string()),
            ("nn.conv_dropout", m.conv_dropout.to_string()),
            ("nn.dense_widths", join(&m.dense_widths)),
            ("nn.dense_dropout", m.dense_dropout.to_string()),
            ("nn.weight_decay", m.weight_decay.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.adam_beta1", t.adam_beta1.to_string()),
            ("train.adam_beta2", t.adam_beta2.to_string()),
            ("train.adam_epsilon", t.adam_epsilon.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.bn_momentum", t.bn_momentum.to_string()),
            ("detector.train_fraction", self.split.train_fraction.to_string()),
            ("detector.split_seed", self.split.seed.to_string()),
            ("detector.split_mode", self.split.mode.as_str().to_string()),
            ("synth.duration_seconds", s.duration_seconds.to_string()),
            ("synth.calls_min", s.calls_per_recording.min.to_string()),
            ("synth.calls_max", s.calls_per_recording.max.to_string()),
            ("synth.units_min", c.n_units.min.to_string()),
            ("synth.units_max", c.n_units.max.to_string()),
            ("synth.unit_seconds_min", c.unit_duration_seconds.min.to_string()),
            ("synth.unit_seconds_max", c.unit_duration_seconds.max.to_string()),
            ("synth.gap_seconds_min", c.gap_seconds.min.to_string()),
            ("synth.gap_seconds_max", c.gap_seconds.max.to_string()),
            ("synth.fundamental_hz_min", c.fundamental_hz.min.to_string()),
            ("synth.fundamental_hz_max", c.fundamental_hz.max.to_string()),
            ("synth.sweep_hz_per_s_min", c.sweep_hz_per_s.min.to_string()),
            ("synth.sweep_hz_per_s_max", c.sweep_hz_per_s.max.to_string()),
            ("synth.amplitude_min", c.amplitude.min.to_string()),
            ("synth.amplitude_max", c.amplitude.max.to_string()),
            ("synth.white_level", s.noise.white_level.to_string()),
            ("synth.rumble_level", s.noise.rumble_level.to_string()),
            ("synth.partial_call_probability", s.partial_call_probability.to_string()),
            ("synth.min_separation_seconds", s.min_separation_seconds.to_string()),
            ("synth.seed", s.seed.to_string()),
        ]
    }

    /// Assigns one key. Values are checked by [`PipelineConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let p = &mut self.preprocess;
        let m = &mut self.model;
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "sample_rate" => p.sample_rate = parse(key, v)?,
            "window_seconds" => p.geometry.window_seconds = parse(key, v)?,
            "overlap_seconds" => p.geometry.overlap_seconds = parse(key, v)?,
            "denoise.alpha" => p.denoise.alpha = parse(key, v)?,
            "denoise.beta" => p.denoise.beta = parse(key, v)?,
            "denoise.epsilon" => p.denoise.epsilon = parse(key, v)?,
            "bandpass.low_hz" => p.bandpass.low_hz = parse(key, v)?,
            "bandpass.high_hz" => p.bandpass.high_hz = parse(key, v)?,
            "bandpass.order" => p.bandpass.order = parse(key, v)?,
            "labelprop.threshold" => self.propagation.threshold = parse(key, v)?,
            "labelprop.enabled" => self.propagation.enabled = parse(key, v)?,
            "nn.input_length" => m.input_length = parse(key, v)?,
            "nn.conv_channels" => m.conv_channels = parse_list(key, v)?,
            "nn.kernel_size" => m.kernel_size = parse(key, v)?,
            "nn.padding_per_side" => m.padding_per_side = parse(key, v)?,
            "nn.pool_size" => m.pool_size = parse(key, v)?,
            "nn.conv_dropout" => m.conv_dropout = parse(key, v)?,
            "nn.dense_widths" => m.dense_widths = parse_list(key, v)?,
            "nn.dense_dropout" => m.dense_dropout = parse(key, v)?,
            "nn.weight_decay" => m.weight_decay = parse(key, v)?,
            "train.learning_rate" => t.learning_rate = parse(key, v)?,
            "train.adam_beta1" => t.adam_beta1 = parse(key, v)?,
            "train.adam_beta2" => t.adam_beta2 = parse(key, v)?,
            "train.adam_epsilon" => t.adam_epsilon = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "train.bn_momentum" => t.bn_momentum = parse(key, v)?,
            "detector.train_fraction" => self.split.train_fraction = parse(key, v)?,
            "detector.split_seed" => self.split.seed = parse(key, v)?,
            "detector.split_mode" => self.split.mode = parse(key, v)?,
            "synth.duration_seconds" => s.duration_seconds = parse(key, v)?,
            "synth.calls_min" => s.calls_per_recording.min = parse(key, v)?,
            "synth.calls_max" => s.calls_per_recording.max = parse(key, v)?,
            "synth.units_min" => s.call.n_units.min = parse(key, v)?,
            "synth.units_max" => s.call.n_units.max = parse(key, v)?,
            "synth.unit_seconds_min" => s.call.unit_duration_seconds.min = parse(key, v)?,
            "synth.unit_seconds_max" => s.call.unit_duration_seconds.max = parse(key, v)?,
            "synth.gap_seconds_min" => s.call.gap_seconds.min = parse(key, v)?,
            "synth.gap_seconds_max" => s.call.gap_seconds.max = parse(key, v)?,
            "synth.fundamental_hz_min" => s.call.fundamental_hz.min = parse(key, v)?,
            "synth.fundamental_hz_max" => s.call.fundamental_hz.max = parse(key, v)?,
            "synth.sweep_hz_per_s_min" => s.call.sweep_hz_per_s.min = parse(key, v)?,
            "synth.sweep_hz_per_s_max" => s.call.sweep_hz_per_s.max = parse(key, v)?,
            "synth.amplitude_min" => s.call.amplitude.min = parse(key, v)?,
            "synth.amplitude_max" => s.call.amplitude.max = parse(key, v)?,
            "synth.white_level" => s.noise.white_level = parse(key, v)?,
            "synth.rumble_level" => s.noise.rumble_level = parse(key, v)?,
            "synth.partial_call_probability" => s.partial_call_probability = parse(key, v)?,
            "synth.min_separation_seconds" => s.min_separation_seconds = parse(key, v)?,
            "synth.seed" => s.seed = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: i + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            self.set(key.trim(), value).map_err(|e| match e {
                ConfigError::UnknownKey(k) => ConfigError::Parse {
                    line: i + 1,
                    msg: format!("unknown key `{k}`"),
                },
                ConfigError::BadValue { key, msg } => ConfigError::Parse {
                    line: i + 1,
                    msg: format!("bad value for `{key}`: {msg}"),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Defaults overridden by `text`, then validated.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Validates every stage and the couplings between them: the network
    /// input equals the window length, synthesis shares the sample rate and
    /// window grid, and the network has the reference depth of nine conv and
    /// five dense blocks.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn Display| ConfigError::Invalid(e.to_string());
        self.preprocess.validate().map_err(|e| invalid(&e))?;
        self.propagation.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        if !self.model.is_reference_depth() {
            return Err(ConfigError::Invalid(format!(
                "network must have 9 conv and 5 dense blocks, got {} and {}",
                self.model.conv_channels.len(),
                self.model.dense_widths.len()
            )));
        }
        let window = self.preprocess.window_len().map_err(|e| invalid(&e))?;
        if self.model.input_length != window {
            return Err(ConfigError::Invalid(format!(
                "nn.input_length is {} but windows hold {window} samples",
                self.model.input_length
            )));
        }
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "detector.train_fraction must lie strictly between 0 and 1, got {f}"
            )));
        }
        self.synth_config().validate().map_err(|e| invalid(&e))
    }

    /// Synthesis settings aligned with the preprocessing sample rate and grid.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            sample_rate: self.preprocess.sample_rate,
            geometry: self.preprocess.geometry,
            ..self.synth
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.model.input_length, 5000);
        assert_eq!(cfg.preprocess.denoise.beta, 50.0);
        assert_eq!(cfg.propagation.threshold, 0.95);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg = PipelineConfig::parse(
            "# tuned\n\ntrain.epochs = 3   # short\nlabelprop.enabled=false\nnn.dense_widths = 80, 40, 20, 10, 8\n",
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert!(!cfg.propagation.enabled);
        assert_eq!(cfg.model.dense_widths, vec![80, 40, 20, 10, 8]);
        let mut non_default = cfg.clone();
        non_default.split.mode = SplitMode::Recording;
        assert_eq!(PipelineConfig::parse(&non_default.to_text()).unwrap(), non_default);
    }

    #[test]
    fn errors_name_the_line() {
        assert!(matches!(
            PipelineConfig::parse("train.epochs = 3\nbogus = 1\n"),
            Err(ConfigError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            PipelineConfig::parse("train.epochs = many\n"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            PipelineConfig::parse("no equals sign\n"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn couplings_are_checked() {
        for text in [
            "nn.input_length = 4000",
            "nn.conv_channels = 4,8",
            "detector.train_fraction = 1",
            "bandpass.high_hz = 1500",
            "labelprop.threshold = 0",
        ] {
            assert!(matches!(PipelineConfig::parse(text), Err(ConfigError::Invalid(_))), "{text}");
        }
    }
}
