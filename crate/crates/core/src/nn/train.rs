use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::adam::{adam_step, AdamState};
use super::config::{ModelConfig, TrainConfig};
use super::loss::{softmax, softmax_cross_entropy};
use super::model::{backward, forward, forward_one, update_running_stats, Batch, Dropout, Mode};
use super::params::ModelParams;
use super::NnError;
use crate::audio_io::Label;
use crate::detector::metrics::{compute_metrics, ConfusionMatrix};
use crate::par;

/// Borrowed inputs with class labels.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
}

impl<'a> TrainingSet<'a> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRecord {
    pub loss: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's mini-batches.
    pub train_loss: f64,
    /// Training-mode accuracy accumulated during the epoch.
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationRecord>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

/// Evaluation-mode loss and confusion counts over a labelled set.
pub fn evaluate_set(
    params: &ModelParams,
    config: &ModelConfig,
    set: &TrainingSet<'_>,
) -> Result<ValidationRecord, NnError> {
    if set.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let logits = par::map(&set.inputs, |x| forward_one(params, config, x))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let (loss, _) = softmax_cross_entropy(&logits, &set.labels);
    let mut cm = ConfusionMatrix::default();
    for (z, &y) in logits.iter().zip(&set.labels) {
        cm.record(y == 1, softmax(z)[1] >= 0.5);
    }
    let m = compute_metrics(&cm).map_err(|_| NnError::EmptyDataset)?;
    Ok(ValidationRecord {
        loss,
        accuracy: m.accuracy,
        recall: m.recall,
        precision: m.precision,
        tp: cm.tp,
        tn: cm.tn,
        fp: cm.fp,
        fn_: cm.fn_,
    })
}

/// Mini-batch Adam training from a seeded He-uniform initialization.
///
/// The seed determines initialization, shuffling and dropout masks; results
/// are bit-identical across runs and across sequential/parallel builds.
pub fn train(
    train_set: &TrainingSet<'_>,
    validation: Option<&TrainingSet<'_>>,
    config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory), NnError> {
    config.validate()?;
    train_config.validate()?;
    if train_set.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if train_set.inputs.len() != train_set.labels.len() {
        return Err(NnError::ShapeMismatch("inputs and labels differ in length".into()));
    }
    let mut history = TrainHistory::default();
    let pos = train_set.positives();
    if pos == 0 || pos == train_set.len() {
        history
            .warnings
            .push("training set holds a single class; validation metrics are degenerate".into());
    }

    let mut params = ModelParams::init(config, train_config.seed)?;
    let mut opt = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..train_config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;
        for chunk in order.chunks(train_config.batch_size) {
            let batch = Batch::new(
                chunk.iter().map(|&i| train_set.inputs[i]).collect(),
                chunk.iter().map(|&i| train_set.labels[i]).collect(),
            )?;
            let out = forward(&params, config, &batch, Mode::Train(Dropout::Sample(&mut rng)))?;
            let (loss, dlogits) = softmax_cross_entropy(&out.logits, &batch.labels);
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch });
            }
            correct += out
                .logits
                .iter()
                .zip(&batch.labels)
                .filter(|(z, &y)| usize::from(softmax(z)[1] >= 0.5) == y)
                .count();
            let cache = out.cache.expect("training pass keeps its cache");
            let grads = backward(&params, config, &cache, &dlogits)?;
            adam_step(&mut params, &grads, &mut opt, train_config, config)?;
            update_running_stats(&mut params, &cache, train_config.bn_momentum);
            loss_sum += loss;
            batches += 1;
        }
        if !params.is_finite() {
            return Err(NnError::Diverged { epoch });
        }
        let validation = match validation {
            Some(v) if !v.is_empty() => Some(evaluate_set(&params, config, v)?),
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / batches as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            validation,
        });
    }
    Ok((params, history))
}

/// Evaluation-mode class decision; positive iff `P(positive) >= 0.5`.
pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    input: &[f64],
) -> Result<(Label, f64), NnError> {
    let logits = forward_one(params, config, input)?;
    Ok(decide(&logits))
}

pub fn decide(logits: &[f64; 2]) -> (Label, f64) {
    let p = softmax(logits)[1];
    let label = if p >= 0.5 {
        Label::Positive
    } else {
        Label::Negative
    };
    (label, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_is_positive() {
        assert_eq!(decide(&[0.0, 0.0]), (Label::Positive, 0.5));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = ModelConfig {
            input_length: 32,
            conv_channels: vec![2, 2],
            dense_widths: vec![4],
            ..ModelConfig::default()
        };
        let x = vec![0.5; 32];
        let set = TrainingSet {
            inputs: vec![&x],
            labels: vec![1],
        };
        let tc = TrainConfig {
            epochs: 0,
            seed: 9,
            ..TrainConfig::default()
        };
        let (p, h) = train(&set, None, &cfg, &tc).unwrap();
        assert_eq!(p, ModelParams::init(&cfg, 9).unwrap());
        assert!(h.epochs.is_empty());
        assert_eq!(h.warnings.len(), 1);
    }

    #[test]
    fn empty_dataset_rejected() {
        let set = TrainingSet::default();
        assert!(matches!(
            train(&set, None, &ModelConfig::default(), &TrainConfig::default()),
            Err(NnError::EmptyDataset)
        ));
    }
}
