use super::config::{ModelConfig, TrainConfig};
use super::params::{Gradients, ModelParams};
use super::NnError;

/// First and second moment estimates for every learnable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let mut first = Vec::new();
        params.for_each_tensor(|k, t| {
            if k.is_learnable() {
                first.push(vec![0.0; t.len()]);
            }
        });
        let second = first.clone();
        Self {
            step: 0,
            first,
            second,
        }
    }
}

/// One Adam update. The effective gradient adds `weight_decay * w` for
/// kernels and weight matrices only.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    train: &TrainConfig,
    model: &ModelConfig,
) -> Result<(), NnError> {
    if params.count() != grads.count() {
        return Err(NnError::ShapeMismatch("gradient shapes differ from parameters".into()));
    }
    let mut lengths = Vec::new();
    params.for_each_tensor(|k, t| {
        if k.is_learnable() {
            lengths.push(t.len());
        }
    });
    if lengths.len() != state.first.len()
        || lengths.iter().zip(&state.first).any(|(&n, m)| n != m.len())
    {
        return Err(NnError::ShapeMismatch("optimizer state does not match parameters".into()));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (train.adam_beta1, train.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps, wd) = (train.learning_rate, train.adam_epsilon, model.weight_decay);
    let mut idx = 0;
    let (first, second) = (&mut state.first, &mut state.second);
    params.zip_learnable_mut(grads, |kind, w, g| {
        let decay = if kind.is_decayed() { wd } else { 0.0 };
        let (m, v) = (&mut first[idx], &mut second[idx]);
        for i in 0..w.len() {
            let grad = g[i] + decay * w[i];
            m[i] = b1 * m[i] + (1.0 - b1) * grad;
            v[i] = b2 * v[i] + (1.0 - b2) * grad * grad;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        idx += 1;
    });
    Ok(())
}
