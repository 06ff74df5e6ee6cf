use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    /// `out_channels x in_channels x kernel_size`, row-major.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Every stored tensor of the network. Gradients use the same type; their
/// running-statistic fields stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv: Vec<ConvLayer>,
    /// Hidden layers followed by the output layer.
    pub dense: Vec<DenseLayer>,
}

pub type Gradients = ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Kernel,
    ConvBias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
    Weight,
    DenseBias,
}

impl TensorKind {
    pub fn is_learnable(self) -> bool {
        !matches!(self, TensorKind::RunningMean | TensorKind::RunningVar)
    }

    /// Only kernels and weight matrices carry L2 decay.
    pub fn is_decayed(self) -> bool {
        matches!(self, TensorKind::Kernel | TensorKind::Weight)
    }
}

impl ModelParams {
    /// All zeros, with unit running variance.
    pub fn zeros(config: &ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let flow = config.shape_flow()?;
        let conv = flow
            .blocks
            .iter()
            .map(|b| {
                let c = b.out_channels;
                ConvLayer {
                    in_channels: b.in_channels,
                    out_channels: c,
                    kernel_size: config.kernel_size,
                    kernel: vec![0.0; c * b.in_channels * config.kernel_size],
                    bias: vec![0.0; c],
                    gamma: vec![0.0; c],
                    beta: vec![0.0; c],
                    running_mean: vec![0.0; c],
                    running_var: vec![0.0; c],
                }
            })
            .collect();
        let dense = config
            .dense_shapes()?
            .into_iter()
            .map(|(inputs, outputs)| DenseLayer {
                inputs,
                outputs,
                weight: vec![0.0; inputs * outputs],
                bias: vec![0.0; outputs],
            })
            .collect();
        Ok(Self { conv, dense })
    }

    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases
    /// and shifts, unit gains and running variances.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, NnError> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut p.conv {
            let limit = (6.0 / (layer.in_channels * layer.kernel_size) as f64).sqrt();
            for w in &mut layer.kernel {
                *w = rng.random_range(-limit..limit);
            }
            layer.gamma.fill(1.0);
            layer.running_var.fill(1.0);
        }
        for layer in &mut p.dense {
            let limit = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(p)
    }

    /// Zero tensors of the same shapes.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(|_, t| t.fill(0.0));
        z
    }

    /// Visits tensors in canonical order: per conv layer kernel, bias, gamma,
    /// beta, running mean, running variance; then per dense layer weight,
    /// bias.
    pub fn for_each_tensor<'a>(&'a self, mut f: impl FnMut(TensorKind, &'a [f64])) {
        for l in &self.conv {
            f(TensorKind::Kernel, &l.kernel);
            f(TensorKind::ConvBias, &l.bias);
            f(TensorKind::Gamma, &l.gamma);
            f(TensorKind::Beta, &l.beta);
            f(TensorKind::RunningMean, &l.running_mean);
            f(TensorKind::RunningVar, &l.running_var);
        }
        for l in &self.dense {
            f(TensorKind::Weight, &l.weight);
            f(TensorKind::DenseBias, &l.bias);
        }
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(TensorKind, &mut [f64])) {
        for l in &mut self.conv {
            f(TensorKind::Kernel, &mut l.kernel);
            f(TensorKind::ConvBias, &mut l.bias);
            f(TensorKind::Gamma, &mut l.gamma);
            f(TensorKind::Beta, &mut l.beta);
            f(TensorKind::RunningMean, &mut l.running_mean);
            f(TensorKind::RunningVar, &mut l.running_var);
        }
        for l in &mut self.dense {
            f(TensorKind::Weight, &mut l.weight);
            f(TensorKind::DenseBias, &mut l.bias);
        }
    }

    /// Learnable tensors zipped with the matching tensors of `other`.
    pub fn zip_learnable_mut(
        &mut self,
        other: &Self,
        mut f: impl FnMut(TensorKind, &mut [f64], &[f64]),
    ) {
        let mut theirs: Vec<&[f64]> = Vec::new();
        other.for_each_tensor(|k, t| {
            if k.is_learnable() {
                theirs.push(t);
            }
        });
        let mut idx = 0;
        self.for_each_tensor_mut(|k, t| {
            if k.is_learnable() {
                f(k, t, theirs[idx]);
                idx += 1;
            }
        });
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|_, t| n += t.len());
        n
    }

    /// Flattened copy in canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        self.for_each_tensor(|_, t| out.extend_from_slice(t));
        out
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(|_, t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }

    /// Accumulates `other` into `self` elementwise.
    pub fn add_assign(&mut self, other: &Self) {
        let mut theirs: Vec<&[f64]> = Vec::new();
        other.for_each_tensor(|_, t| theirs.push(t));
        let mut idx = 0;
        self.for_each_tensor_mut(|_, t| {
            for (a, b) in t.iter_mut().zip(theirs[idx]) {
                *a += b;
            }
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matches_config() {
        let cfg = ModelConfig::default();
        let p = ModelParams::init(&cfg, 1).unwrap();
        assert_eq!(p.count(), cfg.parameter_count().unwrap());
        assert_eq!(p.dense.last().unwrap().outputs, 2);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::default();
        let a = ModelParams::init(&cfg, 7).unwrap();
        assert_eq!(a, ModelParams::init(&cfg, 7).unwrap());
        assert_ne!(a, ModelParams::init(&cfg, 8).unwrap());
        let limit = (6.0f64 / 8.0).sqrt();
        assert!(a.conv[0].kernel.iter().all(|w| w.abs() < limit));
        assert!(a.conv.iter().all(|l| l.gamma.iter().all(|&g| g == 1.0)));
        assert!(a.conv.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }
}
