//! Forward and reverse passes of the temporal CNN.
//!
//! Conv block: convolution -> batch norm -> ReLU -> max-pool -> dropout.
//! Dense block: affine -> ReLU -> dropout. The output layer is affine.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, N_CLASSES};
use super::layers::{self, ConvDims};
use super::params::{Gradients, ModelParams};
use super::NnError;
use crate::par;

/// Variance guard inside batch normalization.
pub const BN_EPSILON: f64 = 1e-5;

/// A batch of single-channel inputs with class labels (0 negative, 1 positive).
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: Vec<&'a [f64]>, labels: Vec<usize>) -> Result<Self, NnError> {
        if inputs.len() != labels.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= N_CLASSES) {
            return Err(NnError::ShapeMismatch(format!("label {l} out of range")));
        }
        Ok(Self { inputs, labels })
    }

    /// Inputs only; labels are zero.
    pub fn unlabelled(inputs: Vec<&'a [f64]>) -> Self {
        let labels = vec![0; inputs.len()];
        Self { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Inverted-dropout scale factors, indexed `[layer][sample][element]`. An
/// empty per-sample vector means the layer keeps every unit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DropoutMasks {
    pub conv: Vec<Vec<Vec<f64>>>,
    pub dense: Vec<Vec<Vec<f64>>>,
}

impl DropoutMasks {
    /// Draws masks for every dropout site, in layer then sample order.
    pub fn sample(config: &ModelConfig, batch: usize, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let flow = config.shape_flow()?;
        let mut draw = |p: f64, n: usize| -> Vec<Vec<f64>> {
            (0..batch)
                .map(|_| {
                    if p == 0.0 {
                        return Vec::new();
                    }
                    let keep = 1.0 / (1.0 - p);
                    (0..n)
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                        .collect()
                })
                .collect()
        };
        let conv = flow
            .blocks
            .iter()
            .map(|b| draw(config.conv_dropout, b.out_channels * b.out_length))
            .collect();
        let dense = config
            .dense_widths
            .iter()
            .map(|&w| draw(config.dense_dropout, w))
            .collect();
        Ok(Self { conv, dense })
    }

    /// Keep-everything masks.
    pub fn none(config: &ModelConfig, batch: usize) -> Self {
        Self {
            conv: vec![vec![Vec::new(); batch]; config.conv_channels.len()],
            dense: vec![vec![Vec::new(); batch]; config.dense_widths.len()],
        }
    }
}

pub enum Dropout<'a> {
    Sample(&'a mut ChaCha8Rng),
    Fixed(&'a DropoutMasks),
    Disabled,
}

pub enum Mode<'a> {
    /// Running batch-norm statistics, no dropout.
    Eval,
    /// Batch statistics, dropout per the given source.
    Train(Dropout<'a>),
}

#[derive(Debug, Clone)]
struct ConvCache {
    xpad: Vec<Vec<f64>>,
    xhat: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
    mean: Vec<f64>,
    var: Vec<f64>,
    inv_std: Vec<f64>,
    /// Elements per channel entering the batch statistics.
    count: usize,
}

#[derive(Debug, Clone)]
struct DenseCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Intermediates of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    batch: usize,
    shape_key: Vec<usize>,
    conv: Vec<ConvCache>,
    dense: Vec<DenseCache>,
    pub masks: DropoutMasks,
}

impl Cache {
    /// Per conv block `(batch mean, batch population variance)`.
    pub fn batch_statistics(&self) -> Vec<(&[f64], &[f64])> {
        self.conv
            .iter()
            .map(|c| (c.mean.as_slice(), c.var.as_slice()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<[f64; N_CLASSES]>,
    /// Present for training-mode passes.
    pub cache: Option<Cache>,
}

fn shape_key(config: &ModelConfig) -> Vec<usize> {
    let mut k = vec![config.input_length, config.kernel_size, config.padding_per_side, config.pool_size];
    k.extend(&config.conv_channels);
    k.extend(&config.dense_widths);
    k
}

fn check_params(params: &ModelParams, config: &ModelConfig) -> Result<(), NnError> {
    if params.conv.len() != config.conv_channels.len()
        || params.dense.len() != config.dense_widths.len() + 1
    {
        return Err(NnError::ShapeMismatch("parameters do not match the configuration".into()));
    }
    Ok(())
}

fn output_logits(v: &[f64]) -> [f64; N_CLASSES] {
    [v[0], v[1]]
}

/// Evaluation-mode forward of one input.
pub fn forward_one(params: &ModelParams, config: &ModelConfig, input: &[f64]) -> Result<[f64; N_CLASSES], NnError> {
    if input.len() != config.input_length {
        return Err(NnError::ShapeMismatch(format!(
            "input length {} but model expects {}",
            input.len(),
            config.input_length
        )));
    }
    check_params(params, config)?;
    let flow = config.shape_flow()?;
    let pad = config.padding_per_side;
    let mut x = input.to_vec();
    for (layer, shape) in params.conv.iter().zip(&flow.blocks) {
        let xpad = layers::pad_rows(&x, shape.in_channels, shape.in_length, pad);
        let dims = ConvDims {
            in_channels: shape.in_channels,
            out_channels: shape.out_channels,
            kernel: config.kernel_size,
            padded_len: shape.in_length + 2 * pad,
            out_len: shape.conv_length,
        };
        let mut z = layers::conv_forward(&xpad, &layer.kernel, &layer.bias, dims);
        for c in 0..shape.out_channels {
            let inv = 1.0 / (layer.running_var[c] + BN_EPSILON).sqrt();
            let (g, b, m) = (layer.gamma[c], layer.beta[c], layer.running_mean[c]);
            for v in &mut z[c * shape.conv_length..(c + 1) * shape.conv_length] {
                *v = (g * (*v - m) * inv + b).max(0.0);
            }
        }
        x = layers::max_pool(&z, shape.out_channels, shape.conv_length, config.pool_size).0;
    }
    let (hidden, output) = params.dense.split_at(params.dense.len() - 1);
    for layer in hidden {
        x = layers::dense_forward(&layer.weight, &layer.bias, &x);
        x.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok(output_logits(&layers::dense_forward(&output[0].weight, &output[0].bias, &x)))
}

/// Forward pass over a batch. Evaluation mode is pure; training mode returns
/// the cache consumed by [`backward`]. Running statistics are never touched
/// here; see [`update_running_stats`].
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Batch<'_>,
    mode: Mode<'_>,
) -> Result<ForwardOutput, NnError> {
    if batch.is_empty() {
        return Err(NnError::ShapeMismatch("empty batch".into()));
    }
    if let Some(x) = batch.inputs.iter().find(|x| x.len() != config.input_length) {
        return Err(NnError::ShapeMismatch(format!(
            "input length {} but model expects {}",
            x.len(),
            config.input_length
        )));
    }
    check_params(params, config)?;
    let dropout = match mode {
        Mode::Eval => {
            let logits = par::map(&batch.inputs, |x| forward_one(params, config, x))
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(ForwardOutput { logits, cache: None });
        }
        Mode::Train(d) => d,
    };

    let b = batch.len();
    let masks = match dropout {
        Dropout::Sample(rng) => DropoutMasks::sample(config, b, rng)?,
        Dropout::Fixed(m) => {
            if m.conv.len() != config.conv_channels.len()
                || m.dense.len() != config.dense_widths.len()
                || m.conv.iter().chain(&m.dense).any(|l| l.len() != b)
            {
                return Err(NnError::ShapeMismatch("dropout masks do not match the batch".into()));
            }
            m.clone()
        }
        Dropout::Disabled => DropoutMasks::none(config, b),
    };

    let flow = config.shape_flow()?;
    let pad = config.padding_per_side;
    let mut acts: Vec<Vec<f64>> = batch.inputs.iter().map(|x| x.to_vec()).collect();
    let mut conv_caches = Vec::with_capacity(params.conv.len());

    for (bi, (layer, shape)) in params.conv.iter().zip(&flow.blocks).enumerate() {
        let dims = ConvDims {
            in_channels: shape.in_channels,
            out_channels: shape.out_channels,
            kernel: config.kernel_size,
            padded_len: shape.in_length + 2 * pad,
            out_len: shape.conv_length,
        };
        let len = shape.conv_length;
        let channels = shape.out_channels;
        let conv_out: Vec<(Vec<f64>, Vec<f64>)> = par::map(&acts, |x| {
            let xpad = layers::pad_rows(x, shape.in_channels, shape.in_length, pad);
            let z = layers::conv_forward(&xpad, &layer.kernel, &layer.bias, dims);
            (xpad, z)
        });

        let count = b * len;
        let sums = par::map(&conv_out, |(_, z)| {
            (0..channels).map(|c| z[c * len..(c + 1) * len].iter().sum::<f64>()).collect::<Vec<_>>()
        });
        let mut mean = vec![0.0; channels];
        for s in &sums {
            for c in 0..channels {
                mean[c] += s[c];
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let sq = par::map(&conv_out, |(_, z)| {
            (0..channels)
                .map(|c| z[c * len..(c + 1) * len].iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f64>())
                .collect::<Vec<_>>()
        });
        let mut var = vec![0.0; channels];
        for s in &sq {
            for c in 0..channels {
                var[c] += s[c];
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

        let block_masks = &masks.conv[bi];
        let inputs: Vec<(usize, &(Vec<f64>, Vec<f64>))> = conv_out.iter().enumerate().collect();
        let results: Vec<(Vec<f64>, Vec<u32>, Vec<f64>)> = par::map(&inputs, |&(s, (_, z))| {
            let mut xhat = vec![0.0; channels * len];
            let mut r = vec![0.0; channels * len];
            for c in 0..channels {
                let (g, be, m, inv) = (layer.gamma[c], layer.beta[c], mean[c], inv_std[c]);
                for j in c * len..(c + 1) * len {
                    let h = (z[j] - m) * inv;
                    xhat[j] = h;
                    r[j] = (g * h + be).max(0.0);
                }
            }
            let (mut pooled, arg) = layers::max_pool(&r, channels, len, config.pool_size);
            let mask = &block_masks[s];
            if !mask.is_empty() {
                pooled.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            (pooled, arg, xhat)
        });

        let mut xpads = Vec::with_capacity(b);
        for (xpad, _) in conv_out {
            xpads.push(xpad);
        }
        let mut xhats = Vec::with_capacity(b);
        let mut args = Vec::with_capacity(b);
        acts.clear();
        for (pooled, arg, xhat) in results {
            acts.push(pooled);
            args.push(arg);
            xhats.push(xhat);
        }
        conv_caches.push(ConvCache {
            xpad: xpads,
            xhat: xhats,
            argmax: args,
            mean,
            var,
            inv_std,
            count,
        });
    }

    // dense stack, per sample
    let n_hidden = params.dense.len() - 1;
    let idx: Vec<usize> = (0..b).collect();
    let per_sample: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>, [f64; N_CLASSES])> = par::map(&idx, |&s| {
        let mut x = acts[s].clone();
        let mut ins = Vec::with_capacity(n_hidden + 1);
        let mut pres = Vec::with_capacity(n_hidden);
        for (li, layer) in params.dense[..n_hidden].iter().enumerate() {
            let z = layers::dense_forward(&layer.weight, &layer.bias, &x);
            let mask = &masks.dense[li][s];
            let a: Vec<f64> = if mask.is_empty() {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.iter().zip(mask).map(|(v, m)| v.max(0.0) * m).collect()
            };
            ins.push(std::mem::replace(&mut x, a));
            pres.push(z);
        }
        let out = &params.dense[n_hidden];
        let logits = output_logits(&layers::dense_forward(&out.weight, &out.bias, &x));
        ins.push(x);
        (ins, pres, logits)
    });

    let mut dense_caches: Vec<DenseCache> = (0..=n_hidden)
        .map(|_| DenseCache {
            inputs: Vec::with_capacity(b),
            pre: Vec::with_capacity(b),
        })
        .collect();
    let mut logits = Vec::with_capacity(b);
    for (ins, pres, l) in per_sample {
        for (li, v) in ins.into_iter().enumerate() {
            dense_caches[li].inputs.push(v);
        }
        for (li, v) in pres.into_iter().enumerate() {
            dense_caches[li].pre.push(v);
        }
        logits.push(l);
    }

    Ok(ForwardOutput {
        logits,
        cache: Some(Cache {
            batch: b,
            shape_key: shape_key(config),
            conv: conv_caches,
            dense: dense_caches,
            masks,
        }),
    })
}

/// Exact gradients of the loss whose logit gradient is `dlogits`.
pub fn backward(
    params: &ModelParams,
    config: &ModelConfig,
    cache: &Cache,
    dlogits: &[[f64; N_CLASSES]],
) -> Result<Gradients, NnError> {
    check_params(params, config)?;
    if cache.shape_key != shape_key(config)
        || cache.conv.len() != params.conv.len()
        || cache.dense.len() != params.dense.len()
    {
        return Err(NnError::StaleCache("cache was produced for a different model".into()));
    }
    if dlogits.len() != cache.batch {
        return Err(NnError::StaleCache(format!(
            "cache holds {} samples but {} logit gradients were given",
            cache.batch,
            dlogits.len()
        )));
    }
    let b = cache.batch;
    let flow = config.shape_flow()?;
    let mut grads = params.zeros_like();
    let n_hidden = params.dense.len() - 1;
    let idx: Vec<usize> = (0..b).collect();

    // dense stack
    let dense_parts: Vec<(Vec<(Vec<f64>, Vec<f64>)>, Vec<f64>)> = par::map(&idx, |&s| {
        let mut parts: Vec<(Vec<f64>, Vec<f64>)> = params
            .dense
            .iter()
            .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
            .collect();
        let out = &params.dense[n_hidden];
        let (dw, db) = &mut parts[n_hidden];
        let mut d = layers::dense_backward(&out.weight, &cache.dense[n_hidden].inputs[s], &dlogits[s], dw, db);
        for li in (0..n_hidden).rev() {
            let mask = &cache.masks.dense[li][s];
            let pre = &cache.dense[li].pre[s];
            for (j, g) in d.iter_mut().enumerate() {
                let m = if mask.is_empty() { 1.0 } else { mask[j] };
                *g = if pre[j] > 0.0 { *g * m } else { 0.0 };
            }
            let (dw, db) = &mut parts[li];
            d = layers::dense_backward(&params.dense[li].weight, &cache.dense[li].inputs[s], &d, dw, db);
        }
        (parts, d)
    });
    let mut upstream: Vec<Vec<f64>> = Vec::with_capacity(b);
    for (parts, d) in dense_parts {
        for (li, (dw, db)) in parts.iter().enumerate() {
            layers::axpy(1.0, dw, &mut grads.dense[li].weight);
            layers::axpy(1.0, db, &mut grads.dense[li].bias);
        }
        upstream.push(d);
    }

    // conv stack
    let pad = config.padding_per_side;
    for bi in (0..params.conv.len()).rev() {
        let layer = &params.conv[bi];
        let shape = flow.blocks[bi];
        let cc = &cache.conv[bi];
        let (channels, len) = (shape.out_channels, shape.conv_length);

        let phase1: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = par::map(&idx, |&s| {
            let mask = &cache.masks.conv[bi][s];
            let xhat = &cc.xhat[s];
            let mut dy = vec![0.0; channels * len];
            for (j, &g) in upstream[s].iter().enumerate() {
                let g = if mask.is_empty() { g } else { g * mask[j] };
                let at = cc.argmax[s][j] as usize;
                dy[at] += g;
            }
            let mut dgamma = vec![0.0; channels];
            let mut dbeta = vec![0.0; channels];
            for c in 0..channels {
                let (g, be) = (layer.gamma[c], layer.beta[c]);
                for j in c * len..(c + 1) * len {
                    if g * xhat[j] + be <= 0.0 {
                        dy[j] = 0.0;
                    }
                }
                dgamma[c] = layers::dot(&dy[c * len..(c + 1) * len], &xhat[c * len..(c + 1) * len]);
                dbeta[c] = dy[c * len..(c + 1) * len].iter().sum();
            }
            (dy, dgamma, dbeta)
        });
        let mut dgamma = vec![0.0; channels];
        let mut dbeta = vec![0.0; channels];
        for (_, g, be) in &phase1 {
            for c in 0..channels {
                dgamma[c] += g[c];
                dbeta[c] += be[c];
            }
        }

        let dims = ConvDims {
            in_channels: shape.in_channels,
            out_channels: channels,
            kernel: config.kernel_size,
            padded_len: shape.in_length + 2 * pad,
            out_len: len,
        };
        let want_input = bi > 0;
        let n = cc.count as f64;
        let phase2: Vec<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> = par::map(&idx, |&s| {
            let (dy, _, _) = &phase1[s];
            let xhat = &cc.xhat[s];
            let mut dz = vec![0.0; channels * len];
            for c in 0..channels {
                let scale = layer.gamma[c] * cc.inv_std[c] / n;
                for j in c * len..(c + 1) * len {
                    dz[j] = scale * (n * dy[j] - dbeta[c] - xhat[j] * dgamma[c]);
                }
            }
            let mut dw = vec![0.0; layer.kernel.len()];
            let mut db = vec![0.0; channels];
            let dxpad = layers::conv_backward(&cc.xpad[s], &layer.kernel, &dz, dims, &mut dw, &mut db, want_input);
            let dx = dxpad.map(|dp| {
                let mut dx = Vec::with_capacity(shape.in_channels * shape.in_length);
                for i in 0..shape.in_channels {
                    let row = i * dims.padded_len + pad;
                    dx.extend_from_slice(&dp[row..row + shape.in_length]);
                }
                dx
            });
            (dw, db, dx)
        });
        let g = &mut grads.conv[bi];
        g.gamma = dgamma;
        g.beta = dbeta;
        upstream.clear();
        for (dw, db, dx) in phase2 {
            layers::axpy(1.0, &dw, &mut g.kernel);
            layers::axpy(1.0, &db, &mut g.bias);
            if let Some(dx) = dx {
                upstream.push(dx);
            }
        }
    }
    Ok(grads)
}

/// Blends batch statistics from a training pass into the running estimates:
/// `running = (1 - m) * running + m * batch`, with the unbiased variance.
pub fn update_running_stats(params: &mut ModelParams, cache: &Cache, momentum: f64) {
    for (layer, cc) in params.conv.iter_mut().zip(&cache.conv) {
        let unbias = if cc.count > 1 {
            cc.count as f64 / (cc.count - 1) as f64
        } else {
            1.0
        };
        for c in 0..layer.out_channels {
            layer.running_mean[c] = (1.0 - momentum) * layer.running_mean[c] + momentum * cc.mean[c];
            layer.running_var[c] = (1.0 - momentum) * layer.running_var[c] + momentum * cc.var[c] * unbias;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_input_gives_output_bias() {
        let cfg = ModelConfig::default();
        let mut p = ModelParams::init(&cfg, 3).unwrap();
        p.dense.last_mut().unwrap().bias = vec![0.25, -0.5];
        let zeros = vec![0.0; 5000];
        let batch = Batch::unlabelled(vec![&zeros, &zeros]);
        let train = forward(&p, &cfg, &batch, Mode::Train(Dropout::Disabled)).unwrap();
        assert_eq!(train.logits, vec![[0.25, -0.5]; 2]);
        let eval = forward(&p, &cfg, &batch, Mode::Eval).unwrap();
        assert_eq!(eval.logits, vec![[0.25, -0.5]; 2]);
    }

    #[test]
    fn eval_is_deterministic_and_pure() {
        let cfg = ModelConfig::default();
        let p = ModelParams::init(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5000).map(|_| rng.random_range(-2.0..2.0)).collect();
        let batch = Batch::unlabelled(vec![&x]);
        let a = forward(&p, &cfg, &batch, Mode::Eval).unwrap();
        let b = forward(&p, &cfg, &batch, Mode::Eval).unwrap();
        assert_eq!(a.logits, b.logits);
        assert!(a.cache.is_none());
    }

    #[test]
    fn shape_errors() {
        let cfg = ModelConfig::default();
        let p = ModelParams::init(&cfg, 3).unwrap();
        let short = vec![0.0; 10];
        let batch = Batch::unlabelled(vec![&short]);
        assert!(matches!(
            forward(&p, &cfg, &batch, Mode::Eval),
            Err(NnError::ShapeMismatch(_))
        ));
        assert!(Batch::new(vec![&short], vec![2]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cfg = ModelConfig {
            input_length: 32,
            conv_channels: vec![3, 2],
            dense_widths: vec![5],
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&cfg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let batch = Batch::unlabelled(xs.iter().map(|x| x.as_slice()).collect());
        let out = forward(&p, &cfg, &batch, Mode::Train(Dropout::Sample(&mut rng))).unwrap();
        let g = backward(&p, &cfg, out.cache.as_ref().unwrap(), &[[0.0; 2]; 3]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(matches!(
            backward(&p, &cfg, out.cache.as_ref().unwrap(), &[[0.0; 2]; 2]),
            Err(NnError::StaleCache(_))
        ));
    }
}
