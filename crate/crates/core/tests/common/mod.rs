//! Test-only oracles, written independently of the library's layer kernels.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use whalewatch::nn::{
    backward, forward, softmax_cross_entropy, Batch, Dropout, DropoutMasks, Mode, ModelConfig, ModelParams,
    BN_EPSILON,
};

/// Direct-summation forward pass. `batch_stats` selects batch normalization
/// with statistics of this batch (training) instead of running statistics.
pub fn naive_forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    inputs: &[Vec<f64>],
    batch_stats: bool,
    masks: Option<&DropoutMasks>,
) -> Vec<[f64; 2]> {
    let b = inputs.len();
    // acts[s][c][j]
    let mut acts: Vec<Vec<Vec<f64>>> = inputs.iter().map(|x| vec![x.clone()]).collect();
    let p = cfg.padding_per_side as isize;
    let k = cfg.kernel_size;
    for (li, layer) in params.conv.iter().enumerate() {
        let cin = layer.in_channels;
        let cout = layer.out_channels;
        let lin = acts[0][0].len();
        let lconv = lin + 2 * cfg.padding_per_side + 1 - k;
        let mut conv = vec![vec![vec![0.0; lconv]; cout]; b];
        for s in 0..b {
            for o in 0..cout {
                for j in 0..lconv {
                    let mut v = layer.bias[o];
                    for i in 0..cin {
                        for t in 0..k {
                            let src = j as isize + t as isize - p;
                            if src >= 0 && (src as usize) < lin {
                                v += layer.kernel[(o * cin + i) * k + t] * acts[s][i][src as usize];
                            }
                        }
                    }
                    conv[s][o][j] = v;
                }
            }
        }
        let mut next = vec![vec![Vec::new(); cout]; b];
        for o in 0..cout {
            let (mean, var) = if batch_stats {
                let n = (b * lconv) as f64;
                let mean = conv.iter().flat_map(|c| c[o].iter()).sum::<f64>() / n;
                let var = conv
                    .iter()
                    .flat_map(|c| c[o].iter())
                    .map(|v| (v - mean).powi(2))
                    .sum::<f64>()
                    / n;
                (mean, var)
            } else {
                (layer.running_mean[o], layer.running_var[o])
            };
            for s in 0..b {
                let y: Vec<f64> = conv[s][o]
                    .iter()
                    .map(|v| {
                        let bn = layer.gamma[o] * (v - mean) / (var + BN_EPSILON).sqrt() + layer.beta[o];
                        bn.max(0.0)
                    })
                    .collect();
                let lp = lconv / cfg.pool_size;
                let pooled: Vec<f64> = (0..lp)
                    .map(|j| {
                        y[j * cfg.pool_size..(j + 1) * cfg.pool_size]
                            .iter()
                            .copied()
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect();
                let pooled = match masks.map(|m| &m.conv[li][s]) {
                    Some(m) if !m.is_empty() => pooled
                        .iter()
                        .enumerate()
                        .map(|(j, v)| v * m[o * lp + j])
                        .collect(),
                    _ => pooled,
                };
                next[s][o] = pooled;
            }
        }
        acts = next;
    }
    let n_hidden = params.dense.len() - 1;
    (0..b)
        .map(|s| {
            let mut x: Vec<f64> = acts[s].iter().flatten().copied().collect();
            for (li, layer) in params.dense.iter().enumerate() {
                let mut z = vec![0.0; layer.outputs];
                for o in 0..layer.outputs {
                    z[o] = layer.bias[o];
                    for i in 0..layer.inputs {
                        z[o] += layer.weight[o * layer.inputs + i] * x[i];
                    }
                }
                if li < n_hidden {
                    for (o, v) in z.iter_mut().enumerate() {
                        *v = v.max(0.0);
                        if let Some(m) = masks.map(|m| &m.dense[li][s]) {
                            if !m.is_empty() {
                                *v *= m[o];
                            }
                        }
                    }
                }
                x = z;
            }
            [x[0], x[1]]
        })
        .collect()
}

pub fn naive_loss(logits: &[[f64; 2]], labels: &[usize]) -> f64 {
    logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let m = z[0].max(z[1]);
            let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
            lse - z[y]
        })
        .sum::<f64>()
        / logits.len() as f64
}

/// Number of learnable coordinates.
pub fn learnable_len(params: &ModelParams) -> usize {
    let mut n = 0;
    params.for_each_tensor(|k, t| {
        if k.is_learnable() {
            n += t.len();
        }
    });
    n
}

pub fn learnable_get(params: &ModelParams, mut index: usize) -> f64 {
    let mut out = None;
    params.for_each_tensor(|k, t| {
        if out.is_some() || !k.is_learnable() {
            return;
        }
        if index < t.len() {
            out = Some(t[index]);
        } else {
            index -= t.len();
        }
    });
    out.expect("index in range")
}

pub fn learnable_add(params: &mut ModelParams, mut index: usize, delta: f64) {
    let mut done = false;
    params.for_each_tensor_mut(|k, t| {
        if done || !k.is_learnable() {
            return;
        }
        if index < t.len() {
            t[index] += delta;
            done = true;
        } else {
            index -= t.len();
        }
    });
    assert!(done);
}

/// Central difference of `loss` with respect to learnable coordinate `index`.
pub fn central_difference(
    params: &ModelParams,
    index: usize,
    step: f64,
    loss: impl Fn(&ModelParams) -> f64,
) -> f64 {
    let mut up = params.clone();
    learnable_add(&mut up, index, step);
    let mut down = params.clone();
    learnable_add(&mut down, index, -step);
    (loss(&up) - loss(&down)) / (2.0 * step)
}

/// `|a - b| / max(|a|, |b|, 1e-6)`: relative error, compared absolutely for
/// gradients that are numerically zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Smallest distance of any pre-activation from a ReLU kink or any pooling
/// pair from a tie, under training-mode statistics. Finite differences are
/// only meaningful when this exceeds the perturbation's effect.
pub fn kink_margin(params: &ModelParams, cfg: &ModelConfig, inputs: &[Vec<f64>]) -> f64 {
    // reuse the naive pass with a probe: evaluate with a slightly modified
    // pipeline that records margins
    let b = inputs.len();
    let mut acts: Vec<Vec<Vec<f64>>> = inputs.iter().map(|x| vec![x.clone()]).collect();
    let p = cfg.padding_per_side as isize;
    let k = cfg.kernel_size;
    let mut margin = f64::INFINITY;
    for layer in &params.conv {
        let (cin, cout) = (layer.in_channels, layer.out_channels);
        let lin = acts[0][0].len();
        let lconv = lin + 2 * cfg.padding_per_side + 1 - k;
        let mut conv = vec![vec![vec![0.0; lconv]; cout]; b];
        for s in 0..b {
            for o in 0..cout {
                for j in 0..lconv {
                    let mut v = layer.bias[o];
                    for i in 0..cin {
                        for t in 0..k {
                            let src = j as isize + t as isize - p;
                            if src >= 0 && (src as usize) < lin {
                                v += layer.kernel[(o * cin + i) * k + t] * acts[s][i][src as usize];
                            }
                        }
                    }
                    conv[s][o][j] = v;
                }
            }
        }
        let mut next = vec![vec![Vec::new(); cout]; b];
        for o in 0..cout {
            let n = (b * lconv) as f64;
            let mean = conv.iter().flat_map(|c| c[o].iter()).sum::<f64>() / n;
            let var = conv.iter().flat_map(|c| c[o].iter()).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            for s in 0..b {
                let pre: Vec<f64> = conv[s][o]
                    .iter()
                    .map(|v| layer.gamma[o] * (v - mean) / (var + BN_EPSILON).sqrt() + layer.beta[o])
                    .collect();
                for &v in &pre {
                    margin = margin.min(v.abs());
                }
                let y: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
                let lp = lconv / cfg.pool_size;
                let mut pooled = Vec::with_capacity(lp);
                for j in 0..lp {
                    let w = &y[j * cfg.pool_size..(j + 1) * cfg.pool_size];
                    let mut sorted = w.to_vec();
                    sorted.sort_by(|a, b| b.total_cmp(a));
                    if sorted.len() > 1 && sorted[0] > 0.0 {
                        margin = margin.min(sorted[0] - sorted[1]);
                    }
                    pooled.push(sorted[0]);
                }
                next[s][o] = pooled;
            }
        }
        acts = next;
    }
    let n_hidden = params.dense.len() - 1;
    for s in 0..b {
        let mut x: Vec<f64> = acts[s].iter().flatten().copied().collect();
        for layer in &params.dense[..n_hidden] {
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    layer.bias[o]
                        + (0..layer.inputs)
                            .map(|i| layer.weight[o * layer.inputs + i] * x[i])
                            .sum::<f64>()
                })
                .collect();
            for &v in &z {
                margin = margin.min(v.abs());
            }
            x = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    margin
}

pub fn noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Perturbs biases, gains and shifts away from their initial values so that
/// their gradients are exercised in general position.
pub fn jitter(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
    for l in &mut params.conv {
        l.bias.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        l.gamma.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        l.beta.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        l.running_mean.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        l.running_var.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
    }
    for l in &mut params.dense {
        l.bias.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    }
}

pub fn analytic(params: &ModelParams, cfg: &ModelConfig, xs: &[Vec<f64>], labels: &[usize], masks: Option<&DropoutMasks>) -> ModelParams {
    let batch = Batch::new(xs.iter().map(|x| x.as_slice()).collect(), labels.to_vec()).unwrap();
    let dropout = match masks {
        Some(m) => Dropout::Fixed(m),
        None => Dropout::Disabled,
    };
    let out = forward(params, cfg, &batch, Mode::Train(dropout)).unwrap();
    let (_, dlogits) = softmax_cross_entropy(&out.logits, labels);
    backward(params, cfg, &out.cache.unwrap(), &dlogits).unwrap()
}

/// Deterministic search for a fixture whose activations sit away from ReLU
/// kinks and pooling ties.
pub fn fixture(cfg: &ModelConfig, batch: usize, margin: f64) -> (ModelParams, Vec<Vec<f64>>, Vec<usize>) {
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(cfg, seed).unwrap();
        jitter(&mut params, &mut rng);
        let xs: Vec<Vec<f64>> = (0..batch).map(|_| noise(cfg.input_length, &mut rng)).collect();
        if kink_margin(&params, cfg, &xs) > margin {
            let labels = (0..batch).map(|i| i % 2).collect();
            return (params, xs, labels);
        }
    }
    panic!("no kink-free fixture found");
}

/// Worst relative error over every learnable coordinate, dropout off,
/// step 1e-4; `Err` names the first coordinate at or above `tol`.
pub fn check_all(cfg: &ModelConfig, batch: usize, tol: f64) -> Result<f64, String> {
    let (params, xs, labels) = fixture(cfg, batch, 2e-3);
    let grads = analytic(&params, cfg, &xs, &labels, None);
    let loss = |p: &ModelParams| naive_loss(&naive_forward(p, cfg, &xs, true, None), &labels);
    let mut worst: f64 = 0.0;
    for i in 0..learnable_len(&params) {
        let n = central_difference(&params, i, 1e-4, loss);
        let a = learnable_get(&grads, i);
        let e = rel_err(a, n);
        if !(e < tol) {
            return Err(format!("coordinate {i}: analytic {a:e} numeric {n:e} rel {e:e}"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

/// A whale-like window: a ramped tone in noise, standardized.
pub fn synthetic_window(n: usize, f: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / 2000.0;
            let env = (std::f64::consts::PI * i as f64 / n as f64).sin();
            env * (2.0 * std::f64::consts::PI * f * t).sin() + 0.3 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Default architecture, batch of two windows, frozen dropout masks, 100
/// coordinates sampled round-robin over the learnable tensors.
pub fn check_full_architecture(tol: f64) -> Result<f64, String> {
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = ModelParams::init(&cfg, 11).unwrap();
    let xs = vec![synthetic_window(5000, 60.0, &mut rng), synthetic_window(5000, 140.0, &mut rng)];
    let labels = vec![1, 0];
    let masks = DropoutMasks::sample(&cfg, 2, &mut rng).unwrap();
    let grads = analytic(&params, &cfg, &xs, &labels, Some(&masks));
    let loss = |p: &ModelParams| naive_loss(&naive_forward(p, &cfg, &xs, true, Some(&masks)), &labels);

    // A channel-wide shift moves ~10^4 first-layer units; at step 1e-4 some
    // of them cross a ReLU kink or pooling tie, so a smaller step is used.
    let step = 1e-6;
    // Round-robin over learnable tensors so every layer is sampled.
    let mut spans = Vec::new();
    let mut offset = 0;
    params.for_each_tensor(|k, t| {
        if k.is_learnable() {
            spans.push((offset, t.len()));
            offset += t.len();
        }
    });
    let mut worst: f64 = 0.0;
    for s in 0..100 {
        let (start, len) = spans[s % spans.len()];
        let i = start + rng.random_range(0..len);
        let n = central_difference(&params, i, step, loss);
        let a = learnable_get(&grads, i);
        let e = rel_err(a, n);
        if !(e < tol) {
            return Err(format!("coordinate {i}: analytic {a:e} numeric {n:e} rel {e:e}"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

