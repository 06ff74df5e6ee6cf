//! Per-sample layer kernels. Tensors are flat channel-major slices.

/// Dot product with independent partial sums so the loop vectorizes. The
/// summation order is fixed, hence deterministic.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Zero-pads each of `channels` rows of length `len` by `pad` on both sides.
pub fn pad_rows(x: &[f64], channels: usize, len: usize, pad: usize) -> Vec<f64> {
    let padded = len + 2 * pad;
    let mut out = vec![0.0; channels * padded];
    for c in 0..channels {
        out[c * padded + pad..c * padded + pad + len].copy_from_slice(&x[c * len..(c + 1) * len]);
    }
    out
}

/// Geometry of one stride-1 convolution over padded input.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// Row length of the padded input.
    pub padded_len: usize,
    pub out_len: usize,
}

/// `out[o][j] = bias[o] + sum_{i,t} w[o][i][t] * xpad[i][j + t]`.
pub fn conv_forward(xpad: &[f64], weight: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.out_channels * d.out_len];
    for o in 0..d.out_channels {
        let row = &mut out[o * d.out_len..(o + 1) * d.out_len];
        row.fill(bias[o]);
        for i in 0..d.in_channels {
            let xrow = &xpad[i * d.padded_len..(i + 1) * d.padded_len];
            let w = &weight[(o * d.in_channels + i) * d.kernel..(o * d.in_channels + i + 1) * d.kernel];
            for (t, &wv) in w.iter().enumerate() {
                axpy(wv, &xrow[t..t + d.out_len], row);
            }
        }
    }
    out
}

/// Accumulates kernel and bias gradients, and returns the gradient with
/// respect to the padded input when `want_input` is set.
pub fn conv_backward(
    xpad: &[f64],
    weight: &[f64],
    dout: &[f64],
    d: ConvDims,
    dweight: &mut [f64],
    dbias: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let mut dx = want_input.then(|| vec![0.0; d.in_channels * d.padded_len]);
    for o in 0..d.out_channels {
        let drow = &dout[o * d.out_len..(o + 1) * d.out_len];
        dbias[o] += drow.iter().sum::<f64>();
        for i in 0..d.in_channels {
            let base = (o * d.in_channels + i) * d.kernel;
            let xrow = &xpad[i * d.padded_len..(i + 1) * d.padded_len];
            for t in 0..d.kernel {
                dweight[base + t] += dot(drow, &xrow[t..t + d.out_len]);
            }
            if let Some(dx) = dx.as_mut() {
                let dxrow = &mut dx[i * d.padded_len..(i + 1) * d.padded_len];
                for t in 0..d.kernel {
                    axpy(weight[base + t], drow, &mut dxrow[t..t + d.out_len]);
                }
            }
        }
    }
    dx
}

/// Max-pool with stride equal to the kernel and floor semantics. Returns
/// pooled values and the absolute argmax index (first on ties).
pub fn max_pool(x: &[f64], channels: usize, len: usize, pool: usize) -> (Vec<f64>, Vec<u32>) {
    let out_len = len / pool;
    let mut out = Vec::with_capacity(channels * out_len);
    let mut arg = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        let row = &x[c * len..(c + 1) * len];
        for j in 0..out_len {
            let mut best = j * pool;
            for k in j * pool + 1..(j + 1) * pool {
                if row[k] > row[best] {
                    best = k;
                }
            }
            out.push(row[best]);
            arg.push((c * len + best) as u32);
        }
    }
    (out, arg)
}

/// `out = W x + b` for one sample.
pub fn dense_forward(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| b + dot(&weight[o * n_in..(o + 1) * n_in], x))
        .collect()
}

/// Accumulates `dW += dout x^T`, `db += dout`; returns `W^T dout`.
pub fn dense_backward(
    weight: &[f64],
    x: &[f64],
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (o, &g) in dout.iter().enumerate() {
        dbias[o] += g;
        if g != 0.0 {
            axpy(g, x, &mut dweight[o * n_in..(o + 1) * n_in]);
            axpy(g, &weight[o * n_in..(o + 1) * n_in], &mut dx);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn conv_direct_sum() {
        let d = ConvDims {
            in_channels: 2,
            out_channels: 1,
            kernel: 2,
            padded_len: 4,
            out_len: 3,
        };
        let x = [1.0, 2.0, 3.0, 4.0, 0.5, 0.0, -1.0, 2.0];
        let w = [1.0, -1.0, 2.0, 0.5];
        let out = conv_forward(&x, &w, &[0.25], d);
        let expect: Vec<f64> = (0..3)
            .map(|j| 0.25 + x[j] - x[j + 1] + 2.0 * x[4 + j] + 0.5 * x[4 + j + 1])
            .collect();
        assert_eq!(out, expect);
    }

    #[test]
    fn pool_first_index_on_ties() {
        let (v, a) = max_pool(&[1.0, 1.0, 0.0, 3.0, 9.0], 1, 5, 2);
        assert_eq!(v, vec![1.0, 3.0]);
        assert_eq!(a, vec![0, 3]);
    }
}
