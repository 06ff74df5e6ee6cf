use super::config::N_CLASSES;

/// Numerically stable two-class softmax.
pub fn softmax(logits: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits, `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(
    logits: &[[f64; N_CLASSES]],
    labels: &[usize],
) -> (f64, Vec<[f64; N_CLASSES]>) {
    assert_eq!(logits.len(), labels.len());
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        let m = z[0].max(z[1]);
        let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        loss += lse - z[y];
        let p = softmax(z);
        let mut g = [p[0] / n, p[1] / n];
        g[y] -= 1.0 / n;
        grad.push(g);
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let (l, g) = softmax_cross_entropy(&[[0.0, 0.0]], &[0]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g, vec![[-0.5, 0.5]]);
    }

    #[test]
    fn large_logits_are_stable() {
        let (l, _) = softmax_cross_entropy(&[[30.0, -30.0]], &[0]);
        assert!(l.is_finite() && l >= 0.0 && l < 1e-20);
        let (l, _) = softmax_cross_entropy(&[[800.0, -800.0]], &[1]);
        assert!((l - 1600.0).abs() < 1e-9);
        let p = softmax(&[1000.0, -1000.0]);
        assert_eq!(p, [1.0, 0.0]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let logits = [[0.3, -1.2], [2.0, 0.5], [-0.7, -0.1]];
        let labels = [0, 1, 1];
        let (_, g) = softmax_cross_entropy(&logits, &labels);
        let h = 1e-5;
        for i in 0..3 {
            for k in 0..2 {
                let mut up = logits;
                up[i][k] += h;
                let mut dn = logits;
                dn[i][k] -= h;
                let fd = (softmax_cross_entropy(&up, &labels).0 - softmax_cross_entropy(&dn, &labels).0) / (2.0 * h);
                let rel = (fd - g[i][k]).abs() / g[i][k].abs().max(1e-12);
                assert!(rel < 1e-6, "({i},{k}) fd {fd} analytic {}", g[i][k]);
            }
        }
    }
}
