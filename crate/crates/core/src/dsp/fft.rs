//! Exact-length discrete Fourier transforms.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans for one transform length. Plans are immutable and
/// shareable across threads.
#[derive(Clone)]
pub struct DftPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for DftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DftPlan").field("len", &self.len).finish()
    }
}

impl DftPlan {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "transform length must be positive");
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
    pub fn forward_real(&self, signal: &[f64]) -> Vec<Complex64> {
        assert_eq!(signal.len(), self.len);
        let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len);
        self.forward.process(buf);
    }

    /// `x[n] = (1/N) sum_k X[k] e^{2 pi i k n / N}`.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len);
        self.inverse.process(buf);
        let scale = 1.0 / self.len as f64;
        for c in buf.iter_mut() {
            *c *= scale;
        }
    }
}

pub fn dft(signal: &[f64]) -> Vec<Complex64> {
    DftPlan::new(signal.len()).forward_real(signal)
}

pub fn idft(spectrum: &[Complex64]) -> Vec<Complex64> {
    let plan = DftPlan::new(spectrum.len());
    let mut buf = spectrum.to_vec();
    plan.inverse_in_place(&mut buf);
    buf
}

/// Per-bin squared magnitude of the DFT.
pub fn power_spectrum(signal: &[f64]) -> Vec<f64> {
    dft(signal).iter().map(|c| c.norm_sqr()).collect()
}
