//! Butterworth bandpass design (bilinear transform) and zero-phase filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

/// One second-order section `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + self.b[1] * zi + self.b[2] * zi * zi;
        let den = 1.0 + self.a[0] * zi + self.a[1] * zi * zi;
        num / den
    }

    /// State `(s1, s2)` of a transposed direct-form II section that has
    /// settled on a constant unit input.
    fn step_state(&self) -> [f64; 2] {
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        let s2 = self.b[2] - self.a[1] * dc;
        let s1 = self.b[1] - self.a[0] * dc + s2;
        [s1, s2]
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Butterworth bandpass with an analog lowpass prototype of `order` poles
    /// (so `2 * order` poles in total), unit gain at the geometric band centre.
    pub fn butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, sample_rate: f64) -> Self {
        assert!(order >= 1);
        assert!(0.0 < low_hz && low_hz < high_hz && high_hz < sample_rate / 2.0);
        let fs2 = 2.0 * sample_rate;
        let w_lo = fs2 * (PI * low_hz / sample_rate).tan();
        let w_hi = fs2 * (PI * high_hz / sample_rate).tan();
        let w0 = (w_lo * w_hi).sqrt();
        let bw = w_hi - w_lo;

        let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);
        let bandpass_pair = |p: Complex64| {
            let half = p * (bw / 2.0);
            let root = (half * half - w0 * w0).sqrt();
            (half + root, half - root)
        };
        let section = |z1: Complex64, z2: Complex64| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-(z1 + z2).re, (z1 * z2).re],
        };

        let mut sections = Vec::with_capacity(order);
        for k in 1..=order {
            let theta = PI / 2.0 + PI * (2 * k - 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            if p.im > 1e-12 {
                let (s1, s2) = bandpass_pair(p);
                for s in [s1, s2] {
                    let z = bilinear(s);
                    sections.push(section(z, z.conj()));
                }
            } else if p.im.abs() <= 1e-12 {
                let (s1, s2) = bandpass_pair(Complex64::new(p.re, 0.0));
                sections.push(section(bilinear(s1), bilinear(s2)));
            }
        }

        let centre = 2.0 * (w0 / fs2).atan();
        let z = Complex64::from_polar(1.0, centre);
        let gain = sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z))
            .norm();
        let per_section = gain.powf(-1.0 / sections.len() as f64);
        for s in &mut sections {
            for b in &mut s.b {
                *b *= per_section;
            }
        }
        Self { sections }
    }

    /// Frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq_hz / sample_rate);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z))
    }

    /// Causal filtering; the state starts settled on `signal[0]`.
    pub fn filter(&self, signal: &[f64]) -> Vec<f64> {
        let mut out = signal.to_vec();
        let x0 = signal.first().copied().unwrap_or(0.0);
        let mut level = x0;
        for sec in &self.sections {
            let zi = sec.step_state();
            let (mut s1, mut s2) = (zi[0] * level, zi[1] * level);
            for v in out.iter_mut() {
                let x = *v;
                let y = sec.b[0] * x + s1;
                s1 = sec.b[1] * x - sec.a[0] * y + s2;
                s2 = sec.b[2] * x - sec.a[1] * y;
                *v = y;
            }
            // settled output level of a constant input feeding the next section
            let dc = (sec.b[0] + sec.b[1] + sec.b[2]) / (1.0 + sec.a[0] + sec.a[1]);
            level *= dc;
        }
        out
    }

    /// Forward-backward filtering with odd reflective padding of `pad`
    /// samples per side; output has the input's length and no phase lag.
    pub fn filtfilt(&self, signal: &[f64], pad: usize) -> Vec<f64> {
        let n = signal.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (signal[0], signal[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
        ext.extend_from_slice(signal);
        ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y.drain(..pad);
        y.truncate(n);
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn unit_gain_in_band_and_zeros_at_edges() {
        let f = SosFilter::butterworth_bandpass(4, 20.0, 200.0, 2000.0);
        assert_eq!(f.sections.len(), 4);
        assert!((f.response(63.2456, 2000.0).norm() - 1.0).abs() < 1e-3);
        assert!(f.response(0.0, 2000.0).norm() < 1e-9);
        assert!(f.response(1000.0, 2000.0).norm() < 1e-9);
        // Butterworth edges sit at -3 dB
        for edge in [20.0, 200.0] {
            let g = f.response(edge, 2000.0).norm();
            assert!((g - 0.5f64.sqrt()).abs() < 1e-6, "edge {edge}: {g}");
        }
    }

    #[test]
    fn odd_order_designs() {
        for order in [1, 3, 5] {
            let f = SosFilter::butterworth_bandpass(order, 20.0, 200.0, 2000.0);
            assert_eq!(f.sections.len(), order);
            let g = f.response(20.0, 2000.0).norm();
            assert!((g - 0.5f64.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn passband_tone_preserved() {
        let f = SosFilter::butterworth_bandpass(4, 20.0, 200.0, 2000.0);
        let x = tone(100.0, 2000.0, 5000);
        let y = f.filtfilt(&x, 12);
        assert!((rms(&y) / rms(&x) - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_in_zero_out() {
        let f = SosFilter::butterworth_bandpass(4, 20.0, 200.0, 2000.0);
        assert!(f.filtfilt(&[0.0; 300], 12).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_signals() {
        let f = SosFilter::butterworth_bandpass(2, 20.0, 200.0, 2000.0);
        assert_eq!(f.filtfilt(&[1.0], 12).len(), 1);
        assert_eq!(f.filtfilt(&[1.0, 2.0, 3.0], 12).len(), 3);
    }
}
