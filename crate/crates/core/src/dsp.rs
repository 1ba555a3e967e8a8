//! Small FFT helpers shared by the codec, the noise generators, the
//! convolution and the feature frontend.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Symmetric-inverse pair of FFTs of one size.
pub struct FftPair {
    pub size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    /// Forward transform of a real signal, zero-padded to `size`.
    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(self.size, Complex64::new(0.0, 0.0));
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform, real part, scaled by 1/size.
    pub fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut spec);
        let scale = 1.0 / self.size as f64;
        spec.iter().map(|c| c.re * scale).collect()
    }
}

/// Linear convolution of `x` with `h`, truncated to `x.len()`, via
/// overlap-add.
pub fn fft_convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = h.len();
    if n == 0 || m == 0 {
        return vec![0.0; n];
    }
    let fft_size = (2 * m).next_power_of_two().max(1024);
    let block = fft_size - m + 1;
    let fft = FftPair::new(fft_size);
    let h_spec = fft.forward_real(h);
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let end = (start + block).min(n);
        let mut spec = fft.forward_real(&x[start..end]);
        for (s, hs) in spec.iter_mut().zip(&h_spec) {
            *s *= hs;
        }
        let y = fft.inverse_real(spec);
        for (i, v) in y.iter().enumerate() {
            let t = start + i;
            if t >= n {
                break;
            }
            out[t] += v;
        }
        start = end;
    }
    out
}
