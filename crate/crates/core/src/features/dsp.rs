//! Short-time spectral analysis used by the MFCC and spectrogram extractors.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect()
}

/// Mirror-pads by `pad` on both sides, excluding the edge sample.
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    debug_assert!(pad < n);
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

/// Number of frames produced by [`Stft::power`] for `samples` inputs.
pub fn frame_count(samples: usize, hop: usize) -> usize {
    samples / hop + 1
}

/// Centered STFT with reflect padding and a periodic Hann window.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Stft { n_fft, hop, window: hann(n_fft), fft }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Returns `frames` x `bins` squared magnitudes.
    pub fn power(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let padded = reflect_pad(x, self.n_fft / 2);
        let frames = (padded.len() - self.n_fft) / self.hop + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        (0..frames)
            .map(|f| {
                let start = f * self.hop;
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = Complex::new(padded[start + k] * self.window[k], 0.0);
                }
                self.fft.process(&mut buf);
                buf[..self.bins()].iter().map(|c| c.norm_sqr()).collect()
            })
            .collect()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `n_mels` x `bins`, unnormalized.
pub fn mel_filterbank(n_mels: usize, bins: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Vec<Vec<f64>> {
    let bin_hz: Vec<f64> = (0..bins).map(|k| k as f64 * sample_rate / 2.0 / (bins - 1) as f64).collect();
    let (m_min, m_max) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_min + (m_max - m_min) * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
            bin_hz
                .iter()
                .map(|&f| {
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II basis, `n_out` x `n_in`.
pub fn dct2_ortho(n_out: usize, n_in: usize) -> Vec<Vec<f64>> {
    let n = n_in as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            (0..n_in)
                .map(|i| scale * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos())
                .collect()
        })
        .collect()
}
