use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use super::waveform::Waveform;
use crate::error::{Error, Result};

/// Added to mel energies before the logarithm; silence maps to `ln(1e-6)`.
pub const LOG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    /// STFT window length in samples.
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: super::DEFAULT_SAMPLE_RATE,
            window: 400,
            hop: 160,
            n_mels: 40,
        }
    }
}

/// T×F log-mel matrix, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bins: usize,
    values: Vec<f64>,
    pub window: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn new(frames: usize, bins: usize, values: Vec<f64>, window: usize, hop: usize) -> Result<Self> {
        if frames * bins != values.len() {
            return Err(Error::Dimension(format!(
                "spectrogram {frames}x{bins} needs {} values, got {}",
                frames * bins,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("spectrogram has non-finite values".into()));
        }
        Ok(Spectrogram {
            frames,
            bins,
            values,
            window,
            hop,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }

    /// The first `t` frames.
    pub fn truncated(&self, t: usize) -> Result<Spectrogram> {
        if t == 0 || t > self.frames {
            return Err(Error::Argument(format!(
                "cannot truncate {} frames to {t}",
                self.frames
            )));
        }
        Spectrogram::new(t, self.bins, self.values[..t * self.bins].to_vec(), self.window, self.hop)
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters evenly spaced on the mel scale from 0 Hz to Nyquist.
/// Returns `n_mels` rows of `n_fft / 2 + 1` weights.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let max_mel = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(max_mel * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
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

/// Magnitude STFT with a periodic Hann window, mel projection, then
/// `ln(x + 1e-6)`. Yields `floor((len - window) / hop) + 1` frames.
pub fn stft_logmel(w: &Waveform, window: usize, hop: usize, n_mels: usize) -> Result<Spectrogram> {
    if hop == 0 || window < hop {
        return Err(Error::Argument(format!(
            "need window >= hop > 0, got window {window}, hop {hop}"
        )));
    }
    if n_mels == 0 {
        return Err(Error::Argument("n_mels must be positive".into()));
    }
    if w.len() < window {
        return Err(Error::Argument(format!(
            "waveform of {} samples is shorter than one {window}-sample window",
            w.len()
        )));
    }
    let frames = (w.len() - window) / hop + 1;
    let n_fft = window.next_power_of_two();
    let n_bins = n_fft / 2 + 1;
    let hann: Vec<f64> = (0..window)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / window as f64).cos())
        .collect();
    let fb = mel_filterbank(n_mels, n_fft, w.sample_rate());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut mag = vec![0.0; n_bins];
    let mut values = Vec::with_capacity(frames * n_mels);
    let x = w.samples();
    for t in 0..frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < window {
                Complex64::new(x[start + i] * hann[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (m, b) in mag.iter_mut().zip(&buf) {
            *m = b.norm();
        }
        for filt in &fb {
            let e: f64 = filt.iter().zip(&mag).map(|(a, b)| a * b).sum();
            values.push((e + LOG_FLOOR).ln());
        }
    }
    Spectrogram::new(frames, n_mels, values, window, hop)
}
