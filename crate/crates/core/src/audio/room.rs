use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use super::waveform::Waveform;
use crate::error::{Error, Result};
use crate::rng::derived;

/// Energy of the reverberant tail relative to the direct path.
const TAIL_ENERGY: f64 = 0.5;
/// Impulse responses are truncated at this length.
const MAX_IR_SECS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomModel {
    /// Source-to-microphone distance in meters.
    pub distance: f64,
    /// Seconds for the tail to decay by 60 dB; 0 means anechoic.
    pub rt60: f64,
    /// Signal-to-noise ratio in dB; `f64::INFINITY` adds no noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl RoomModel {
    pub fn validate(&self) -> Result<()> {
        if !self.distance.is_finite() || self.distance <= 0.0 {
            return Err(Error::Argument(format!(
                "room distance must be positive, got {}",
                self.distance
            )));
        }
        if !self.rt60.is_finite() || self.rt60 < 0.0 {
            return Err(Error::Argument(format!("RT60 must be >= 0, got {}", self.rt60)));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Argument("SNR is NaN".into()));
        }
        Ok(())
    }
}

/// Direct path followed by an exponentially decaying Gaussian tail.
pub fn impulse_response(room: &RoomModel, sample_rate: u32) -> Vec<f64> {
    if room.rt60 == 0.0 {
        return vec![1.0];
    }
    let sr = sample_rate as f64;
    let len = ((room.rt60.min(MAX_IR_SECS) * sr).ceil() as usize).max(2);
    // 60 dB amplitude decay over rt60 seconds.
    let decay = (1000f64).ln() / (room.rt60 * sr);
    let mut rng = derived(room.seed, &[0x12E5]);
    let mut h = vec![0.0; len];
    h[0] = 1.0;
    for (n, v) in h.iter_mut().enumerate().skip(1) {
        let z: f64 = rng.sample(StandardNormal);
        *v = z * (-decay * n as f64).exp();
    }
    let tail: f64 = h[1..].iter().map(|v| v * v).sum();
    if tail > 0.0 {
        let g = (TAIL_ENERGY / tail).sqrt();
        h[1..].iter_mut().for_each(|v| *v *= g);
    }
    h
}

/// Linear convolution truncated to the length of `x`.
fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    if h.len() == 1 {
        return x.iter().map(|v| v * h[0]).collect();
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |s: &[f64]| {
        let mut v: Vec<Complex64> = s.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    a.iter().take(x.len()).map(|c| c.re / n as f64).collect()
}

/// Simulate a distant microphone: reverberate, attenuate by `1/distance`,
/// then add white noise at the requested SNR. Output is clamped to [-1, 1].
pub fn apply_far_field(w: &Waveform, room: &RoomModel) -> Result<Waveform> {
    room.validate()?;
    let h = impulse_response(room, w.sample_rate());
    let gain = 1.0 / room.distance;
    let mut y: Vec<f64> = convolve_truncated(w.samples(), &h)
        .into_iter()
        .map(|v| v * gain)
        .collect();
    if room.snr_db.is_finite() && !y.is_empty() {
        let sig_rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
        let noise_rms = sig_rms / 10f64.powf(room.snr_db / 20.0);
        let mut rng = derived(room.seed, &[0x015E]);
        for v in y.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += z * noise_rms;
        }
    }
    y.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Waveform::new(y, w.sample_rate())
}
