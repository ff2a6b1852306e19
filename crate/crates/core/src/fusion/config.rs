use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-epoch probability of feeding a language-model sample instead of the
/// ground-truth token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingSchedule {
    Constant {
        probability: f64,
    },
    /// Linear from `start` to `end` over the first `ramp_fraction` of the
    /// epochs, then held at `end`.
    Ramp {
        start: f64,
        end: f64,
        ramp_fraction: f64,
    },
    /// Explicit values; the last one repeats.
    PerEpoch {
        probabilities: Vec<f64>,
    },
}

impl Default for SamplingSchedule {
    fn default() -> Self {
        SamplingSchedule::Ramp {
            start: 0.0,
            end: 0.25,
            ramp_fraction: 0.5,
        }
    }
}

fn unit(v: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} {v} outside [0, 1]")))
    }
}

impl SamplingSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            SamplingSchedule::Constant { probability } => unit(*probability, "sampling probability"),
            SamplingSchedule::Ramp {
                start,
                end,
                ramp_fraction,
            } => {
                unit(*start, "ramp start")?;
                unit(*end, "ramp end")?;
                unit(*ramp_fraction, "ramp fraction")
            }
            SamplingSchedule::PerEpoch { probabilities } => {
                if probabilities.is_empty() {
                    return Err(Error::Validation("per-epoch schedule is empty".into()));
                }
                probabilities.iter().try_for_each(|&p| unit(p, "sampling probability"))
            }
        }
    }

    /// Probability for zero-based `epoch` of `epochs`.
    pub fn probability(&self, epoch: usize, epochs: usize) -> f64 {
        match self {
            SamplingSchedule::Constant { probability } => *probability,
            SamplingSchedule::Ramp {
                start,
                end,
                ramp_fraction,
            } => {
                let ramp = ramp_fraction * epochs as f64;
                if ramp <= 0.0 || epoch as f64 >= ramp {
                    *end
                } else {
                    start + (end - start) * epoch as f64 / ramp
                }
            }
            SamplingSchedule::PerEpoch { probabilities } => {
                probabilities[epoch.min(probabilities.len() - 1)]
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SamplingSchedule::Constant { probability } => *probability == 0.0,
            SamplingSchedule::Ramp { start, end, .. } => *start == 0.0 && *end == 0.0,
            SamplingSchedule::PerEpoch { probabilities } => probabilities.iter().all(|&p| p == 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub lambda_acoustic: f64,
    pub lambda_lm: f64,
    pub schedule: SamplingSchedule,
    pub beam_width: usize,
    pub max_decode_len: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            lambda_acoustic: 1.0,
            lambda_lm: 0.25,
            schedule: SamplingSchedule::default(),
            beam_width: 8,
            max_decode_len: 16,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambdas(self.lambda_acoustic, self.lambda_lm)?;
        self.schedule.validate()?;
        if self.beam_width == 0 || self.max_decode_len == 0 {
            return Err(Error::Validation("beam width and max decode length must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_lambdas(acoustic: f64, lm: f64) -> Result<()> {
    if !(acoustic >= 0.0 && lm >= 0.0) || !acoustic.is_finite() || !lm.is_finite() {
        return Err(Error::Validation(format!(
            "mixing weights must be finite and >= 0, got {acoustic} and {lm}"
        )));
    }
    if acoustic + lm <= 0.0 {
        return Err(Error::Validation("acoustic and LM weights cannot both be zero".into()));
    }
    Ok(())
}

/// `(λ_α·log p_α + λ_ℓ·log p_ℓ) / (λ_α + λ_ℓ)`; higher is better. A zero
/// weight drops its term entirely, so `-inf` scores under it are ignored.
pub fn fused_score(acoustic_logprob: f64, lm_logprob: f64, cfg: &FusionConfig) -> Result<f64> {
    check_lambdas(cfg.lambda_acoustic, cfg.lambda_lm)?;
    Ok(fuse(acoustic_logprob, lm_logprob, cfg.lambda_acoustic, cfg.lambda_lm))
}

pub(crate) fn fuse(acoustic: f64, lm: f64, la: f64, ll: f64) -> f64 {
    if ll == 0.0 {
        acoustic
    } else if la == 0.0 {
        lm
    } else {
        (la * acoustic + ll * lm) / (la + ll)
    }
}
