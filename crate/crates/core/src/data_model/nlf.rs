use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signal-dependent noise variance `delta_shot * I + delta_read`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevelFunction {
    pub delta_shot: f64,
    pub delta_read: f64,
}

impl NoiseLevelFunction {
    pub fn new(delta_shot: f64, delta_read: f64) -> Result<Self> {
        let nlf = Self {
            delta_shot,
            delta_read,
        };
        nlf.validate()?;
        Ok(nlf)
    }

    pub const fn zero() -> Self {
        Self {
            delta_shot: 0.0,
            delta_read: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_shot.is_finite() && self.delta_shot >= 0.0) {
            return Err(Error::Argument(format!(
                "delta_shot must be finite and >= 0, got {}",
                self.delta_shot
            )));
        }
        if !(self.delta_read.is_finite() && self.delta_read >= 0.0) {
            return Err(Error::Argument(format!(
                "delta_read must be finite and >= 0, got {}",
                self.delta_read
            )));
        }
        Ok(())
    }

    /// A valid noisy capture needs at least one nonzero component.
    pub fn is_noisy(&self) -> bool {
        self.delta_shot > 0.0 || self.delta_read > 0.0
    }

    pub fn variance_at(&self, intensity: f64) -> f64 {
        self.delta_shot * intensity + self.delta_read
    }
}

/// Exponents applied to the gain ratio when moving an NLF between gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainExponents {
    pub shot: f64,
    pub read: f64,
}

impl Default for GainExponents {
    fn default() -> Self {
        Self { shot: 1.0, read: 2.0 }
    }
}

pub fn scale_nlf(nlf: NoiseLevelFunction, gain_ratio: f64) -> Result<NoiseLevelFunction> {
    scale_nlf_with(nlf, gain_ratio, GainExponents::default())
}

pub fn scale_nlf_with(
    nlf: NoiseLevelFunction,
    gain_ratio: f64,
    exponents: GainExponents,
) -> Result<NoiseLevelFunction> {
    if !(gain_ratio.is_finite() && gain_ratio > 0.0) {
        return Err(Error::Argument(format!(
            "gain ratio must be positive, got {gain_ratio}"
        )));
    }
    nlf.validate()?;
    Ok(NoiseLevelFunction {
        delta_shot: nlf.delta_shot * gain_ratio.powf(exponents.shot),
        delta_read: nlf.delta_read * gain_ratio.powf(exponents.read),
    })
}
