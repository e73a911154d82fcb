//! Statistical seed noise for the generator and the statistical baselines.

use ndarray::{Array3, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_model::{NoiseLevelFunction, PackedRawPatch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitNoiseMode {
    PoissonGaussian,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitNoiseConfig {
    pub mode: InitNoiseMode,
    /// Standard deviation of the signal-independent variant.
    pub gaussian_sigma: f64,
}

impl Default for InitNoiseConfig {
    fn default() -> Self {
        Self {
            mode: InitNoiseMode::PoissonGaussian,
            gaussian_sigma: 0.0,
        }
    }
}

impl InitNoiseConfig {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            mode: InitNoiseMode::Gaussian,
            gaussian_sigma: sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == InitNoiseMode::Gaussian
            && !(self.gaussian_sigma.is_finite() && self.gaussian_sigma > 0.0)
        {
            return Err(Error::Config(format!(
                "gaussian init noise needs sigma > 0, got {}",
                self.gaussian_sigma
            )));
        }
        Ok(())
    }
}

/// Per-element variance `delta_shot * clean + delta_read`.
pub fn variance_map(clean: &PackedRawPatch, nlf: &NoiseLevelFunction) -> PackedRawPatch {
    let (shot, read) = (nlf.delta_shot, nlf.delta_read);
    let var = clean.as_array().mapv(|c| (shot * c as f64 + read) as f32);
    PackedRawPatch::new(var).expect("affine map of a finite patch is finite")
}

/// Zero-mean heteroscedastic Gaussian draw with variance [`variance_map`].
pub fn heteroscedastic_noise<R: Rng + ?Sized>(
    clean: &PackedRawPatch,
    nlf: &NoiseLevelFunction,
    rng: &mut R,
) -> Result<PackedRawPatch> {
    nlf.validate()?;
    let mut out = Array3::<f32>::zeros(clean.as_array().dim());
    let (shot, read) = (nlf.delta_shot, nlf.delta_read);
    let mut bad = false;
    Zip::from(&mut out).and(clean.as_array()).for_each(|o, &c| {
        // clean values sit in [0, 1]; guard tiny negative round-off
        let var = (shot * c as f64 + read).max(0.0);
        bad |= !var.is_finite();
        let z: f64 = StandardNormal.sample(rng);
        *o = (var.sqrt() * z) as f32;
    });
    if bad {
        return Err(Error::Argument("non-finite variance".into()));
    }
    PackedRawPatch::new(out)
}

pub fn sample_init_noise<R: Rng + ?Sized>(
    clean: &PackedRawPatch,
    nlf: &NoiseLevelFunction,
    cfg: &InitNoiseConfig,
    rng: &mut R,
) -> Result<PackedRawPatch> {
    cfg.validate()?;
    if clean.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("clean patch contains NaN".into()));
    }
    match cfg.mode {
        InitNoiseMode::PoissonGaussian => heteroscedastic_noise(clean, nlf, rng),
        InitNoiseMode::Gaussian => {
            let sigma = cfg.gaussian_sigma;
            let noise = clean.as_array().mapv(|_| {
                let z: f64 = StandardNormal.sample(rng);
                (sigma * z) as f32
            });
            PackedRawPatch::new(noise)
        }
    }
}

/// Level-matched sigma for the Gaussian variant:
/// `sqrt(mean_i(delta_shot_i * mean(clean_i) + delta_read_i))`.
pub fn level_matched_sigma<'a, I>(samples: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a PackedRawPatch, NoiseLevelFunction)>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for (clean, nlf) in samples {
        sum += nlf.variance_at(clean.mean());
        n += 1;
    }
    if n == 0 {
        return Err(Error::Argument("no samples to level-match against".into()));
    }
    Ok((sum / n as f64).sqrt())
}
