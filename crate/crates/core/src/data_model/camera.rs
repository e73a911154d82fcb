//! Simulated sensors with a known noise law.

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::bayer::PackedRawPatch;
use super::nlf::{scale_nlf, NoiseLevelFunction};
use crate::error::{Error, Result};
use crate::init_noise::heteroscedastic_noise;

/// Ground-truth noise parameters of a virtual sensor.
///
/// The NLF is the Poisson-Gaussian part a statistical model can know about;
/// row offsets and quantization are left out of it on purpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualCamera {
    pub camera_id: String,
    pub base_nlf: NoiseLevelFunction,
    pub row_noise_sigma: f64,
    pub quant_step: f64,
    pub seed: u64,
}

impl VirtualCamera {
    pub fn validate(&self) -> Result<()> {
        if self.camera_id.is_empty() {
            return Err(Error::Validation("camera id must not be empty".into()));
        }
        self.base_nlf.validate()?;
        if !(self.row_noise_sigma.is_finite() && self.row_noise_sigma >= 0.0) {
            return Err(Error::Validation(format!(
                "camera {}: row_noise_sigma must be >= 0",
                self.camera_id
            )));
        }
        if !(self.quant_step.is_finite() && self.quant_step >= 0.0) {
            return Err(Error::Validation(format!(
                "camera {}: quant_step must be >= 0",
                self.camera_id
            )));
        }
        Ok(())
    }

    fn noise_signature(&self) -> [u64; 4] {
        [
            self.base_nlf.delta_shot.to_bits(),
            self.base_nlf.delta_read.to_bits(),
            self.row_noise_sigma.to_bits(),
            self.quant_step.to_bits(),
        ]
    }
}

/// Distinct ids must come with distinct noise laws, and ids must be unique.
pub fn validate_cameras(cameras: &[VirtualCamera]) -> Result<()> {
    for (i, a) in cameras.iter().enumerate() {
        a.validate()?;
        for b in &cameras[i + 1..] {
            if a.camera_id == b.camera_id {
                return Err(Error::Validation(format!(
                    "duplicate camera id {}",
                    a.camera_id
                )));
            }
            if a.noise_signature() == b.noise_signature() {
                return Err(Error::Validation(format!(
                    "cameras {} and {} share identical noise parameters",
                    a.camera_id, b.camera_id
                )));
            }
        }
    }
    Ok(())
}

/// Preset sensors used by `make-dataset`.
///
/// The presets trade the Poisson-Gaussian level against row noise so that
/// each camera departs from the statistical model differently.
pub fn preset_cameras(count: usize, seed: u64) -> Vec<VirtualCamera> {
    const PRESETS: [(f64, f64, f64, f64); 6] = [
        // delta_shot, delta_read, row sigma, quant step (at gain 1)
        (2.0e-4, 2.0e-6, 0.0000, 1.0 / 4096.0),
        (1.0e-4, 4.0e-6, 0.0030, 1.0 / 1024.0),
        (3.0e-4, 1.0e-6, 0.0060, 1.0 / 2048.0),
        (1.5e-4, 8.0e-6, 0.0015, 1.0 / 1024.0),
        (4.0e-4, 3.0e-6, 0.0045, 1.0 / 4096.0),
        (6.0e-5, 6.0e-6, 0.0075, 1.0 / 2048.0),
    ];
    (0..count)
        .map(|i| {
            let (shot, read, row, q) = PRESETS[i % PRESETS.len()];
            // wrap-around presets get progressively stronger shot noise
            let cycle = (i / PRESETS.len()) as f64;
            VirtualCamera {
                camera_id: format!("cam{i}"),
                base_nlf: NoiseLevelFunction {
                    delta_shot: shot * (1.0 + 0.5 * cycle),
                    delta_read: read,
                },
                row_noise_sigma: row,
                quant_step: q,
                seed: seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)),
            }
        })
        .collect()
}

/// Draws a noisy capture of `clean` through `cam` at `gain_ratio`.
///
/// Returns the noisy patch and the NLF of its Poisson-Gaussian part. Row
/// offsets are drawn per raw row: packed row `r` takes raw row `2r` in the
/// R/G1 planes and raw row `2r + 1` in the G2/B planes.
pub fn simulate_virtual_capture<R: Rng + ?Sized>(
    clean: &PackedRawPatch,
    cam: &VirtualCamera,
    gain_ratio: f64,
    rng: &mut R,
) -> Result<(PackedRawPatch, NoiseLevelFunction)> {
    cam.validate()?;
    let nlf = scale_nlf(cam.base_nlf, gain_ratio)?;
    let n = clean.size();
    let shot = heteroscedastic_noise(clean, &nlf, rng)?;
    let mut noisy: Array3<f32> = clean.as_array() + shot.as_array();

    if cam.row_noise_sigma > 0.0 {
        for raw_row in 0..2 * n {
            let z: f64 = StandardNormal.sample(rng);
            let offset = (cam.row_noise_sigma * z) as f32;
            let (r, planes) = (raw_row / 2, if raw_row % 2 == 0 { [0, 1] } else { [2, 3] });
            for c in planes {
                noisy
                    .slice_mut(ndarray::s![c, r, ..])
                    .mapv_inplace(|v| v + offset);
            }
        }
    }
    if cam.quant_step > 0.0 {
        let q = cam.quant_step;
        noisy.mapv_inplace(|v| ((v as f64 / q).round() * q) as f32);
    }
    Ok((PackedRawPatch::new(noisy)?, nlf))
}
