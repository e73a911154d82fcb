//! Noise-model and denoiser metrics.

mod image;
mod kl;
mod latent;
mod models;

pub use image::{mse, psnr, ssim};
pub use kl::{histogram, histogram_kl, kl_from_histograms, KlConfig, KlValue, CLIP_WARNING_FRACTION};
pub use latent::{export_latents_csv, latent_separation, shuffled_separation};
pub use models::{
    evaluation_subset, gaussian_baseline_sigma, model_kl_eval, synthesize_noise, write_json, write_kl_csv,
    KlRow, LatentChoice, ModelKl, NoiseModel,
};
pub(crate) use latent::csv_error;
