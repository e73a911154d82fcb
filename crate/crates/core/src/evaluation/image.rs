use ndarray::{Array2, ArrayView2, Axis};

use crate::data_model::PackedRawPatch;
use crate::{Error, Result};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &PackedRawPatch, b: &PackedRawPatch) -> Result<()> {
    if a.as_array().shape() != b.as_array().shape() {
        return Err(Error::Dimension(format!(
            "image shapes differ: {:?} vs {:?}",
            a.as_array().shape(),
            b.as_array().shape()
        )));
    }
    Ok(())
}

pub fn mse(a: &PackedRawPatch, b: &PackedRawPatch) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &PackedRawPatch, b: &PackedRawPatch, max_value: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / m).log10())
}

fn gaussian_kernel() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering.
fn filter(img: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = k.len();
    let mut rows = Array2::<f64>::zeros((h, w + 1 - n));
    for y in 0..h {
        for x in 0..w + 1 - n {
            rows[[y, x]] = (0..n).map(|i| k[i] * img[[y, x + i]]).sum();
        }
    }
    let mut out = Array2::zeros((h + 1 - n, w + 1 - n));
    for y in 0..h + 1 - n {
        for x in 0..w + 1 - n {
            out[[y, x]] = (0..n).map(|i| k[i] * rows[[y + i, x]]).sum();
        }
    }
    out
}

fn ssim_plane(a: ArrayView2<f32>, b: ArrayView2<f32>, k: &[f64], data_range: f64) -> f64 {
    let a = a.mapv(f64::from);
    let b = b.mapv(f64::from);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mu_a = filter(&a, k);
    let mu_b = filter(&b, k);
    let saa = filter(&(&a * &a), k) - &mu_a * &mu_a;
    let sbb = filter(&(&b * &b), k) - &mu_b * &mu_b;
    let sab = filter(&(&a * &b), k) - &mu_a * &mu_b;
    let num = (&mu_a * &mu_b * 2.0 + c1) * (sab * 2.0 + c2);
    let den = (&mu_a * &mu_a + &mu_b * &mu_b + c1) * (saa + sbb + c2);
    (num / den).mean().unwrap_or(1.0)
}

/// Mean structural similarity with an 11x11 Gaussian window, averaged over
/// the packed channels. Data range is 1.
pub fn ssim(a: &PackedRawPatch, b: &PackedRawPatch) -> Result<f64> {
    check_shapes(a, b)?;
    if a.size() < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} planes, got {}",
            a.size()
        )));
    }
    let k = gaussian_kernel();
    let planes = a.as_array().len_of(Axis(0));
    let total: f64 = (0..planes)
        .map(|c| {
            ssim_plane(
                a.as_array().index_axis(Axis(0), c),
                b.as_array().index_axis(Axis(0), c),
                &k,
                1.0,
            )
        })
        .sum();
    Ok(total / planes as f64)
}
