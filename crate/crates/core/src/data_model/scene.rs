//! Procedural clean scenes standing in for noise-free reference captures.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bayer::{bayer_flip_h, pack_bayer, random_crop, PackedRawPatch, RawMosaic};
use crate::error::Result;

/// Linear-raw RGGB rendering of a random arrangement of shapes, gradients and
/// textures, scaled by a scene exposure.
pub fn render_scene(size: usize, seed: u64) -> Result<RawMosaic> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = size + size % 2;
    let exposure: f64 = rng.random_range(0.15..0.95);
    let mut rgb = vec![[0.0f64; 3]; size * size];

    // smooth background
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.6));
    let grad: [(f64, f64); 3] =
        std::array::from_fn(|_| (rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)));
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
            for c in 0..3 {
                rgb[y * size + x][c] = base[c] + grad[c].0 * (u - 0.5) + grad[c].1 * (v - 0.5);
            }
        }
    }

    let shapes = rng.random_range(6..16);
    for _ in 0..shapes {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let cx = rng.random_range(0.0..size as f64);
        let cy = rng.random_range(0.0..size as f64);
        let rx = rng.random_range(4.0..size as f64 / 3.0);
        let ry = rng.random_range(4.0..size as f64 / 3.0);
        let disk = rng.random_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                let inside = if disk {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    rgb[y * size + x] = color;
                }
            }
        }
    }

    // a couple of oriented gratings for texture
    for _ in 0..2 {
        let amp = rng.random_range(0.0..0.15);
        let freq = rng.random_range(0.02..0.3);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        for y in 0..size {
            for x in 0..size {
                let t = (c * x as f64 + s * y as f64) * freq;
                let m = 1.0 + amp * t.sin();
                for v in &mut rgb[y * size + x] {
                    *v *= m;
                }
            }
        }
    }

    let mosaic = Array2::from_shape_fn((size, size), |(y, x)| {
        let px = rgb[y * size + x];
        let ch = match (y % 2, x % 2) {
            (0, 0) => 0,
            (1, 1) => 2,
            _ => 1,
        };
        (px[ch] * exposure) as f32
    });
    RawMosaic::from_clean(mosaic)
}

/// Draws one training patch with random phase-preserving crop and flip.
///
/// `patch_size` is the packed size; the raw crop is twice as large.
pub fn sample_patch<R: Rng + ?Sized>(
    scene: &RawMosaic,
    patch_size: usize,
    rng: &mut R,
) -> Result<PackedRawPatch> {
    let raw = 2 * patch_size;
    let crop = if rng.random_bool(0.5) {
        let wide = random_crop(scene, raw + 2, rng)?;
        random_crop(&bayer_flip_h(&wide)?, raw, rng)?
    } else {
        random_crop(scene, raw, rng)?
    };
    pack_bayer(&crop)
}
