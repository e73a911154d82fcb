//! RGGB mosaics, half-resolution packing and phase-preserving augmentation.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use rand::Rng;

use crate::error::{Error, Result};

/// Number of packed Bayer planes (R, G1, G2, B).
pub const BAYER_CHANNELS: usize = 4;

/// Single-plane RGGB mosaic in linear raw units.
///
/// Noise-free captures are clamped to `[0, 1]` by [`RawMosaic::from_clean`];
/// noisy mosaics are kept unclamped.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMosaic {
    values: Array2<f32>,
}

impl RawMosaic {
    pub fn new(values: Array2<f32>) -> Result<Self> {
        let (h, w) = values.dim();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension(format!(
                "mosaic dimensions must be even, got {h}x{w}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("mosaic contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    /// Ingests a noise-free capture, clamping it into `[0, 1]`.
    pub fn from_clean(values: Array2<f32>) -> Result<Self> {
        Self::new(values.mapv(|v| v.clamp(0.0, 1.0)))
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f32> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f32> {
        self.values
    }
}

/// Four-plane half-resolution raster of a Bayer patch, channel order R, G1, G2, B.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedRawPatch {
    channels: Array3<f32>,
}

impl PackedRawPatch {
    pub fn new(channels: Array3<f32>) -> Result<Self> {
        let (c, h, w) = channels.dim();
        if c != BAYER_CHANNELS {
            return Err(Error::Dimension(format!(
                "packed patch needs {BAYER_CHANNELS} channels, got {c}"
            )));
        }
        if h != w || h == 0 {
            return Err(Error::Dimension(format!(
                "packed patch must be square and non-empty, got {h}x{w}"
            )));
        }
        if channels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("packed patch contains non-finite values".into()));
        }
        Ok(Self { channels })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            channels: Array3::zeros((BAYER_CHANNELS, size, size)),
        }
    }

    /// Builds a patch from a flat C-order buffer of shape `4 × size × size`.
    pub fn from_flat(values: Vec<f32>, size: usize) -> Result<Self> {
        let expected = BAYER_CHANNELS * size * size;
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {expected} values for a 4x{size}x{size} patch, got {}",
                values.len()
            )));
        }
        let channels = Array3::from_shape_vec((BAYER_CHANNELS, size, size), values)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(channels)
    }

    pub fn size(&self) -> usize {
        self.channels.dim().1
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channels(&self) -> ArrayView3<'_, f32> {
        self.channels.view()
    }

    pub fn as_array(&self) -> &Array3<f32> {
        &self.channels
    }

    /// Flat C-order copy of the payload.
    pub fn to_flat(&self) -> Vec<f32> {
        self.channels.iter().copied().collect()
    }

    pub fn as_slice(&self) -> &[f32] {
        self.channels
            .as_slice()
            .expect("packed patches are stored in standard layout")
    }

    pub fn mean(&self) -> f64 {
        self.channels.iter().map(|&v| v as f64).sum::<f64>() / self.channels.len() as f64
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &PackedRawPatch) -> Result<PackedRawPatch> {
        if self.channels.dim() != other.channels.dim() {
            return Err(Error::Dimension(format!(
                "patch shapes differ: {:?} vs {:?}",
                self.channels.dim(),
                other.channels.dim()
            )));
        }
        Ok(PackedRawPatch {
            channels: &self.channels - &other.channels,
        })
    }

    pub fn add(&self, other: &PackedRawPatch) -> Result<PackedRawPatch> {
        if self.channels.dim() != other.channels.dim() {
            return Err(Error::Dimension(format!(
                "patch shapes differ: {:?} vs {:?}",
                self.channels.dim(),
                other.channels.dim()
            )));
        }
        Ok(PackedRawPatch {
            channels: &self.channels + &other.channels,
        })
    }
}

pub fn pack_bayer(mosaic: &RawMosaic) -> Result<PackedRawPatch> {
    let (h, w) = (mosaic.height(), mosaic.width());
    if h != w {
        return Err(Error::Dimension(format!(
            "packing expects a square mosaic, got {h}x{w}"
        )));
    }
    let v = mosaic.values();
    let mut out = Array3::zeros((BAYER_CHANNELS, h / 2, w / 2));
    for (c, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        out.slice_mut(s![c, .., ..])
            .assign(&v.slice(s![dy..;2, dx..;2]));
    }
    PackedRawPatch::new(out)
}

pub fn unpack_bayer(patch: &PackedRawPatch) -> Result<RawMosaic> {
    let n = patch.size();
    let mut out = Array2::zeros((2 * n, 2 * n));
    for (c, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        out.slice_mut(s![dy..;2, dx..;2])
            .assign(&patch.channels().slice(s![c, .., ..]));
    }
    RawMosaic::new(out)
}

/// Horizontal flip that keeps the RGGB phase.
///
/// Mirroring swaps the column parity, so one column is dropped on each side
/// of the mirrored mosaic: `out[y][x] = in[y][W - 2 - x]` for `x < W - 2`.
pub fn bayer_flip_h(mosaic: &RawMosaic) -> Result<RawMosaic> {
    let w = mosaic.width();
    if w < 4 {
        return Err(Error::Dimension(format!(
            "phase-preserving flip needs width >= 4, got {w}"
        )));
    }
    let flipped = mosaic.values().slice(s![.., 1..w - 1;-1]).to_owned();
    RawMosaic::new(flipped)
}

/// Square crop whose origin lies on an even row and column.
pub fn random_crop<R: Rng + ?Sized>(
    mosaic: &RawMosaic,
    size: usize,
    rng: &mut R,
) -> Result<RawMosaic> {
    let (h, w) = (mosaic.height(), mosaic.width());
    if size == 0 || !size.is_multiple_of(2) {
        return Err(Error::Dimension(format!("crop size must be even and positive, got {size}")));
    }
    if size > h || size > w {
        return Err(Error::Dimension(format!(
            "crop size {size} exceeds mosaic {h}x{w}"
        )));
    }
    let y0 = 2 * rng.random_range(0..=(h - size) / 2);
    let x0 = 2 * rng.random_range(0..=(w - size) / 2);
    RawMosaic::new(
        mosaic
            .values()
            .slice(s![y0..y0 + size, x0..x0 + size])
            .to_owned(),
    )
}
