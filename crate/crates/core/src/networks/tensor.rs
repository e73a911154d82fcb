use ndarray::Array3;
use tch::{Kind, Tensor};

use crate::data_model::PackedRawPatch;
use crate::{Error, Result};

/// Camera embedding produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f32>);

impl LatentVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn distance(&self, other: &LatentVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| f64::from(a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Stacks patches into a `[batch, 4, n, n]` tensor.
pub fn patches_to_tensor(patches: &[&PackedRawPatch], kind: Kind) -> Result<Tensor> {
    let first = patches
        .first()
        .ok_or_else(|| Error::Argument("cannot build a tensor from zero patches".into()))?;
    let n = first.size();
    let mut flat = Vec::with_capacity(patches.len() * first.len());
    for p in patches {
        if p.size() != n {
            return Err(Error::Dimension(format!("patch sizes differ: {} vs {}", p.size(), n)));
        }
        flat.extend_from_slice(p.as_slice());
    }
    Ok(Tensor::from_slice(&flat)
        .reshape([patches.len() as i64, 4, n as i64, n as i64])
        .to_kind(kind))
}

pub fn patches_from_tensor(t: &Tensor) -> Result<Vec<PackedRawPatch>> {
    let size = t.size();
    if size.len() != 4 || size[1] != 4 || size[2] != size[3] {
        return Err(Error::Dimension(format!("expected [batch, 4, n, n], got {size:?}")));
    }
    let n = size[2] as usize;
    let flat: Vec<f32> = Vec::try_from(t.detach().to_kind(Kind::Float).contiguous().view(-1))?;
    flat.chunks(4 * n * n)
        .map(|c| PackedRawPatch::new(Array3::from_shape_vec((4, n, n), c.to_vec()).expect("chunk size")))
        .collect()
}

pub fn latent_to_tensor(latents: &[&LatentVector], kind: Kind) -> Result<Tensor> {
    let dim = latents
        .first()
        .ok_or_else(|| Error::Argument("no latent vectors".into()))?
        .len();
    let mut flat = Vec::with_capacity(dim * latents.len());
    for l in latents {
        if l.len() != dim {
            return Err(Error::Dimension(format!("latent lengths differ: {} vs {dim}", l.len())));
        }
        flat.extend_from_slice(l.as_slice());
    }
    Ok(Tensor::from_slice(&flat).reshape([latents.len() as i64, dim as i64]).to_kind(kind))
}

pub fn latent_from_tensor(t: &Tensor) -> Result<Vec<LatentVector>> {
    let size = t.size();
    if size.len() != 2 {
        return Err(Error::Dimension(format!("expected [batch, dim], got {size:?}")));
    }
    let flat: Vec<f32> = Vec::try_from(t.detach().to_kind(Kind::Float).contiguous().view(-1))?;
    Ok(flat.chunks(size[1] as usize).map(|c| LatentVector(c.to_vec())).collect())
}

/// Maps clean intensities from `[0, 1]` to `[-1, 1]`.
pub fn clean_to_net(clean: &Tensor) -> Tensor {
    clean * 2.0 - 1.0
}

/// Noise shares the clean image's scale factor but not its offset.
pub fn noise_to_net(noise: &Tensor) -> Tensor {
    noise * 2.0
}

pub fn noise_from_net(noise: &Tensor) -> Tensor {
    noise * 0.5
}
