use rand::Rng;
use tch::{Kind, Tensor};

use super::layers::{ConvLayer, ConvSpec, Norm};
use super::tensor::{latent_from_tensor, patches_to_tensor};
use super::{LatentVector, NetConfig, Network};
use crate::data_model::PackedRawPatch;
use crate::{Error, Result};

pub const MIN_INPUT: i64 = 8;

/// Maps a noisy image to a spatially global camera latent.
#[derive(Debug)]
pub struct Encoder {
    config: NetConfig,
    kind: Kind,
    pub layers: Vec<ConvLayer>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(config: &NetConfig, kind: Kind, rng: &mut R) -> Self {
        let b = config.base_channels;
        // instance statistics right before the pool would erase the noise scale
        let last = if config.literal_head_norm { Norm::SnIn } else { Norm::Sn };
        let specs = [
            ConvSpec::conv("e1", 7, 4, b, 1, 3),
            ConvSpec::conv("e2", 4, b, 2 * b, 2, 1).norm(Norm::SnIn),
            ConvSpec::conv("e3", 4, 2 * b, 4 * b, 2, 1).norm(Norm::SnIn),
            ConvSpec::conv("e4", 4, 4 * b, 8 * b, 2, 1).norm(last),
        ];
        let layers = specs.into_iter().map(|s| ConvLayer::new(s, kind, rng)).collect();
        Self {
            config: config.clone(),
            kind,
            layers,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    /// Network-domain noisy batch `[batch, 4, h, w]` to `[batch, latent_dim]`.
    pub fn forward(&self, noisy: &Tensor) -> Result<Tensor> {
        self.forward_traced(noisy, None)
    }

    pub(crate) fn forward_traced(
        &self,
        noisy: &Tensor,
        mut trace: Option<&mut Vec<(String, Vec<i64>)>>,
    ) -> Result<Tensor> {
        let size = noisy.size();
        if size.len() != 4 || size[1] != 4 {
            return Err(Error::Dimension(format!("encoder input must be [batch, 4, h, w], got {size:?}")));
        }
        if size[2] < MIN_INPUT || size[3] < MIN_INPUT {
            return Err(Error::Dimension(format!(
                "encoder input {}x{} is smaller than {MIN_INPUT}x{MIN_INPUT}",
                size[2], size[3]
            )));
        }
        let k = self.config.encoder_highpass;
        let mut x = if k > 0 {
            noisy - noisy.avg_pool2d([k, k], [1, 1], [k / 2, k / 2], false, false, None::<i64>)
        } else {
            noisy.shallow_clone()
        };
        for layer in &self.layers {
            x = layer.forward(&x, false);
            if let Some(tr) = trace.as_deref_mut() {
                tr.push((layer.spec.name.clone(), x.size()));
            }
        }
        let pooled = x.mean_dim([2i64, 3].as_slice(), false, x.kind());
        if let Some(tr) = trace {
            tr.push(("pool".to_string(), pooled.size()));
        }
        Ok(pooled)
    }

    /// Encodes one data-domain noisy patch.
    pub fn encode(&self, noisy: &PackedRawPatch) -> Result<LatentVector> {
        let x = super::clean_to_net(&patches_to_tensor(&[noisy], self.kind)?);
        let v = tch::no_grad(|| self.forward(&x))?;
        Ok(latent_from_tensor(&v)?.remove(0))
    }
}

impl Network for Encoder {
    fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.named_params(&mut out));
        out
    }

    fn named_buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.named_buffers(&mut out));
        out
    }

    fn power_iterate(&self) {
        self.layers.iter().for_each(ConvLayer::power_iterate);
    }
}
