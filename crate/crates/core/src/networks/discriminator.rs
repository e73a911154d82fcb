use rand::Rng;
use tch::{Kind, Tensor};

use super::layers::{Activation, ConvLayer, ConvSpec, Norm};
use super::{NetConfig, Network};
use crate::{Error, Result};

/// Patch critic conditioned on the clean image.
#[derive(Debug)]
pub struct Discriminator {
    config: NetConfig,
    kind: Kind,
    pub layers: Vec<ConvLayer>,
}

#[derive(Debug)]
pub struct DiscriminatorOutput {
    /// `[batch, 1, h/16, w/16]` realness scores.
    pub scores: Tensor,
    /// `[batch, 4*base, h/8, w/8]` penultimate features.
    pub features: Tensor,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(config: &NetConfig, kind: Kind, rng: &mut R) -> Self {
        let b = config.base_channels;
        let head_norm = if config.literal_head_norm { Norm::SnIn } else { Norm::Sn };
        let specs = [
            ConvSpec::conv("d1", 4, 8, b, 2, 1),
            ConvSpec::conv("d2", 4, b, 2 * b, 2, 1).norm(Norm::SnIn),
            ConvSpec::conv("out_df", 4, 2 * b, 4 * b, 2, 1).norm(Norm::SnIn),
            ConvSpec::conv("out_d", 4, 4 * b, 1, 2, 1)
                .norm(head_norm)
                .activation(Activation::None),
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

    /// Network-domain `noise` and `clean`, both `[batch, 4, h, w]`.
    ///
    /// With `frozen` set, no gradient reaches the discriminator's own
    /// parameters while inputs stay differentiable.
    pub fn forward(&self, noise: &Tensor, clean: &Tensor, frozen: bool) -> Result<DiscriminatorOutput> {
        self.forward_traced(noise, clean, frozen, None)
    }

    pub(crate) fn forward_traced(
        &self,
        noise: &Tensor,
        clean: &Tensor,
        frozen: bool,
        mut trace: Option<&mut Vec<(String, Vec<i64>)>>,
    ) -> Result<DiscriminatorOutput> {
        let features = self.features_traced(noise, clean, frozen, trace.as_deref_mut())?;
        let head = &self.layers[3];
        let scores = head.forward(&features, frozen);
        if let Some(tr) = trace {
            tr.push((head.spec.name.clone(), scores.size()));
        }
        Ok(DiscriminatorOutput { scores, features })
    }

    /// Feature extractor formed by dropping the final layer.
    pub fn features(&self, noise: &Tensor, clean: &Tensor, frozen: bool) -> Result<Tensor> {
        self.features_traced(noise, clean, frozen, None)
    }

    fn features_traced(
        &self,
        noise: &Tensor,
        clean: &Tensor,
        frozen: bool,
        mut trace: Option<&mut Vec<(String, Vec<i64>)>>,
    ) -> Result<Tensor> {
        let size = clean.size();
        if noise.size() != size {
            return Err(Error::Dimension(format!(
                "noise {:?} does not match clean {size:?}",
                noise.size()
            )));
        }
        if size.len() != 4 || size[1] != 4 || size[2] % 16 != 0 || size[3] % 16 != 0 || size[2] == 0 {
            return Err(Error::Dimension(format!(
                "discriminator input must be [batch, 4, 16k, 16k], got {size:?}"
            )));
        }
        let mut x = Tensor::cat(&[noise, clean], 1);
        for layer in &self.layers[..3] {
            x = layer.forward(&x, frozen);
            if let Some(tr) = trace.as_deref_mut() {
                tr.push((layer.spec.name.clone(), x.size()));
            }
        }
        Ok(x)
    }

    /// Per-sample critic value: the mean of its patch scores, `[batch]`.
    pub fn critic(&self, noise: &Tensor, clean: &Tensor, frozen: bool) -> Result<Tensor> {
        let out = self.forward(noise, clean, frozen)?;
        Ok(out.scores.mean_dim([1i64, 2, 3].as_slice(), false, out.scores.kind()))
    }
}

impl Network for Discriminator {
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
