use rand::Rng;
use tch::{Kind, Tensor};

use super::layers::{Activation, ConvLayer, ConvSpec, Norm, ResidualBlock};
use super::tensor::{clean_to_net, noise_from_net, noise_to_net, patches_from_tensor, patches_to_tensor};
use super::{LatentVector, NetConfig, Network};
use crate::data_model::PackedRawPatch;
use crate::{Error, Result};

/// Number of stride-2 stages; inputs must be divisible by `2^DEPTH`.
const DEPTH: u32 = 5;

/// U-Net that refines initial noise conditioned on a clean image and a camera latent.
#[derive(Debug)]
pub struct Generator {
    config: NetConfig,
    kind: Kind,
    pub encoder: Vec<ConvLayer>,
    pub residual: Vec<ResidualBlock>,
    pub decoder: Vec<ConvLayer>,
}

/// Network-domain outputs; `final_noise = init_noise + residual`.
#[derive(Debug)]
pub struct GeneratorOutput {
    pub final_noise: Tensor,
    pub residual: Tensor,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(config: &NetConfig, kind: Kind, rng: &mut R) -> Self {
        let b = config.base_channels;
        let widths = [8, b, 2 * b, 4 * b, 8 * b, 8 * b];
        let encoder = (0..5)
            .map(|i| {
                let norm = if i == 0 { Norm::None } else { Norm::SnIn };
                let spec = ConvSpec::conv(&format!("c{}", i + 1), 4, widths[i], widths[i + 1], 2, 1).norm(norm);
                ConvLayer::new(spec, kind, rng)
            })
            .collect();
        let latent = config.latent_dim();
        let res_widths = [8 * b, 8 * b, 8 * b + latent, 8 * b + latent];
        let residual = res_widths
            .iter()
            .enumerate()
            .map(|(i, &c)| ResidualBlock::new(&format!("res{}", i + 1), c, kind, rng))
            .collect();
        let dec_io = [
            (8 * b + latent, 8 * b),
            (16 * b, 4 * b),
            (8 * b, 2 * b),
            (4 * b, b),
            (2 * b, 4),
        ];
        let decoder = dec_io
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                let last = i == dec_io.len() - 1;
                let name = if last { "out_g".to_string() } else { format!("t{}", i + 1) };
                let mut spec = ConvSpec::transposed(&name, cin, cout).norm(Norm::SnIn);
                if last {
                    spec = spec.activation(Activation::Tanh);
                    if !config.literal_head_norm {
                        spec = spec.norm(Norm::None);
                    }
                }
                let mut layer = ConvLayer::new(spec, kind, rng);
                if last && !config.literal_head_norm {
                    layer.zero_();
                }
                layer
            })
            .collect();
        Self {
            config: config.clone(),
            kind,
            encoder,
            residual,
            decoder,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn latent_dim(&self) -> i64 {
        self.config.latent_dim()
    }

    /// All arguments are network-domain tensors: `init_noise` and `clean` are
    /// `[batch, 4, h, w]`, `latent` is `[batch, latent_dim]`.
    pub fn forward(&self, init_noise: &Tensor, clean: &Tensor, latent: &Tensor) -> Result<GeneratorOutput> {
        self.forward_traced(init_noise, clean, latent, None)
    }

    pub(crate) fn forward_traced(
        &self,
        init_noise: &Tensor,
        clean: &Tensor,
        latent: &Tensor,
        mut trace: Option<&mut Vec<(String, Vec<i64>)>>,
    ) -> Result<GeneratorOutput> {
        let size = clean.size();
        if size.len() != 4 || size[1] != 4 {
            return Err(Error::Dimension(format!("clean must be [batch, 4, h, w], got {size:?}")));
        }
        if init_noise.size() != size {
            return Err(Error::Dimension(format!(
                "init noise {:?} does not match clean {size:?}",
                init_noise.size()
            )));
        }
        let m = 1 << DEPTH;
        if size[2] % m != 0 || size[3] % m != 0 || size[2] == 0 || size[3] == 0 {
            return Err(Error::Dimension(format!(
                "spatial size {}x{} is not a positive multiple of {m}",
                size[2], size[3]
            )));
        }
        let expected = [size[0], self.latent_dim()];
        if latent.size() != expected {
            return Err(Error::Dimension(format!(
                "latent {:?} does not match expected {expected:?}",
                latent.size()
            )));
        }
        let mut record = |name: &str, t: &Tensor| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push((name.to_string(), t.size()));
            }
        };

        let mut x = Tensor::cat(&[init_noise, clean], 1);
        let mut skips = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            x = layer.forward(&x, false);
            record(&layer.spec.name, &x);
            skips.push(x.shallow_clone());
        }
        for (i, block) in self.residual.iter().enumerate() {
            if i == 2 {
                let (bh, bw) = (x.size()[2], x.size()[3]);
                let tiled = latent.view([size[0], -1, 1, 1]).expand([-1, -1, bh, bw], false);
                x = Tensor::cat(&[&x, &tiled], 1);
            }
            x = block.forward(&x, false);
            record(&block.name, &x);
        }
        for (i, layer) in self.decoder.iter().enumerate() {
            if i > 0 {
                x = Tensor::cat(&[&x, &skips[skips.len() - 1 - i]], 1);
            }
            x = layer.forward(&x, false);
            record(&layer.spec.name, &x);
        }
        if self.config.residual_scale != 1.0 {
            x = x.g_mul_scalar(self.config.residual_scale);
        }
        Ok(GeneratorOutput {
            final_noise: init_noise + &x,
            residual: x,
        })
    }

    /// Data-domain convenience wrapper around [`Generator::forward`] for one patch.
    pub fn generate(
        &self,
        clean: &PackedRawPatch,
        init_noise: &PackedRawPatch,
        latent: &LatentVector,
    ) -> Result<(PackedRawPatch, PackedRawPatch)> {
        let c = clean_to_net(&patches_to_tensor(&[clean], self.kind)?);
        let n = noise_to_net(&patches_to_tensor(&[init_noise], self.kind)?);
        let v = super::latent_to_tensor(&[latent], self.kind)?;
        let out = tch::no_grad(|| self.forward(&n, &c, &v))?;
        let final_noise = patches_from_tensor(&noise_from_net(&out.final_noise))?.remove(0);
        let residual = patches_from_tensor(&noise_from_net(&out.residual))?.remove(0);
        Ok((final_noise, residual))
    }

    fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.encoder
            .iter()
            .chain(self.residual.iter().flat_map(|b| [&b.conv1, &b.conv2]))
            .chain(self.decoder.iter())
    }
}

impl Network for Generator {
    fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.layers().for_each(|l| l.named_params(&mut out));
        out
    }

    fn named_buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.layers().for_each(|l| l.named_buffers(&mut out));
        out
    }

    fn power_iterate(&self) {
        self.layers().for_each(ConvLayer::power_iterate);
    }
}
