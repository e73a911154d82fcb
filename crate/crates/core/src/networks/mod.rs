//! Generator, discriminator and camera encoder.

mod audit;
mod discriminator;
mod encoder;
mod generator;
pub mod layers;
mod tensor;

pub use audit::{audit_discriminator, audit_encoder, audit_generator, expected_discriminator, expected_encoder,
    expected_generator, LayerRow};
pub use discriminator::{Discriminator, DiscriminatorOutput};
pub use encoder::Encoder;
pub use generator::{Generator, GeneratorOutput};
pub use tensor::{
    clean_to_net, latent_from_tensor, latent_to_tensor, noise_from_net, noise_to_net, patches_from_tensor,
    patches_to_tensor, LatentVector,
};

use serde::{Deserialize, Serialize};

/// Width and head options shared by the three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Channels of the first layer; every other width is a multiple of it.
    pub base_channels: i64,
    /// Keeps SN-IN on the output layer of every network.
    pub literal_head_norm: bool,
    /// Amplitude of the generator residual, `residual = scale * tanh(.)`.
    pub residual_scale: f64,
    /// Odd window of a local mean subtracted from the encoder input; 0 disables.
    pub encoder_highpass: i64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            literal_head_norm: false,
            residual_scale: 1.0,
            encoder_highpass: 0,
        }
    }
}

impl NetConfig {
    pub fn with_base(base_channels: i64) -> Self {
        Self {
            base_channels,
            ..Self::default()
        }
    }

    pub fn latent_dim(&self) -> i64 {
        8 * self.base_channels
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.base_channels < 1 {
            return Err(crate::Error::Config(format!(
                "base_channels must be positive, got {}",
                self.base_channels
            )));
        }
        if !(self.residual_scale > 0.0 && self.residual_scale <= 1.0) {
            return Err(crate::Error::Config(format!(
                "residual_scale must lie in (0, 1], got {}",
                self.residual_scale
            )));
        }
        if self.encoder_highpass < 0 || (self.encoder_highpass > 0 && self.encoder_highpass % 2 == 0) {
            return Err(crate::Error::Config(format!(
                "encoder_highpass must be 0 or an odd window, got {}",
                self.encoder_highpass
            )));
        }
        Ok(())
    }
}

/// Common parameter plumbing for optimizers and checkpoints.
pub trait Network {
    fn named_parameters(&self) -> Vec<(String, tch::Tensor)>;

    /// Non-trainable state such as power-iteration vectors.
    fn named_buffers(&self) -> Vec<(String, tch::Tensor)>;

    /// Advances every spectral-norm estimate by one power step.
    fn power_iterate(&self);

    fn parameter_count(&self) -> i64 {
        self.named_parameters().iter().map(|(_, t)| t.numel() as i64).sum()
    }

    fn zero_grad(&self) {
        for (_, p) in self.named_parameters() {
            let mut g = p.grad();
            if g.defined() {
                let _ = g.detach_().zero_();
            }
        }
    }
}
