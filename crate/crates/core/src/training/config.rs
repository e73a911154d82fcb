use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::init_noise::{InitNoiseConfig, InitNoiseMode};
use crate::losses::{FmReduction, LossWeights};
use crate::networks::NetConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Step-size multiplier for the camera encoder's parameters.
    pub encoder_lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub critic_steps: usize,
    pub weights: LossWeights,
    pub fm_reduction: FmReduction,
    pub init_noise: InitNoiseConfig,
    pub use_fm: bool,
    pub use_encoder: bool,
    pub use_triplet: bool,
    pub seed: u64,
    pub net: NetConfig,
    /// Held-out patches scored after every epoch.
    pub val_patches: usize,
    /// Keep a numbered checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Overrides the default of one pass over the training pairs.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            encoder_lr_scale: 1.0,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 64,
            epochs: 30,
            critic_steps: 1,
            weights: LossWeights::default(),
            fm_reduction: FmReduction::Sum,
            init_noise: InitNoiseConfig::default(),
            use_fm: true,
            use_encoder: true,
            use_triplet: true,
            seed: 0,
            net: NetConfig::default(),
            val_patches: 128,
            checkpoint_every: 10,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.encoder_lr_scale > 0.0 && self.encoder_lr_scale.is_finite()) {
            return Err(Error::Config(format!(
                "encoder_lr_scale must be positive, got {}",
                self.encoder_lr_scale
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 || self.critic_steps == 0 {
            return Err(Error::Config("batch_size, epochs and critic_steps must be positive".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        if self.use_triplet && !self.use_encoder {
            return Err(Error::Config("use_triplet requires use_encoder".into()));
        }
        self.weights.validate()?;
        // a zero Gaussian sigma is resolved to the level-matched value at training time
        let auto_sigma = self.init_noise.mode == InitNoiseMode::Gaussian && self.init_noise.gaussian_sigma == 0.0;
        if !auto_sigma {
            self.init_noise.validate()?;
        }
        self.net.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Applies `key=value` overrides; see [`apply_json_overrides`].
    pub fn apply_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        apply_json_overrides(self, overrides)
    }

    /// Stable digest of the full configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..16])
    }

    /// Loss weights with disabled terms zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            lambda_fm: if self.use_fm { self.weights.lambda_fm } else { 0.0 },
            lambda_triplet: if self.use_triplet { self.weights.lambda_triplet } else { 0.0 },
            ..self.weights.clone()
        }
    }
}

/// Applies `key=value` overrides to any serializable config; nested keys use
/// dots (`weights.lambda_fm`). Values parse as JSON, falling back to a plain
/// string.
pub fn apply_json_overrides<T, S>(config: &T, overrides: &[S]) -> Result<T>
where
    T: Serialize + DeserializeOwned,
    S: AsRef<str>,
{
    let mut value = serde_json::to_value(config).expect("config serializes");
    for o in overrides {
        let o = o.as_ref();
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("override {o:?} is not key=value")))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut value;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::Argument(format!("unknown config key {key:?}")))?;
        }
        *slot = parsed;
    }
    serde_json::from_value(value).map_err(|e| Error::Argument(format!("invalid override: {e}")))
}
