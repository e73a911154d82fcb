use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use tch::{Kind, Tensor};

use super::sampler::{sample_batch, SamplerIndex, TrainingSample};
use super::TrainConfig;
use crate::checkpoint::{prefixed, Checkpoint};
use crate::data_model::{derive_seed, Dataset, PackedRawPatch};
use crate::evaluation::{gaussian_baseline_sigma, model_kl_eval, KlConfig, LatentChoice, NoiseModel};
use crate::init_noise::{sample_init_noise, InitNoiseConfig, InitNoiseMode};
use crate::losses::{adv_loss_g, critic_loss, feature_l1, finite_value, full_generator_loss, gradient_penalty, triplet_loss};
use crate::networks::{clean_to_net, noise_to_net, patches_to_tensor, Discriminator, Encoder, Generator, Network};
use crate::optim::Adam;
use crate::{Error, Result};

pub const TRAIN_KIND: Kind = Kind::Float;

/// Loss values of one training step; disabled terms are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepMetrics {
    pub l_adv: f64,
    pub l_fm: Option<f64>,
    pub l_triplet: Option<f64>,
    pub l_critic: f64,
    pub gp: f64,
    pub l_g: f64,
}

/// Network-domain tensors for one batch.
struct BatchTensors {
    clean: Tensor,
    real_noise: Tensor,
    init_noise: Tensor,
    noisy_j: Tensor,
    noisy_k: Tensor,
    noisy_l: Option<Tensor>,
}

/// Generator, critic and encoder with their optimizers and rng stream.
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub encoder: Encoder,
    opt_g: Adam,
    opt_d: Adam,
    rng: ChaCha8Rng,
    init_noise: InitNoiseConfig,
    pub epoch: usize,
    pub step: u64,
}

fn stack(patches: Vec<&PackedRawPatch>) -> Result<Tensor> {
    patches_to_tensor(&patches, TRAIN_KIND)
}

impl Trainer {
    /// Fresh networks seeded from `config.seed`. The dataset is only used to
    /// resolve a level-matched Gaussian sigma.
    pub fn new(config: TrainConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        let mut init_noise = config.init_noise;
        if init_noise.mode == InitNoiseMode::Gaussian && init_noise.gaussian_sigma == 0.0 {
            init_noise.gaussian_sigma = gaussian_baseline_sigma(data)?;
        }
        init_noise.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init"));
        let generator = Generator::new(&config.net, TRAIN_KIND, &mut init_rng);
        let discriminator = Discriminator::new(&config.net, TRAIN_KIND, &mut init_rng);
        let encoder = Encoder::new(&config.net, TRAIN_KIND, &mut init_rng);
        let mut g_params = prefixed("g.", generator.named_parameters());
        g_params.extend(prefixed("e.", encoder.named_parameters()));
        let mut opt_g = Adam::new(g_params, config.lr, config.beta1, config.beta2);
        opt_g.scale_lr("e.", config.encoder_lr_scale);
        let opt_d = Adam::new(
            prefixed("d.", discriminator.named_parameters()),
            config.lr,
            config.beta1,
            config.beta2,
        );
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "train")),
            config,
            generator,
            discriminator,
            encoder,
            opt_g,
            opt_d,
            init_noise,
            epoch: 0,
            step: 0,
        })
    }

    pub fn init_noise(&self) -> &InitNoiseConfig {
        &self.init_noise
    }

    pub fn sampler(&self, data: &Dataset) -> Result<SamplerIndex> {
        SamplerIndex::new(data, crate::data_model::Split::Train, self.config.use_triplet)
    }

    fn tensors(&mut self, data: &Dataset, batch: &[TrainingSample]) -> Result<BatchTensors> {
        let mut init = Vec::with_capacity(batch.len());
        for s in batch {
            init.push(sample_init_noise(&data.pairs[s.i].clean, &s.nlf, &self.init_noise, &mut self.rng)?);
        }
        let noise: Vec<PackedRawPatch> = batch.iter().map(|s| s.real_noise(data)).collect();
        let noisy = |f: fn(&TrainingSample) -> usize| stack(batch.iter().map(|s| &data.pairs[f(s)].noisy).collect());
        let noisy_l = if self.config.use_triplet {
            let l: Option<Vec<&PackedRawPatch>> = batch.iter().map(|s| s.l.map(|l| &data.pairs[l].noisy)).collect();
            let l = l.ok_or_else(|| Error::Config("triplet training needs negatives from another camera".into()))?;
            Some(clean_to_net(&stack(l)?))
        } else {
            None
        };
        Ok(BatchTensors {
            clean: clean_to_net(&stack(batch.iter().map(|s| &data.pairs[s.i].clean).collect())?),
            real_noise: noise_to_net(&stack(noise.iter().collect())?),
            init_noise: noise_to_net(&stack(init.iter().collect())?),
            noisy_j: clean_to_net(&noisy(|s| s.j)?),
            noisy_k: clean_to_net(&noisy(|s| s.k)?),
            noisy_l,
        })
    }

    fn zero_latent(&self, batch: i64) -> Tensor {
        Tensor::zeros([batch, self.generator.latent_dim()], (TRAIN_KIND, tch::Device::Cpu))
    }

    /// One step on a freshly sampled batch.
    pub fn step(&mut self, data: &Dataset, index: &SamplerIndex) -> Result<StepMetrics> {
        let batch = sample_batch(data, index, self.config.batch_size, &mut self.rng);
        self.train_batch(data, &batch)
    }

    /// Critic updates followed by one joint generator/encoder update.
    pub fn train_batch(&mut self, data: &Dataset, batch: &[TrainingSample]) -> Result<StepMetrics> {
        let t = self.tensors(data, batch)?;
        let (l_critic, gp) = self.critic_step(&t)?;
        let m = self.generator_step(&t)?;
        self.step += 1;
        Ok(StepMetrics { l_critic, gp, ..m })
    }

    fn critic_step(&mut self, t: &BatchTensors) -> Result<(f64, f64)> {
        let n = t.clean.size()[0];
        let latent = if self.config.use_encoder {
            tch::no_grad(|| self.encoder.forward(&t.noisy_j))?
        } else {
            self.zero_latent(n)
        };
        let fake = tch::no_grad(|| self.generator.forward(&t.init_noise, &t.clean, &latent))?.final_noise;
        let mut values = (0.0, 0.0);
        for _ in 0..self.config.critic_steps {
            self.discriminator.power_iterate();
            let scores = self
                .discriminator
                .forward(&Tensor::cat(&[&fake, &t.real_noise], 0), &Tensor::cat(&[&t.clean, &t.clean], 0), false)?
                .scores;
            let (s_fake, s_real) = (scores.narrow(0, 0, n), scores.narrow(0, n, n));
            let gp = gradient_penalty(&self.discriminator, &fake, &t.real_noise, &t.clean, &mut self.rng)?;
            let loss = critic_loss(&s_fake, &s_real, &gp, self.config.weights.lambda_gp);
            values = (finite_value("critic loss", &loss)?, finite_value("gradient penalty", &gp)?);
            self.opt_d.zero_grad();
            loss.backward();
            self.opt_d.step();
        }
        Ok(values)
    }

    fn generator_step(&mut self, t: &BatchTensors) -> Result<StepMetrics> {
        let n = t.clean.size()[0];
        let weights = self.config.effective_weights();
        self.generator.power_iterate();
        let (latent, positive, negative) = if self.config.use_triplet {
            self.encoder.power_iterate();
            let negative = t.noisy_l.as_ref().expect("negatives sampled with triplets");
            let all = self.encoder.forward(&Tensor::cat(&[&t.noisy_j, &t.noisy_k, negative], 0))?;
            (all.narrow(0, 0, n), Some(all.narrow(0, n, n)), Some(all.narrow(0, 2 * n, n)))
        } else if self.config.use_encoder {
            self.encoder.power_iterate();
            (self.encoder.forward(&t.noisy_j)?, None, None)
        } else {
            (self.zero_latent(n), None, None)
        };
        let out = self.generator.forward(&t.init_noise, &t.clean, &latent)?;
        let d_out = self.discriminator.forward(&out.final_noise, &t.clean, true)?;
        let adv = adv_loss_g(&d_out.scores)?;
        let zero = || Tensor::zeros([], (TRAIN_KIND, tch::Device::Cpu));
        let fm = if self.config.use_fm {
            let real = tch::no_grad(|| self.discriminator.features(&t.clean, &t.clean, true))?;
            feature_l1(&d_out.features, &real, self.config.fm_reduction)
        } else {
            zero()
        };
        let trip = match (&positive, &negative) {
            (Some(p), Some(q)) => triplet_loss(&latent, p, q, weights.margin_alpha)?,
            _ => zero(),
        };
        let l_adv = finite_value("adversarial loss", &adv)?;
        let l_fm = self.config.use_fm.then(|| finite_value("feature matching loss", &fm)).transpose()?;
        let l_triplet = self
            .config
            .use_triplet
            .then(|| finite_value("triplet loss", &trip))
            .transpose()?;
        let l_g = full_generator_loss(adv, fm, trip, &weights);
        let l_g_value = finite_value("generator loss", &l_g)?;
        self.opt_g.zero_grad();
        l_g.backward();
        self.opt_g.step();
        Ok(StepMetrics {
            l_adv,
            l_fm,
            l_triplet,
            l_critic: 0.0,
            gp: 0.0,
            l_g: l_g_value,
        })
    }

    /// Mean per-patch KL of generated noise on `targets` with matched latents.
    pub fn validation_kl(&self, data: &Dataset, targets: &[usize], seed: u64) -> Result<f64> {
        let model = NoiseModel::Learned {
            generator: &self.generator,
            encoder: self.config.use_encoder.then_some(&self.encoder),
            latent: if self.config.use_encoder {
                LatentChoice::Matched
            } else {
                LatentChoice::Zero
            },
        };
        Ok(model_kl_eval(&model, data, targets, &KlConfig::default(), seed)?.mean)
    }

    fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut t = prefixed("g.", self.generator.named_parameters());
        t.extend(prefixed("g.", self.generator.named_buffers()));
        t.extend(prefixed("d.", self.discriminator.named_parameters()));
        t.extend(prefixed("d.", self.discriminator.named_buffers()));
        t.extend(prefixed("e.", self.encoder.named_parameters()));
        t.extend(prefixed("e.", self.encoder.named_buffers()));
        t.extend(self.opt_g.state("opt_g."));
        t.extend(self.opt_d.state("opt_d."));
        t
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rng = serde_json::to_value(&self.rng).map_err(|e| Error::json(path, e))?;
        Checkpoint {
            config_hash: self.config.hash(),
            epoch: self.epoch,
            step: self.step,
            meta: json!({
                "config": self.config,
                "rng": rng,
                "init_noise": self.init_noise,
            }),
            tensors: self.state_tensors(),
        }
        .save(path)
    }

    /// Restores a checkpoint written by [`Trainer::save`] with the same config.
    pub fn restore(&mut self, path: &Path) -> Result<()> {
        let ck = Checkpoint::load(path)?;
        if ck.config_hash != self.config.hash() {
            return Err(Error::Config(format!(
                "{} was written with a different configuration",
                path.display()
            )));
        }
        let mut nets = prefixed("g.", self.generator.named_parameters());
        nets.extend(prefixed("g.", self.generator.named_buffers()));
        nets.extend(prefixed("d.", self.discriminator.named_parameters()));
        nets.extend(prefixed("d.", self.discriminator.named_buffers()));
        nets.extend(prefixed("e.", self.encoder.named_parameters()));
        nets.extend(prefixed("e.", self.encoder.named_buffers()));
        ck.restore_into("", &nets, path)?;
        self.opt_g.restore("opt_g.", &ck, path)?;
        self.opt_d.restore("opt_d.", &ck, path)?;
        self.rng = serde_json::from_value(ck.meta["rng"].clone()).map_err(|e| Error::json(path, e))?;
        self.epoch = ck.epoch;
        self.step = ck.step;
        Ok(())
    }
}

/// Generator and encoder from a training checkpoint, for inference.
pub fn load_models(path: &Path) -> Result<(TrainConfig, Generator, Encoder)> {
    let ck = Checkpoint::load(path)?;
    let config: TrainConfig =
        serde_json::from_value(ck.meta["config"].clone()).map_err(|e| Error::json(path, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let generator = Generator::new(&config.net, TRAIN_KIND, &mut rng);
    let encoder = Encoder::new(&config.net, TRAIN_KIND, &mut rng);
    let mut targets = prefixed("g.", generator.named_parameters());
    targets.extend(prefixed("g.", generator.named_buffers()));
    targets.extend(prefixed("e.", encoder.named_parameters()));
    targets.extend(prefixed("e.", encoder.named_buffers()));
    ck.restore_into("", &targets, path)?;
    Ok((config, generator, encoder))
}
