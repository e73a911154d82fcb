//! Nine-layer residual CNN denoiser and its training regimes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tch::{Kind, Tensor};

use crate::checkpoint::Checkpoint;
use crate::data_model::{derive_seed, Dataset, PackedRawPatch, Split};
use crate::evaluation::{csv_error, gaussian_baseline_sigma, psnr, ssim, synthesize_noise, LatentChoice, NoiseModel};
use crate::networks::layers::{normal_tensor, Activation, ConvLayer, ConvSpec, Norm};
use crate::networks::{patches_from_tensor, patches_to_tensor, Encoder, Generator};
use crate::optim::Adam;
use crate::{Error, Result};

const KIND: Kind = Kind::Float;
/// Synthetic samples per real sample in the mixed regime.
pub const MIX_SYNTHETIC: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseRegime {
    Gaussian,
    PoissonGaussian,
    LearnedModel,
    RealOnly,
    LearnedPlusReal,
}

impl DenoiseRegime {
    pub fn needs_generator(self) -> bool {
        matches!(self, Self::LearnedModel | Self::LearnedPlusReal)
    }
}

impl std::str::FromStr for DenoiseRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Argument(format!("unknown regime {s:?}")))
    }
}

/// Whether training sample number `t` of the mixed regime is a real pair.
pub fn mixed_sample_is_real(t: u64) -> bool {
    t % (MIX_SYNTHETIC as u64 + 1) == MIX_SYNTHETIC as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub width: i64,
    pub depth: usize,
    /// Instance normalization in the hidden layers.
    pub hidden_norm: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Restricts training pairs to one camera.
    pub camera: Option<String>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            width: 64,
            depth: 9,
            hidden_norm: true,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 16,
            steps: 1000,
            seed: 0,
            camera: None,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.depth < 2 || self.batch_size == 0 {
            return Err(Error::Config("denoiser width, depth and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("denoiser lr must be positive".into()));
        }
        Ok(())
    }
}

/// Predicts the noise of a noisy image; the output is `noisy - prediction`.
#[derive(Debug)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub layers: Vec<ConvLayer>,
}

impl Denoiser {
    /// He-normal hidden weights and a zero head.
    pub fn new<R: Rng + ?Sized>(config: &DenoiserConfig, rng: &mut R) -> Self {
        let w = config.width;
        let mut layers = Vec::with_capacity(config.depth);
        layers.push(ConvLayer::new(
            ConvSpec::conv("l1", 3, 4, w, 1, 1).activation(Activation::Relu),
            KIND,
            rng,
        ));
        let norm = if config.hidden_norm { Norm::In } else { Norm::None };
        for i in 2..config.depth {
            let spec = ConvSpec::conv(&format!("l{i}"), 3, w, w, 1, 1)
                .norm(norm)
                .activation(Activation::Relu);
            layers.push(ConvLayer::new(spec, KIND, rng));
        }
        let mut head = ConvLayer::new(
            ConvSpec::conv(&format!("l{}", config.depth), 3, w, 4, 1, 1).activation(Activation::None),
            KIND,
            rng,
        );
        head.zero_();
        layers.push(head);
        for l in &mut layers[..config.depth - 1] {
            let shape = l.spec.weight_shape();
            let fan_in = shape[1..].iter().product::<i64>() as f64;
            let w = normal_tensor(&shape, (2.0 / fan_in).sqrt(), KIND, rng);
            tch::no_grad(|| l.weight.copy_(&w));
        }
        Self {
            config: config.clone(),
            layers,
        }
    }

    /// Predicted noise for a `[batch, 4, h, w]` data-domain batch.
    pub fn predict_noise(&self, noisy: &Tensor) -> Tensor {
        self.layers.iter().fold(noisy.shallow_clone(), |x, l| l.forward(&x, false))
    }

    pub fn forward(&self, noisy: &Tensor) -> Tensor {
        noisy - self.predict_noise(noisy)
    }

    pub fn denoise(&self, noisy: &PackedRawPatch) -> Result<PackedRawPatch> {
        Ok(self.denoise_batch(&[noisy])?.remove(0))
    }

    pub fn denoise_batch(&self, noisy: &[&PackedRawPatch]) -> Result<Vec<PackedRawPatch>> {
        let x = patches_to_tensor(noisy, KIND)?;
        patches_from_tensor(&tch::no_grad(|| self.forward(&x)))
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.named_params(&mut out));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint {
            config_hash: String::new(),
            epoch: 0,
            step: 0,
            meta: json!({ "denoiser": self.config }),
            tensors: self.named_parameters(),
        }
        .save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let config: DenoiserConfig =
            serde_json::from_value(ck.meta["denoiser"].clone()).map_err(|e| Error::json(path, e))?;
        let d = Self::new(&config, &mut ChaCha8Rng::seed_from_u64(0));
        ck.restore_into("", &d.named_parameters(), path)?;
        Ok(d)
    }
}

/// Trained noise model used by the learned regimes.
#[derive(Debug, Clone, Copy)]
pub struct LearnedSource<'a> {
    pub generator: &'a Generator,
    pub encoder: Option<&'a Encoder>,
}

/// Produces training pairs for a regime; counts sampled pairs by origin.
pub struct PairSource<'a> {
    regime: DenoiseRegime,
    data: &'a Dataset,
    pool: Vec<usize>,
    learned: Option<LearnedSource<'a>>,
    gaussian_sigma: f64,
    rng: ChaCha8Rng,
    pub samples_drawn: u64,
    pub synthetic_drawn: u64,
    pub real_drawn: u64,
}

impl<'a> PairSource<'a> {
    pub fn new(
        regime: DenoiseRegime,
        data: &'a Dataset,
        learned: Option<LearnedSource<'a>>,
        camera: Option<&str>,
        seed: u64,
    ) -> Result<Self> {
        if regime.needs_generator() && learned.is_none() {
            return Err(Error::Config(format!("regime {regime:?} needs a generator checkpoint")));
        }
        let pool: Vec<usize> = data
            .indices(Split::Train)
            .into_iter()
            .filter(|&i| camera.is_none_or(|c| data.pairs[i].key.camera == c))
            .collect();
        if pool.is_empty() {
            return Err(Error::Data("no training pairs for the denoiser".into()));
        }
        let gaussian_sigma = if regime == DenoiseRegime::Gaussian {
            gaussian_baseline_sigma(data)?
        } else {
            0.0
        };
        Ok(Self {
            regime,
            data,
            pool,
            learned,
            gaussian_sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
            samples_drawn: 0,
            synthetic_drawn: 0,
            real_drawn: 0,
        })
    }

    /// `(clean, noisy, is_real)` for the next `n` samples of the stream.
    pub fn next_batch(&mut self, n: usize) -> Result<Vec<(PackedRawPatch, PackedRawPatch, bool)>> {
        let mut picks = Vec::with_capacity(n);
        for _ in 0..n {
            let idx = *self.pool.choose(&mut self.rng).expect("non-empty pool");
            let real = match self.regime {
                DenoiseRegime::RealOnly => true,
                DenoiseRegime::LearnedPlusReal => mixed_sample_is_real(self.samples_drawn),
                _ => false,
            };
            self.samples_drawn += 1;
            picks.push((idx, real));
        }
        let synth: Vec<usize> = picks.iter().filter(|p| !p.1).map(|p| p.0).collect();
        let noise = if synth.is_empty() {
            Vec::new()
        } else {
            let model = match self.regime {
                DenoiseRegime::Gaussian => NoiseModel::Gaussian {
                    sigma: self.gaussian_sigma,
                },
                DenoiseRegime::PoissonGaussian => NoiseModel::PoissonGaussian,
                _ => {
                    let l = self.learned.expect("checked at construction");
                    NoiseModel::Learned {
                        generator: l.generator,
                        encoder: l.encoder,
                        latent: if l.encoder.is_some() {
                            LatentChoice::Matched
                        } else {
                            LatentChoice::Zero
                        },
                    }
                }
            };
            let seed = self.rng.random();
            synthesize_noise(&model, self.data, &synth, &self.pool, seed)?
        };
        let mut noise = noise.into_iter();
        let mut out = Vec::with_capacity(n);
        for (idx, real) in picks {
            let pair = &self.data.pairs[idx];
            if real {
                self.real_drawn += 1;
                out.push((pair.clean.clone(), pair.noisy.clone(), true));
            } else {
                self.synthetic_drawn += 1;
                let noisy = pair.clean.add(&noise.next().expect("one noise per synthetic pick"))?;
                out.push((pair.clean.clone(), noisy, false));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DenoiseTrainLog {
    pub losses: Vec<f64>,
    pub synthetic_samples: u64,
    pub real_samples: u64,
}

/// L2 training on the noise residual with pairs from `regime`.
pub fn train_denoiser(
    regime: DenoiseRegime,
    learned: Option<LearnedSource>,
    data: &Dataset,
    config: &DenoiserConfig,
) -> Result<(Denoiser, DenoiseTrainLog)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "denoiser-init"));
    let model = Denoiser::new(config, &mut rng);
    let mut source = PairSource::new(
        regime,
        data,
        learned,
        config.camera.as_deref(),
        derive_seed(config.seed, "denoiser-data"),
    )?;
    let mut opt = Adam::new(model.named_parameters(), config.lr, config.beta1, config.beta2);
    let mut log = DenoiseTrainLog::default();
    for step in 0..config.steps {
        let batch = source.next_batch(config.batch_size)?;
        let clean: Vec<&PackedRawPatch> = batch.iter().map(|b| &b.0).collect();
        let noisy: Vec<&PackedRawPatch> = batch.iter().map(|b| &b.1).collect();
        let clean = patches_to_tensor(&clean, KIND)?;
        let noisy = patches_to_tensor(&noisy, KIND)?;
        let target = &noisy - &clean;
        let loss = (model.predict_noise(&noisy) - target).square().mean(KIND);
        let value = crate::losses::finite_value("denoiser loss", &loss)
            .map_err(|e| Error::NonFinite(format!("{e} at step {step}")))?;
        opt.zero_grad();
        loss.backward();
        opt.step();
        log.losses.push(value);
    }
    log.synthetic_samples = source.synthetic_drawn;
    log.real_samples = source.real_drawn;
    Ok((model, log))
}

#[derive(Debug, Clone, Serialize)]
pub struct DenoiseScore {
    pub camera: String,
    pub psnr: f64,
    pub ssim: f64,
    pub n_patches: usize,
}

#[derive(Debug, Clone)]
pub struct DenoiseEval {
    pub per_camera: Vec<DenoiseScore>,
    pub overall: DenoiseScore,
}

/// Scores any batch denoising function on `targets`.
pub fn eval_with<F>(denoise: F, data: &Dataset, targets: &[usize]) -> Result<DenoiseEval>
where
    F: Fn(&[&PackedRawPatch]) -> Result<Vec<PackedRawPatch>>,
{
    if targets.is_empty() {
        return Err(Error::Argument("empty denoiser test set".into()));
    }
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut all = Vec::with_capacity(targets.len());
    for chunk in targets.chunks(32) {
        let noisy: Vec<&PackedRawPatch> = chunk.iter().map(|&i| &data.pairs[i].noisy).collect();
        let restored = denoise(&noisy)?;
        for (&i, r) in chunk.iter().zip(&restored) {
            let clean = &data.pairs[i].clean;
            let s = (psnr(r, clean, 1.0)?, ssim(r, clean)?);
            groups.entry(data.pairs[i].key.camera.clone()).or_default().push(s);
            all.push(s);
        }
    }
    let score = |camera: String, v: &[(f64, f64)]| DenoiseScore {
        camera,
        psnr: v.iter().map(|s| s.0).sum::<f64>() / v.len() as f64,
        ssim: v.iter().map(|s| s.1).sum::<f64>() / v.len() as f64,
        n_patches: v.len(),
    };
    Ok(DenoiseEval {
        per_camera: groups.iter().map(|(c, v)| score(c.clone(), v)).collect(),
        overall: score("all".into(), &all),
    })
}

pub fn eval_denoiser(model: &Denoiser, data: &Dataset, targets: &[usize]) -> Result<DenoiseEval> {
    eval_with(|b| model.denoise_batch(b), data, targets)
}

pub fn write_denoise_csv(path: &Path, regime: &str, eval: &DenoiseEval) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        regime: &'a str,
        camera: &'a str,
        psnr: f64,
        ssim: f64,
        n_patches: usize,
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for s in eval.per_camera.iter().chain(std::iter::once(&eval.overall)) {
        w.serialize(Row {
            regime,
            camera: &s.camera,
            psnr: s.psnr,
            ssim: s.ssim,
            n_patches: s.n_patches,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
