use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tch::Tensor;

use super::kl::{histogram_kl, KlConfig};
use super::latent::csv_error;
use crate::data_model::{Dataset, PackedRawPatch, Split};
use crate::init_noise::{level_matched_sigma, sample_init_noise, InitNoiseConfig};
use crate::networks::{
    clean_to_net, noise_from_net, noise_to_net, patches_from_tensor, patches_to_tensor, Encoder, Generator,
};
use crate::{Error, Result};

const EVAL_BATCH: usize = 32;

/// Where the encoder input for each evaluated patch comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentChoice {
    /// Another noisy patch of the same camera.
    Matched,
    /// A noisy patch of a different camera.
    Mismatched,
    /// One fixed noisy patch (by pair index) for every target.
    Fixed(usize),
    /// The all-zero latent.
    Zero,
}

#[derive(Debug, Clone, Copy)]
pub enum NoiseModel<'a> {
    Gaussian {
        sigma: f64,
    },
    PoissonGaussian,
    Learned {
        generator: &'a Generator,
        encoder: Option<&'a Encoder>,
        latent: LatentChoice,
    },
}

impl NoiseModel<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::Gaussian { .. } => "gaussian",
            NoiseModel::PoissonGaussian => "poisson_gaussian",
            NoiseModel::Learned { .. } => "learned",
        }
    }
}

/// Level-matched sigma of the Gaussian baseline over the training split.
pub fn gaussian_baseline_sigma(data: &Dataset) -> Result<f64> {
    level_matched_sigma(
        data.indices(Split::Train)
            .into_iter()
            .map(|i| (&data.pairs[i].clean, data.nlf(i))),
    )
}

fn latent_source<R: rand::Rng>(
    choice: LatentChoice,
    target: usize,
    data: &Dataset,
    pool: &[usize],
    rng: &mut R,
) -> Result<Option<usize>> {
    let camera = &data.pairs[target].key.camera;
    let pick = |same: bool, rng: &mut R| {
        let candidates: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&p| p != target && (data.pairs[p].key.camera == *camera) == same)
            .collect();
        candidates.choose(rng).copied().ok_or_else(|| {
            Error::Data(format!(
                "no {} latent source for camera {camera}",
                if same { "same-camera" } else { "other-camera" }
            ))
        })
    };
    Ok(match choice {
        LatentChoice::Matched => Some(pick(true, rng)?),
        LatentChoice::Mismatched => Some(pick(false, rng)?),
        LatentChoice::Fixed(i) => Some(i),
        LatentChoice::Zero => None,
    })
}

/// Draws one synthetic noise patch per target using `pool` for latent sources.
pub fn synthesize_noise(
    model: &NoiseModel,
    data: &Dataset,
    targets: &[usize],
    pool: &[usize],
    seed: u64,
) -> Result<Vec<PackedRawPatch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *model {
        NoiseModel::Gaussian { sigma } => {
            let cfg = InitNoiseConfig::gaussian(sigma);
            targets
                .iter()
                .map(|&i| sample_init_noise(&data.pairs[i].clean, &data.nlf(i), &cfg, &mut rng))
                .collect()
        }
        NoiseModel::PoissonGaussian => {
            let cfg = InitNoiseConfig::default();
            targets
                .iter()
                .map(|&i| sample_init_noise(&data.pairs[i].clean, &data.nlf(i), &cfg, &mut rng))
                .collect()
        }
        NoiseModel::Learned {
            generator,
            encoder,
            latent,
        } => {
            let kind = generator.kind();
            let cfg = InitNoiseConfig::default();
            let mut out = Vec::with_capacity(targets.len());
            for chunk in targets.chunks(EVAL_BATCH) {
                let mut init = Vec::with_capacity(chunk.len());
                let mut sources = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    init.push(sample_init_noise(&data.pairs[i].clean, &data.nlf(i), &cfg, &mut rng)?);
                    sources.push(latent_source(latent, i, data, pool, &mut rng)?);
                }
                let clean: Vec<&PackedRawPatch> = chunk.iter().map(|&i| &data.pairs[i].clean).collect();
                let clean = clean_to_net(&patches_to_tensor(&clean, kind)?);
                let init = noise_to_net(&patches_to_tensor(&init.iter().collect::<Vec<_>>(), kind)?);
                let v = match (encoder, sources.iter().all(Option::is_some)) {
                    (Some(e), true) => {
                        let noisy: Vec<&PackedRawPatch> =
                            sources.iter().map(|s| &data.pairs[s.unwrap()].noisy).collect();
                        let noisy = clean_to_net(&patches_to_tensor(&noisy, kind)?);
                        tch::no_grad(|| e.forward(&noisy))?
                    }
                    _ => Tensor::zeros([chunk.len() as i64, generator.latent_dim()], (kind, tch::Device::Cpu)),
                };
                let res = tch::no_grad(|| generator.forward(&init, &clean, &v))?;
                out.extend(patches_from_tensor(&noise_from_net(&res.final_noise))?);
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KlRow {
    pub model: String,
    pub camera: String,
    pub scene: String,
    pub kl_mean: f64,
    pub kl_std: f64,
    pub n_patches: usize,
}

#[derive(Debug, Clone)]
pub struct ModelKl {
    pub model: String,
    /// `(pair index, KL)` per evaluated patch.
    pub per_patch: Vec<(usize, f64)>,
    pub mean: f64,
    pub std: f64,
    pub clipping_warning: bool,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ModelKl {
    pub fn camera_means(&self, data: &Dataset) -> BTreeMap<String, f64> {
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for &(i, kl) in &self.per_patch {
            groups.entry(data.pairs[i].key.camera.clone()).or_default().push(kl);
        }
        groups.into_iter().map(|(c, v)| (c, mean_std(&v).0)).collect()
    }

    /// One row per (camera, scene), per camera and overall.
    pub fn rows(&self, data: &Dataset) -> Vec<KlRow> {
        let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for &(i, kl) in &self.per_patch {
            let k = &data.pairs[i].key;
            groups.entry((k.camera.clone(), k.scene.clone())).or_default().push(kl);
            groups.entry((k.camera.clone(), "all".into())).or_default().push(kl);
            groups.entry(("all".into(), "all".into())).or_default().push(kl);
        }
        groups
            .into_iter()
            .map(|((camera, scene), v)| {
                let (kl_mean, kl_std) = mean_std(&v);
                KlRow {
                    model: self.model.clone(),
                    camera,
                    scene,
                    kl_mean,
                    kl_std,
                    n_patches: v.len(),
                }
            })
            .collect()
    }
}

/// Mean per-patch KL of a noise model against the real noise of `targets`.
/// Latent sources for learned models are drawn from `targets` as well.
pub fn model_kl_eval(
    model: &NoiseModel,
    data: &Dataset,
    targets: &[usize],
    cfg: &KlConfig,
    seed: u64,
) -> Result<ModelKl> {
    if targets.is_empty() {
        return Err(Error::Argument("no patches to evaluate".into()));
    }
    let synthetic = synthesize_noise(model, data, targets, targets, seed)?;
    let mut per_patch = Vec::with_capacity(targets.len());
    let mut clipping_warning = false;
    for (&i, fake) in targets.iter().zip(&synthetic) {
        let real = data.pairs[i].noise();
        let v = histogram_kl(real.as_slice(), fake.as_slice(), cfg)?;
        clipping_warning |= v.clipping_warning();
        per_patch.push((i, v.kl));
    }
    let kls: Vec<f64> = per_patch.iter().map(|p| p.1).collect();
    let (mean, std) = mean_std(&kls);
    Ok(ModelKl {
        model: model.name().to_string(),
        per_patch,
        mean,
        std,
        clipping_warning,
    })
}

/// `n` test indices spread evenly over the split.
pub fn evaluation_subset(data: &Dataset, split: Split, n: usize) -> Vec<usize> {
    let all = data.indices(split);
    if n == 0 || n >= all.len() {
        return all;
    }
    (0..n).map(|k| all[k * all.len() / n]).collect()
}

pub fn write_kl_csv(path: &Path, rows: &[KlRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    crate::data_model::atomic_write(path, &text)
}
