//! Desk-scale reproduction of the orderings: three virtual cameras, two
//! thirty-epoch training runs (with and without the triplet term), the two
//! statistical baselines and two downstream denoisers.

use std::time::Instant;

use noisegen::data_model::{Dataset, Split, SynthConfig};
use noisegen::denoiser::{
    eval_denoiser, mixed_sample_is_real, train_denoiser, DenoiseRegime, DenoiserConfig, LearnedSource, PairSource,
};
use noisegen::evaluation::{
    evaluation_subset, gaussian_baseline_sigma, latent_separation as separation, model_kl_eval,
    shuffled_separation, KlConfig, LatentChoice, ModelKl, NoiseModel,
};
use noisegen::losses::FmReduction;
use noisegen::networks::{LatentVector, NetConfig};
use noisegen::training::{train, TrainConfig, Trainer};

use crate::{all, Outcome};

const TEST_PATCHES: usize = 384;
const LATENT_PATCHES: usize = 100;
const LATENTS_PER_CAMERA: usize = 64;
const MAX_RUN_SECONDS: f64 = 2.0 * 3600.0;

/// Training protocol of the desk runs.
pub fn desk_config(use_triplet: bool) -> TrainConfig {
    let mut c = TrainConfig {
        lr: 5e-5,
        encoder_lr_scale: 20.0,
        epochs: 30,
        critic_steps: 5,
        fm_reduction: FmReduction::Mean,
        use_triplet,
        net: NetConfig {
            residual_scale: 0.05,
            encoder_highpass: 5,
            ..NetConfig::with_base(8)
        },
        ..TrainConfig::default()
    };
    c.seed = 0;
    c
}

pub struct Run {
    pub trainer: Trainer,
    pub seconds: f64,
    pub kl: ModelKl,
}

#[derive(Default)]
pub struct Fixture {
    data: Option<Result<Dataset, String>>,
    baselines: Option<(ModelKl, ModelKl)>,
    full: Option<Result<Run, String>>,
    ablated: Option<Result<Run, String>>,
}

fn dataset() -> Result<Dataset, String> {
    let cfg = SynthConfig::with_presets(
        3,
        vec!["s0".into(), "s1".into()],
        vec!["t0".into()],
        500,
        vec![1.0, 2.0, 4.0, 8.0],
        0,
    );
    let (manifest, pairs) = noisegen::data_model::synthesize(&cfg).map_err(|e| e.to_string())?;
    Dataset::from_parts(manifest, pairs).map_err(|e| e.to_string())
}

fn learned(trainer: &Trainer, latent: LatentChoice) -> NoiseModel<'_> {
    NoiseModel::Learned {
        generator: &trainer.generator,
        encoder: Some(&trainer.encoder),
        latent,
    }
}

fn run(data: &Dataset, use_triplet: bool) -> Result<Run, String> {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = train(&desk_config(use_triplet), data, out.path(), false).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let curve: Vec<String> = outcome.history.iter().map(|h| format!("{:.4}", h.val_kl)).collect();
    println!("  run triplet={use_triplet}: {seconds:.0}s, val_kl by epoch {}", curve.join(" "));
    let targets = evaluation_subset(data, Split::Test, TEST_PATCHES);
    let kl = model_kl_eval(&learned(&outcome.trainer, LatentChoice::Matched), data, &targets, &KlConfig::default(), 1)
        .map_err(|e| e.to_string())?;
    Ok(Run {
        trainer: outcome.trainer,
        seconds,
        kl,
    })
}

impl Fixture {
    fn data(&mut self) -> Result<&Dataset, String> {
        self.data.get_or_insert_with(dataset).as_ref().map_err(Clone::clone)
    }

    fn baselines(&mut self) -> Result<&(ModelKl, ModelKl), String> {
        if self.baselines.is_none() {
            let data = self.data()?;
            let targets = evaluation_subset(data, Split::Test, TEST_PATCHES);
            let sigma = gaussian_baseline_sigma(data).map_err(|e| e.to_string())?;
            let cfg = KlConfig::default();
            let eval = |m: NoiseModel| model_kl_eval(&m, data, &targets, &cfg, 1).map_err(|e| e.to_string());
            let pair = (eval(NoiseModel::Gaussian { sigma })?, eval(NoiseModel::PoissonGaussian)?);
            self.baselines = Some(pair);
        }
        Ok(self.baselines.as_ref().expect("just set"))
    }

    fn full(&mut self) -> Result<&Run, String> {
        if self.full.is_none() {
            let r = run(self.data()?, true);
            self.full = Some(r);
        }
        self.full.as_ref().expect("just set").as_ref().map_err(Clone::clone)
    }

    fn ablated(&mut self) -> Result<&Run, String> {
        if self.ablated.is_none() {
            let r = run(self.data()?, false);
            self.ablated = Some(r);
        }
        self.ablated.as_ref().expect("just set").as_ref().map_err(Clone::clone)
    }
}

fn built(run: &Option<Result<Run, String>>) -> &Trainer {
    &run.as_ref().expect("built").as_ref().expect("succeeded").trainer
}

macro_rules! attempt {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return Outcome::fail(e),
        }
    };
}

pub fn baseline_ordering(f: &mut Fixture) -> Outcome {
    let (g, pg) = attempt!(f.baselines()).clone();
    let run = attempt!(f.full());
    let learned = run.kl.mean;
    all(vec![
        Outcome::check(
            learned < pg.mean && pg.mean < g.mean,
            format!("KL learned {learned:.5} < poisson-gaussian {:.5} < gaussian {:.5}", pg.mean, g.mean),
        ),
        Outcome::check(run.seconds <= MAX_RUN_SECONDS, format!("training {:.0}s", run.seconds)),
    ])
}

pub fn triplet_ablation(f: &mut Fixture) -> Outcome {
    let full = attempt!(f.full()).kl.mean;
    let ablated = attempt!(f.ablated()).kl.mean;
    Outcome::check(full <= ablated, format!("KL with triplet {full:.5}, without {ablated:.5}"))
}

pub fn matched_latent(f: &mut Fixture) -> Outcome {
    attempt!(f.full());
    let data = attempt!(f.data.as_ref().expect("built").as_ref().map_err(Clone::clone));
    let trainer = built(&f.full);
    let targets = evaluation_subset(data, Split::Test, LATENT_PATCHES);
    let cfg = KlConfig::default();
    let eval = |c| model_kl_eval(&learned(trainer, c), data, &targets, &cfg, 2).map_err(|e| e.to_string());
    let matched = attempt!(eval(LatentChoice::Matched)).mean;
    let mismatched = attempt!(eval(LatentChoice::Mismatched)).mean;
    Outcome::check(
        matched < mismatched,
        format!("KL matched {matched:.5} vs mismatched {mismatched:.5} over {} patches", targets.len()),
    )
}

fn latents(trainer: &Trainer, data: &Dataset) -> Result<(Vec<LatentVector>, Vec<String>), String> {
    let (mut v, mut labels) = (Vec::new(), Vec::new());
    for (camera, idx) in data.by_camera(Split::Test) {
        let step = (idx.len() / LATENTS_PER_CAMERA).max(1);
        for &i in idx.iter().step_by(step).take(LATENTS_PER_CAMERA) {
            v.push(trainer.encoder.encode(&data.pairs[i].noisy).map_err(|e| e.to_string())?);
            labels.push(camera.clone());
        }
    }
    Ok((v, labels))
}

pub fn latent_separation(f: &mut Fixture) -> Outcome {
    attempt!(f.full());
    attempt!(f.ablated());
    let data = attempt!(f.data.as_ref().expect("built").as_ref().map_err(Clone::clone));
    let (v, labels) = attempt!(latents(built(&f.full), data));
    let with = attempt!(separation(&v, &labels).map_err(|e| e.to_string()));
    let (v, labels) = attempt!(latents(built(&f.ablated), data));
    let without = attempt!(separation(&v, &labels).map_err(|e| e.to_string()));
    let shuffled = attempt!(shuffled_separation(&v, &labels, 20, 3).map_err(|e| e.to_string()));
    let rel = without / shuffled;
    all(vec![
        Outcome::check(with > 2.0, format!("ratio with triplet {with:.3}")),
        Outcome::check(
            (0.5..=1.5).contains(&rel),
            format!("without triplet {without:.3} vs shuffled {shuffled:.3} (x{rel:.2})"),
        ),
    ])
}

pub fn denoiser_ordering(f: &mut Fixture) -> Outcome {
    attempt!(f.full());
    let data = attempt!(f.data.as_ref().expect("built").as_ref().map_err(Clone::clone));
    let trainer = built(&f.full);
    let source = || LearnedSource {
        generator: &trainer.generator,
        encoder: Some(&trainer.encoder),
    };

    let pattern = |seed| -> Result<Vec<bool>, String> {
        let mut s = PairSource::new(DenoiseRegime::LearnedPlusReal, data, Some(source()), None, seed)
            .map_err(|e| e.to_string())?;
        let mut flags = Vec::new();
        for _ in 0..10 {
            flags.extend(s.next_batch(12).map_err(|e| e.to_string())?.into_iter().map(|p| p.2));
        }
        Ok(flags)
    };
    let a = attempt!(pattern(5));
    let b = attempt!(pattern(6));
    let interleave = a == b && a.iter().enumerate().all(|(t, &r)| r == mixed_sample_is_real(t as u64));
    let real = a.iter().filter(|&&r| r).count();

    let cfg = DenoiserConfig::default();
    let targets = evaluation_subset(data, Split::Test, TEST_PATCHES);
    let score = |regime, learned| -> Result<f64, String> {
        let (model, _) = train_denoiser(regime, learned, data, &cfg).map_err(|e| e.to_string())?;
        Ok(eval_denoiser(&model, data, &targets).map_err(|e| e.to_string())?.overall.psnr)
    };
    let with_learned = attempt!(score(DenoiseRegime::LearnedModel, Some(source())));
    let with_gaussian = attempt!(score(DenoiseRegime::Gaussian, None));
    all(vec![
        Outcome::check(
            with_learned >= with_gaussian + 0.5,
            format!("PSNR learned {with_learned:.2} dB vs gaussian {with_gaussian:.2} dB"),
        ),
        Outcome::check(interleave, format!("5:1 interleave, {real} real of {}", a.len())),
    ])
}
