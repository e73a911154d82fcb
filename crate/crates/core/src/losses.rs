//! Adversarial, feature-matching and triplet objectives.

use std::ops::{Add, Mul};

use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::networks::Discriminator;
use crate::{Error, Result};

const NORM_EPS: f64 = 1e-30;
const DIST_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_gp: f64,
    pub lambda_fm: f64,
    pub lambda_triplet: f64,
    pub margin_alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_gp: 10.0,
            lambda_fm: 1.0,
            lambda_triplet: 0.5,
            margin_alpha: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda_gp", self.lambda_gp),
            ("lambda_fm", self.lambda_fm),
            ("lambda_triplet", self.lambda_triplet),
            ("margin_alpha", self.margin_alpha),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// How the L1 feature distance is reduced over feature elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FmReduction {
    #[default]
    Sum,
    Mean,
}

/// Scores one sample per batch element, `[batch]`.
pub trait Critic {
    fn critic(&self, noise: &Tensor, clean: &Tensor) -> Result<Tensor>;
}

impl Critic for Discriminator {
    fn critic(&self, noise: &Tensor, clean: &Tensor) -> Result<Tensor> {
        Discriminator::critic(self, noise, clean, false)
    }
}

impl<F: Fn(&Tensor, &Tensor) -> Tensor> Critic for F {
    fn critic(&self, noise: &Tensor, clean: &Tensor) -> Result<Tensor> {
        Ok(self(noise, clean))
    }
}

/// Feature map used by the matching loss; must not train its own parameters.
pub trait FeatureExtractor {
    fn extract(&self, noise: &Tensor, clean: &Tensor) -> Result<Tensor>;
}

impl FeatureExtractor for Discriminator {
    fn extract(&self, noise: &Tensor, clean: &Tensor) -> Result<Tensor> {
        self.features(noise, clean, true)
    }
}

impl<F: Fn(&Tensor, &Tensor) -> Tensor> FeatureExtractor for F {
    fn extract(&self, noise: &Tensor, clean: &Tensor) -> Result<Tensor> {
        Ok(self(noise, clean))
    }
}

fn scalar_mean(t: &Tensor) -> Tensor {
    t.mean(t.kind())
}

/// Generator adversarial loss: the negated mean fake score.
pub fn adv_loss_g(scores_fake: &Tensor) -> Result<Tensor> {
    if scores_fake.numel() == 0 {
        return Err(Error::Argument("adversarial loss needs at least one score".into()));
    }
    Ok(-scalar_mean(scores_fake))
}

pub fn critic_loss(scores_fake: &Tensor, scores_real: &Tensor, gp: &Tensor, lambda_gp: f64) -> Tensor {
    scalar_mean(scores_fake) - scalar_mean(scores_real) + gp * lambda_gp
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::Dimension(format!("{what}: {:?} vs {:?}", a.size(), b.size())));
    }
    Ok(())
}

/// Penalty on the critic's input-gradient norm along random lines between
/// fake and real samples. The result is differentiable in the critic.
pub fn gradient_penalty<C: Critic + ?Sized, R: Rng + ?Sized>(
    critic: &C,
    fake_noise: &Tensor,
    real_noise: &Tensor,
    clean: &Tensor,
    rng: &mut R,
) -> Result<Tensor> {
    check_same(fake_noise, real_noise, "fake and real noise")?;
    let size = real_noise.size();
    let batch = *size
        .first()
        .ok_or_else(|| Error::Dimension("gradient penalty needs a batch dimension".into()))?;
    let u: Vec<f64> = (0..batch).map(|_| rng.random::<f64>()).collect();
    let mut u_shape = vec![batch];
    u_shape.extend(std::iter::repeat_n(1, size.len() - 1));
    let u = Tensor::from_slice(&u).to_kind(real_noise.kind()).reshape(&u_shape);
    let interp: Tensor = &u * real_noise.detach() + (1.0 - &u) * fake_noise.detach();
    let interp = interp.set_requires_grad(true);
    let scores = critic.critic(&interp, clean)?;
    let grad = if scores.requires_grad() {
        let grads = Tensor::f_run_backward(&[scores.sum(scores.kind())], &[&interp], true, true)
            .map_err(|e| Error::Capability(format!("critic is not differentiable: {e}")))?;
        grads.into_iter().next().expect("one input")
    } else {
        interp.zeros_like()
    };
    let dims: Vec<i64> = (1..size.len() as i64).collect();
    let sq = if dims.is_empty() {
        &grad * &grad
    } else {
        (&grad * &grad).sum_dim_intlist(dims.as_slice(), false, grad.kind())
    };
    // shifted so a zero gradient has norm exactly 0 while staying differentiable
    let norm = (sq + NORM_EPS).sqrt() - NORM_EPS.sqrt();
    Ok(scalar_mean(&(norm - 1.0).square()))
}

/// L1 distance between features of the fake noise and of the clean image
/// placed in both slots. Callers must pass an extractor that keeps its own
/// parameters out of the graph.
pub fn feature_matching_loss<F: FeatureExtractor + ?Sized>(
    extractor: &F,
    fake_noise: &Tensor,
    clean: &Tensor,
    reduction: FmReduction,
) -> Result<Tensor> {
    check_same(fake_noise, clean, "fake noise and clean")?;
    let fake = extractor.extract(fake_noise, clean)?;
    let real = extractor.extract(clean, clean)?.detach();
    Ok(feature_l1(&fake, &real, reduction))
}

/// Batch mean of per-sample L1 distances between two feature maps.
pub fn feature_l1(fake: &Tensor, real: &Tensor, reduction: FmReduction) -> Tensor {
    let abs = (fake - real).abs();
    let batch = abs.size()[0];
    let per_sample = abs.reshape([batch, -1]);
    let per_sample = match reduction {
        FmReduction::Sum => per_sample.sum_dim_intlist([1i64].as_slice(), false, abs.kind()),
        FmReduction::Mean => per_sample.mean_dim([1i64].as_slice(), false, abs.kind()),
    };
    scalar_mean(&per_sample)
}

fn euclidean(a: &Tensor, b: &Tensor) -> Tensor {
    let d = a - b;
    ((&d * &d).sum_dim_intlist([-1i64].as_slice(), false, d.kind()) + DIST_EPS).sqrt()
}

/// Hinge on unsquared Euclidean distances, averaged over the batch.
/// Latents are `[batch, dim]` or a single `[dim]` vector.
pub fn triplet_loss(anchor: &Tensor, positive: &Tensor, negative: &Tensor, alpha: f64) -> Result<Tensor> {
    check_same(anchor, positive, "anchor and positive")?;
    check_same(anchor, negative, "anchor and negative")?;
    let hinge = (euclidean(anchor, positive) - euclidean(anchor, negative) + alpha).clamp_min(0.0);
    Ok(hinge.mean(hinge.kind()))
}

pub fn full_generator_loss<T>(adv: T, fm: T, triplet: T, weights: &LossWeights) -> T
where
    T: Add<Output = T> + Mul<f64, Output = T>,
{
    adv + fm * weights.lambda_fm + triplet * weights.lambda_triplet
}

/// Extracts a finite scalar or reports which term went non-finite.
pub fn finite_value(name: &str, t: &Tensor) -> Result<f64> {
    let v = t.to_kind(Kind::Double).double_value(&[]);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{name} is {v}")))
    }
}
