//! Central finite differences against autograd on tiny float64 networks.

use noisegen::losses::{
    adv_loss_g, feature_l1, full_generator_loss, gradient_penalty, triplet_loss, FmReduction, LossWeights,
};
use noisegen::networks::{Discriminator, Encoder, Generator, NetConfig, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::{Kind, Tensor};

use crate::models::randn;
use crate::{all, Outcome};

const STEP: f64 = 1e-6;
const TOLERANCE: f64 = 1e-3;
const PROBES_PER_TENSOR: usize = 2;

struct Nets {
    g: Generator,
    d: Discriminator,
    e: Encoder,
    clean: Tensor,
    init: Tensor,
    real: Tensor,
    noisy: [Tensor; 3],
}

impl Nets {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = NetConfig::with_base(2);
        let g = Generator::new(&cfg, Kind::Double, &mut rng);
        let d = Discriminator::new(&cfg, Kind::Double, &mut rng);
        let e = Encoder::new(&cfg, Kind::Double, &mut rng);
        // move every weight off its initial value so no gradient is trivially zero
        tch::no_grad(|| {
            for (_, p) in g.named_parameters().into_iter().chain(d.named_parameters()).chain(e.named_parameters()) {
                let mut p = p;
                let _ = p.f_add_(&randn(&p.size(), 0.05, &mut rng)).unwrap();
            }
        });
        let mut x = || randn(&[2, 4, 32, 32], 0.5, &mut rng);
        Self {
            clean: x(),
            init: x(),
            real: x(),
            noisy: [x(), x(), x()],
            g,
            d,
            e,
        }
    }

    fn latents(&self) -> Tensor {
        self.e.forward(&Tensor::cat(&self.noisy, 0)).unwrap()
    }

    fn fake(&self, latent: &Tensor) -> Tensor {
        self.g.forward(&self.init, &self.clean, latent).unwrap().final_noise
    }

    fn adv(&self) -> Tensor {
        let v = self.latents().narrow(0, 0, 2);
        adv_loss_g(&self.d.forward(&self.fake(&v), &self.clean, true).unwrap().scores).unwrap()
    }

    fn fm(&self) -> Tensor {
        let v = self.latents().narrow(0, 0, 2);
        let fake = self.d.features(&self.fake(&v), &self.clean, true).unwrap();
        let real = tch::no_grad(|| self.d.features(&self.clean, &self.clean, true)).unwrap();
        feature_l1(&fake, &real, FmReduction::Sum)
    }

    fn triplet(&self) -> Tensor {
        let v = self.latents();
        // a wide margin keeps every hinge active
        triplet_loss(&v.narrow(0, 0, 2), &v.narrow(0, 2, 2), &v.narrow(0, 4, 2), 10.0).unwrap()
    }

    fn penalty(&self) -> Tensor {
        let fake = tch::no_grad(|| self.fake(&self.latents().narrow(0, 0, 2)));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        gradient_penalty(&self.d, &fake, &self.real, &self.clean, &mut rng).unwrap()
    }

    fn full(&self) -> Tensor {
        full_generator_loss(self.adv(), self.fm(), self.triplet(), &LossWeights::default())
    }

    fn zero_grads(&self) {
        for (_, p) in self.g.named_parameters().into_iter().chain(self.d.named_parameters()).chain(self.e.named_parameters()) {
            let mut g = p.grad();
            if g.defined() {
                let _ = g.zero_();
            }
        }
    }
}

/// Relative L2 error between autograd and central differences over a few
/// probed coordinates of every parameter tensor.
fn compare(nets: &Nets, params: Vec<(String, Tensor)>, loss: fn(&Nets) -> Tensor, seed: u64) -> (f64, usize) {
    nets.zero_grads();
    loss(nets).backward();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut diff, mut norm, mut probes) = (0.0f64, 0.0f64, 0usize);
    for (_, p) in &params {
        let grad = p.grad();
        let flat = p.view(-1);
        let n = flat.size()[0];
        for _ in 0..PROBES_PER_TENSOR {
            let k = rng.random_range(0..n);
            let analytic = if grad.defined() {
                grad.view(-1).double_value(&[k])
            } else {
                0.0
            };
            let at = |delta: f64| {
                tch::no_grad(|| {
                    let _ = flat.get(k).f_add_scalar_(delta).unwrap();
                });
                let v = loss(nets).double_value(&[]);
                tch::no_grad(|| {
                    let _ = flat.get(k).f_sub_scalar_(delta).unwrap();
                });
                v
            };
            let numeric = (at(STEP) - at(-STEP)) / (2.0 * STEP);
            diff += (analytic - numeric).powi(2);
            norm += numeric.powi(2).max(analytic.powi(2));
            probes += 1;
        }
    }
    ((diff / norm.max(1e-300)).sqrt(), probes)
}

fn with_prefix(prefix: &str, net: &dyn Network) -> Vec<(String, Tensor)> {
    net.named_parameters()
        .into_iter()
        .map(|(n, t)| (format!("{prefix}{n}"), t))
        .collect()
}

pub fn gradient_suite() -> Outcome {
    let nets = Nets::new();
    let ge = || {
        let mut v = with_prefix("g.", &nets.g);
        v.extend(with_prefix("e.", &nets.e));
        v
    };
    type Case<'a> = (&'a str, Vec<(String, Tensor)>, fn(&Nets) -> Tensor);
    let cases: [Case; 5] = [
        ("adversarial", ge(), Nets::adv),
        ("feature matching", with_prefix("g.", &nets.g), Nets::fm),
        ("triplet", with_prefix("e.", &nets.e), Nets::triplet),
        ("gradient penalty", with_prefix("d.", &nets.d), Nets::penalty),
        ("full generator loss", ge(), Nets::full),
    ];
    let mut parts = Vec::new();
    for (i, (name, params, loss)) in cases.into_iter().enumerate() {
        let (err, probes) = compare(&nets, params, loss, i as u64);
        parts.push(Outcome::check(err < TOLERANCE, format!("{name} rel err {err:.1e} over {probes} probes")));
    }

    nets.zero_grads();
    nets.fm().backward();
    let leaked: f64 = nets
        .d
        .named_parameters()
        .iter()
        .map(|(_, p)| {
            let g = p.grad();
            if g.defined() {
                g.abs().sum(Kind::Double).double_value(&[])
            } else {
                0.0
            }
        })
        .sum();
    parts.push(Outcome::check(leaked == 0.0, format!("feature matching gradient into D {leaked}")));
    all(parts)
}
