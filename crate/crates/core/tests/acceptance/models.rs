use std::time::Instant;

use ndarray::Array3;
use noisegen::data_model::{NoiseLevelFunction, PackedRawPatch};
use noisegen::evaluation::{histogram_kl, KlConfig};
use noisegen::init_noise::{sample_init_noise, InitNoiseConfig};
use noisegen::losses::{critic_loss, gradient_penalty};
use noisegen::networks::{
    audit_discriminator, audit_encoder, audit_generator, Discriminator, Encoder, Generator, NetConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tch::{Device, Kind, Tensor};

use crate::{all, Outcome};

pub fn randn(shape: &[i64], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let n: i64 = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
    Tensor::from_slice(&v).reshape(shape)
}

pub fn sampler_fidelity() -> Outcome {
    let start = Instant::now();
    let settings = [(0.01, 1e-4), (0.04, 0.01), (2e-3, 1e-5), (0.1, 0.0), (0.0, 0.02)];
    let levels = [0.1f32, 0.35, 0.6, 0.9];
    let clean = PackedRawPatch::new(Array3::from_shape_fn((4, 32, 32), |(c, _, _)| levels[c])).unwrap();
    let mut worst = 0.0f64;
    for (s, &(shot, read)) in settings.iter().enumerate() {
        let nlf = NoiseLevelFunction::new(shot, read).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + s as u64);
        let mut sums = [(0.0f64, 0.0f64); 4];
        let mut draws = 0usize;
        while draws < 1_000_000 {
            let n = sample_init_noise(&clean, &nlf, &InitNoiseConfig::default(), &mut rng).unwrap();
            for (c, plane) in n.as_array().outer_iter().enumerate() {
                for &v in plane.iter() {
                    sums[c].0 += v as f64;
                    sums[c].1 += (v as f64).powi(2);
                }
            }
            draws += n.len();
        }
        let per = (draws / 4) as f64;
        for (c, &(s1, s2)) in sums.iter().enumerate() {
            let mean = s1 / per;
            let var = s2 / per - mean * mean;
            let oracle = shot * levels[c] as f64 + read;
            worst = worst.max((var - oracle).abs() / oracle);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    all(vec![
        Outcome::check(worst < 0.02, format!("worst relative variance error {worst:.4}")),
        Outcome::check(secs < 60.0, format!("{secs:.1}s for 5 settings")),
    ])
}

pub fn kl_oracle() -> Outcome {
    let two_bins = KlConfig {
        bin_count: 2,
        ..KlConfig::default()
    };
    let closed = histogram_kl(&[-0.25, 0.25], &[-0.25, 0.25, 0.25, 0.25], &two_bins).unwrap().kl;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f32> = Vec::<f64>::try_from(randn(&[4096], 0.05, &mut rng))
        .unwrap()
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let same = histogram_kl(&x, &x, &KlConfig::default()).unwrap().kl;
    let wide: Vec<f32> = x.iter().map(|v| v * 2.0).collect();
    let forward = histogram_kl(&x, &wide, &KlConfig::default()).unwrap().kl;
    let backward = histogram_kl(&wide, &x, &KlConfig::default()).unwrap().kl;
    all(vec![
        Outcome::check((closed - 0.143841).abs() <= 1e-6, format!("two-bin {closed:.7}")),
        Outcome::check(same.abs() < 1e-12, format!("identical {same:.1e}")),
        Outcome::check(
            (forward - backward).abs() > 1e-3,
            format!("asymmetric {forward:.4} vs {backward:.4}"),
        ),
    ])
}

pub fn penalty_anchors() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = [4, 4, 8, 8];
    let fake = randn(&shape, 1.0, &mut rng);
    let real = randn(&shape, 1.0, &mut rng);
    let clean = randn(&shape, 1.0, &mut rng);
    let constant = |n: &Tensor, _: &Tensor| Tensor::full([n.size()[0]], 0.3, (Kind::Double, Device::Cpu));
    let gp = gradient_penalty(&constant, &fake, &real, &clean, &mut rng).unwrap();
    let zero = Tensor::zeros([4], (Kind::Double, Device::Cpu));
    let contribution = critic_loss(&zero, &zero, &gp, 10.0).double_value(&[]);

    let w = randn(&shape[1..], 1.0, &mut rng);
    let w = &w / w.norm();
    let linear = move |n: &Tensor, _: &Tensor| (n * &w).sum_dim_intlist([1i64, 2, 3].as_slice(), false, Kind::Double);
    let gp_linear = gradient_penalty(&linear, &fake, &real, &clean, &mut rng).unwrap().double_value(&[]);
    all(vec![
        Outcome::check(contribution == 10.0, format!("constant critic contributes {contribution}")),
        Outcome::check(gp_linear.abs() < 1e-9, format!("unit-slope critic {gp_linear:.1e}")),
    ])
}

pub fn architecture_audit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let literal = NetConfig {
        literal_head_norm: true,
        ..NetConfig::default()
    };
    let mut parts = Vec::new();
    let g = Generator::new(&literal, Kind::Float, &mut rng);
    let issues = audit_generator(&g).unwrap();
    parts.push(Outcome::check(issues.is_empty(), format!("generator {issues:?}")));
    let e = Encoder::new(&literal, Kind::Float, &mut rng);
    let issues = audit_encoder(&e).unwrap();
    parts.push(Outcome::check(issues.is_empty(), format!("encoder {issues:?}")));
    let d = Discriminator::new(&literal, Kind::Float, &mut rng);
    let issues = audit_discriminator(&d).unwrap();
    // the score layer runs at stride 1 to reach the stated h/16 output
    parts.push(Outcome::check(
        issues.len() == 1 && issues[0].starts_with("out_d"),
        format!("discriminator {issues:?}"),
    ));

    let default = NetConfig::with_base(64);
    let heads = [
        ("out_g", audit_generator(&Generator::new(&default, Kind::Float, &mut rng)).unwrap()),
        ("out_d", audit_discriminator(&Discriminator::new(&default, Kind::Float, &mut rng)).unwrap()),
        ("e4", audit_encoder(&Encoder::new(&default, Kind::Float, &mut rng)).unwrap()),
    ];
    for (layer, issues) in heads {
        parts.push(Outcome::check(
            issues.len() == 1 && issues[0].starts_with(layer),
            format!("default config deviates only at {layer}"),
        ));
    }

    let small = NetConfig::with_base(4);
    let g = Generator::new(&small, Kind::Double, &mut rng);
    tch::no_grad(|| {
        let head = g.decoder.last().expect("decoder has layers");
        let mut w = head.weight.shallow_clone();
        w.copy_(&randn(&head.weight.size(), 0.05, &mut rng));
    });
    let x = randn(&[4, 4, 32, 32], 1.0, &mut rng);
    let c = randn(&[4, 4, 32, 32], 1.0, &mut rng);
    let v = randn(&[4, g.latent_dim()], 1.0, &mut rng);
    let out = tch::no_grad(|| g.forward(&x, &c, &v)).unwrap();
    let peak = out.residual.abs().max().double_value(&[]);
    let identity = (&out.final_noise - &x - &out.residual).abs().max().double_value(&[]);
    parts.push(Outcome::check(peak < 1.0 && peak > 0.0, format!("max |residual| {peak:.4}")));
    parts.push(Outcome::check(identity < 1e-12, "final = init + residual"));

    let e = Encoder::new(&NetConfig::default(), Kind::Float, &mut rng);
    let sizes: Vec<Vec<i64>> = [(32, 32), (48, 40), (8, 8)]
        .iter()
        .map(|&(h, w)| {
            let x = randn(&[1, 4, h, w], 1.0, &mut rng).to_kind(Kind::Float);
            tch::no_grad(|| e.forward(&x)).unwrap().size()
        })
        .collect();
    parts.push(Outcome::check(
        sizes.iter().all(|s| s == &[1, 512]),
        format!("latent sizes {sizes:?}"),
    ));
    all(parts)
}
