use ndarray::Array2;
use noisegen::data_model::{
    bayer_flip_h, pack_bayer, random_crop, read_dataset, synthesize, unpack_bayer, write_dataset, RawMosaic,
    SynthConfig,
};
use noisegen::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{all, Outcome};

/// R sites 1, G sites 0.5, B sites 0.
fn phase_colored(h: usize, w: usize) -> RawMosaic {
    RawMosaic::new(Array2::from_shape_fn((h, w), |(y, x)| match (y % 2, x % 2) {
        (0, 0) => 1.0,
        (1, 1) => 0.0,
        _ => 0.5,
    }))
    .unwrap()
}

fn is_phase_colored(m: &RawMosaic) -> bool {
    m.values() == phase_colored(m.height(), m.width()).values()
}

pub fn data_layer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut parts = Vec::new();

    let mut inverse = true;
    for (h, w) in [(2, 2), (64, 64), (6, 10)] {
        let m = RawMosaic::new(Array2::from_shape_fn((h, w), |_| rng.random::<f32>())).unwrap();
        inverse &= match pack_bayer(&m) {
            Ok(p) => unpack_bayer(&p).unwrap() == m,
            // packing is defined for square mosaics only
            Err(_) => h != w,
        };
    }
    parts.push(Outcome::check(inverse, "unpack(pack(m)) = m"));

    let m = phase_colored(64, 64);
    let packed = pack_bayer(&m).unwrap();
    let means: Vec<f32> = packed
        .as_array()
        .outer_iter()
        .map(|c| c.iter().sum::<f32>() / c.len() as f32)
        .collect();
    parts.push(Outcome::check(means == [1.0, 0.5, 0.5, 0.0], format!("packed channel means {means:?}")));

    let flipped = bayer_flip_h(&m).unwrap();
    let twice = bayer_flip_h(&flipped).unwrap();
    let centre = m.values().slice(ndarray::s![.., 2..62]).to_owned();
    let mut phase = is_phase_colored(&flipped) && flipped.width() == 62 && twice.values() == centre;
    for _ in 0..100 {
        let side = 2 * rng.random_range(1..=32);
        phase &= {
            let crop = random_crop(&m, side, &mut rng).unwrap();
            is_phase_colored(&crop) && crop.height() == side
        };
    }
    parts.push(Outcome::check(phase, "flip and 100 crops keep RGGB phase"));

    let mut cfg = SynthConfig::with_presets(2, vec!["a".into()], vec!["b".into()], 5, vec![1.0, 4.0], 3);
    cfg.scene_size = 80;
    let (manifest, pairs) = synthesize(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = write_dataset(dir.path(), &manifest, &pairs).unwrap();
    let (read, iter) = read_dataset(dir.path()).unwrap();
    let back: Vec<_> = iter.collect::<Result<_, _>>().unwrap();
    let exact = back.len() == pairs.len()
        && back.iter().zip(&pairs).all(|(a, b)| {
            a.key == b.key
                && a.clean.as_slice().iter().zip(b.clean.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
                && a.noisy.as_slice().iter().zip(b.noisy.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    parts.push(Outcome::check(exact && read == written, format!("{} pairs round-trip bit-exactly", back.len())));

    let mut overlapping = read.clone();
    overlapping.scenes.test.push("a".into());
    let rejected = matches!(overlapping.validate(), Err(Error::Validation(_)));
    let mut leak = cfg.clone();
    leak.scenes_test = vec!["a".into()];
    let refused = synthesize(&leak).is_err();
    parts.push(Outcome::check(rejected && refused, "overlapping train/test scenes are rejected"));
    all(parts)
}
