use rand::seq::IndexedRandom;
use rand::Rng;

use crate::data_model::{Dataset, NoiseLevelFunction, PackedRawPatch, Split};
use crate::{Error, Result};

/// Indices into the dataset for one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// Anchor pair: supplies the clean image, real noise and NLF.
    pub i: usize,
    /// Same camera, different pair: encoder input for the generator.
    pub j: usize,
    /// Same camera, any setting: triplet positive.
    pub k: usize,
    /// Different camera: triplet negative.
    pub l: Option<usize>,
    pub camera: usize,
    pub other_camera: Option<usize>,
    pub nlf: NoiseLevelFunction,
}

impl TrainingSample {
    pub fn real_noise(&self, data: &Dataset) -> PackedRawPatch {
        data.pairs[self.i].noise()
    }
}

/// Train-split pairs grouped by camera.
#[derive(Debug, Clone)]
pub struct SamplerIndex {
    pairs: Vec<(usize, usize)>,
    by_camera: Vec<Vec<usize>>,
    pub cameras: Vec<String>,
}

impl SamplerIndex {
    pub fn new(data: &Dataset, split: Split, need_negatives: bool) -> Result<Self> {
        let groups = data.by_camera(split);
        if groups.is_empty() {
            return Err(Error::Data(format!("the {split:?} split is empty")));
        }
        if need_negatives && groups.len() < 2 {
            return Err(Error::Config(format!(
                "triplet training needs at least two cameras, dataset has {}",
                groups.len()
            )));
        }
        if let Some((cam, v)) = groups.iter().find(|(_, v)| v.len() < 2) {
            return Err(Error::Data(format!("camera {cam} has {} pair(s); need at least 2", v.len())));
        }
        let mut pairs = Vec::new();
        for (c, (_, idx)) in groups.iter().enumerate() {
            pairs.extend(idx.iter().map(|&i| (i, c)));
        }
        pairs.sort_unstable();
        Ok(Self {
            pairs,
            cameras: groups.iter().map(|(c, _)| c.clone()).collect(),
            by_camera: groups.into_iter().map(|(_, v)| v).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, data: &Dataset, rng: &mut R) -> TrainingSample {
        let &(i, s) = self.pairs.choose(rng).expect("non-empty index");
        let own = &self.by_camera[s];
        let j = loop {
            let j = *own.choose(rng).expect("camera has pairs");
            if j != i {
                break j;
            }
        };
        let k = *own.choose(rng).expect("camera has pairs");
        let (l, t) = if self.by_camera.len() > 1 {
            let t = loop {
                let t = rng.random_range(0..self.by_camera.len());
                if t != s {
                    break t;
                }
            };
            (Some(*self.by_camera[t].choose(rng).expect("camera has pairs")), Some(t))
        } else {
            (None, None)
        };
        TrainingSample {
            i,
            j,
            k,
            l,
            camera: s,
            other_camera: t,
            nlf: data.nlf(i),
        }
    }
}

pub fn sample_batch<R: Rng + ?Sized>(
    data: &Dataset,
    index: &SamplerIndex,
    batch_size: usize,
    rng: &mut R,
) -> Vec<TrainingSample> {
    (0..batch_size).map(|_| index.sample(data, rng)).collect()
}
