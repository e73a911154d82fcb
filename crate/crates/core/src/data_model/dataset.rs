//! On-disk paired dataset: a JSON manifest plus flat little-endian f32 payloads.
//!
//! Layout: `root/manifest.json`, `root/<camera>/<scene>/<idx>_clean.f32` and
//! `root/<camera>/<scene>/<idx>_noisy.f32`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bayer::{PackedRawPatch, BAYER_CHANNELS};
use super::camera::{validate_cameras, VirtualCamera};
use super::nlf::NoiseLevelFunction;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

/// NLF of one `(camera, scene, setting)` capture group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlfEntry {
    pub camera: String,
    pub scene: String,
    pub setting: usize,
    pub delta_shot: f64,
    pub delta_read: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairEntry {
    pub camera: String,
    pub scene: String,
    pub setting: usize,
    pub index: usize,
    pub clean: String,
    pub noisy: String,
    #[serde(default)]
    pub clean_sha256: String,
    #[serde(default)]
    pub noisy_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub patch_shape: [usize; 3],
    pub seed: u64,
    pub cameras: Vec<VirtualCamera>,
    pub scenes: SceneSplit,
    /// Gain ratio of each shooting setting, indexed by setting id.
    pub settings: Vec<f64>,
    pub nlf: Vec<NlfEntry>,
    pub pairs: Vec<PairEntry>,
}

/// Metadata of one stored pair, before file names are assigned.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairKey {
    pub camera: String,
    pub scene: String,
    pub setting: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub key: PairKey,
    pub clean: PackedRawPatch,
    pub noisy: PackedRawPatch,
}

impl PatchPair {
    /// Real noise `noisy - clean`.
    pub fn noise(&self) -> PackedRawPatch {
        self.noisy
            .sub(&self.clean)
            .expect("pairs are shape-checked on construction")
    }
}

fn payload_paths(key: &PairKey) -> (String, String) {
    let stem = format!("{}/{}/{:06}", key.camera, key.scene, key.index);
    (format!("{stem}_clean.f32"), format!("{stem}_noisy.f32"))
}

fn encode_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl DatasetManifest {
    pub fn patch_size(&self) -> usize {
        self.patch_shape[1]
    }

    pub fn split_of(&self, scene: &str) -> Option<Split> {
        if self.scenes.train.iter().any(|s| s == scene) {
            Some(Split::Train)
        } else if self.scenes.test.iter().any(|s| s == scene) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn nlf_for(&self, camera: &str, scene: &str, setting: usize) -> Option<NoiseLevelFunction> {
        self.nlf
            .iter()
            .find(|e| e.camera == camera && e.scene == scene && e.setting == setting)
            .map(|e| NoiseLevelFunction {
                delta_shot: e.delta_shot,
                delta_read: e.delta_read,
            })
    }

    pub fn camera(&self, id: &str) -> Option<&VirtualCamera> {
        self.cameras.iter().find(|c| c.camera_id == id)
    }

    /// Checks every structural invariant except payload contents.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                path: PathBuf::from(MANIFEST_FILE),
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let [c, h, w] = self.patch_shape;
        if c != BAYER_CHANNELS || h != w || h == 0 {
            return Err(Error::Validation(format!(
                "patch_shape must be [4, n, n], got {:?}",
                self.patch_shape
            )));
        }
        validate_cameras(&self.cameras)?;

        let train: HashSet<&str> = self.scenes.train.iter().map(String::as_str).collect();
        let test: HashSet<&str> = self.scenes.test.iter().map(String::as_str).collect();
        if train.len() != self.scenes.train.len() || test.len() != self.scenes.test.len() {
            return Err(Error::Validation("scene lists contain duplicates".into()));
        }
        let mut overlap: Vec<&str> = train.intersection(&test).copied().collect();
        if !overlap.is_empty() {
            overlap.sort_unstable();
            return Err(Error::Validation(format!(
                "train and test scenes overlap: {}",
                overlap.join(", ")
            )));
        }
        if self.settings.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::Validation("setting gains must be positive".into()));
        }

        let mut nlf_keys = HashSet::new();
        for e in &self.nlf {
            NoiseLevelFunction::new(e.delta_shot, e.delta_read)?;
            if !nlf_keys.insert((e.camera.as_str(), e.scene.as_str(), e.setting)) {
                return Err(Error::Validation(format!(
                    "duplicate NLF entry for ({}, {}, {})",
                    e.camera, e.scene, e.setting
                )));
            }
        }

        let mut files = HashSet::new();
        let mut keys = HashSet::new();
        for p in &self.pairs {
            if self.camera(&p.camera).is_none() {
                return Err(Error::Validation(format!("pair references unknown camera {}", p.camera)));
            }
            if self.split_of(&p.scene).is_none() {
                return Err(Error::Validation(format!("pair references unknown scene {}", p.scene)));
            }
            if p.setting >= self.settings.len() {
                return Err(Error::Validation(format!("pair references unknown setting {}", p.setting)));
            }
            if !nlf_keys.contains(&(p.camera.as_str(), p.scene.as_str(), p.setting)) {
                return Err(Error::Validation(format!(
                    "missing NLF for ({}, {}, {})",
                    p.camera, p.scene, p.setting
                )));
            }
            if !keys.insert((p.camera.as_str(), p.scene.as_str(), p.index)) {
                return Err(Error::Validation(format!(
                    "duplicate pair index {} in {}/{}",
                    p.index, p.camera, p.scene
                )));
            }
            for f in [&p.clean, &p.noisy] {
                if !files.insert(f.as_str()) {
                    return Err(Error::Validation(format!("payload {f} referenced more than once")));
                }
            }
        }
        Ok(())
    }
}

/// Writes payloads and the manifest. The pair list of the returned manifest is
/// rebuilt from `pairs` with file names and checksums filled in.
pub fn write_dataset(
    root: &Path,
    manifest: &DatasetManifest,
    pairs: &[PatchPair],
) -> Result<DatasetManifest> {
    let mut out = manifest.clone();
    out.pairs.clear();
    let size = manifest.patch_size();
    for pair in pairs {
        for p in [&pair.clean, &pair.noisy] {
            if p.size() != size {
                return Err(Error::Validation(format!(
                    "pair {:?} has size {} but manifest declares {size}",
                    pair.key,
                    p.size()
                )));
            }
        }
        let (clean, noisy) = payload_paths(&pair.key);
        out.pairs.push(PairEntry {
            camera: pair.key.camera.clone(),
            scene: pair.key.scene.clone(),
            setting: pair.key.setting,
            index: pair.key.index,
            clean,
            noisy,
            clean_sha256: String::new(),
            noisy_sha256: String::new(),
        });
    }
    out.validate()?;

    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (entry, pair) in out.pairs.iter_mut().zip(pairs) {
        for (rel, patch, digest) in [
            (&entry.clean, &pair.clean, &mut entry.clean_sha256),
            (&entry.noisy, &pair.noisy, &mut entry.noisy_sha256),
        ] {
            let path = root.join(rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let bytes = encode_f32(patch.as_slice());
            *digest = sha256_hex(&bytes);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        }
    }
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&out).map_err(|e| Error::json(&path, e))?;
    atomic_write(&path, &json)?;
    Ok(out)
}

/// Writes through a temporary sibling and renames into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            path,
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    manifest.validate()?;
    Ok(manifest)
}

/// Opens a dataset; pairs are loaded lazily by the returned iterator.
pub fn read_dataset(root: &Path) -> Result<(DatasetManifest, PairIter)> {
    let manifest = read_manifest(root)?;
    let iter = PairIter {
        root: root.to_path_buf(),
        size: manifest.patch_size(),
        entries: manifest.pairs.clone().into_iter(),
    };
    Ok((manifest, iter))
}

pub struct PairIter {
    root: PathBuf,
    size: usize,
    entries: std::vec::IntoIter<PairEntry>,
}

impl PairIter {
    fn load(&self, rel: &str, digest: &str) -> Result<PackedRawPatch> {
        let path = self.root.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = 4 * BAYER_CHANNELS * self.size * self.size;
        if bytes.len() != expected {
            return Err(Error::ShapeMismatch {
                path,
                detail: format!("expected {expected} bytes, found {}", bytes.len()),
            });
        }
        if !digest.is_empty() && sha256_hex(&bytes) != digest {
            return Err(Error::Checksum(path));
        }
        PackedRawPatch::from_flat(decode_f32(&bytes), self.size).map_err(|e| Error::ShapeMismatch {
            path,
            detail: e.to_string(),
        })
    }
}

impl Iterator for PairIter {
    type Item = Result<PatchPair>;

    fn next(&mut self) -> Option<Self::Item> {
        let entry = self.entries.next()?;
        let load = || -> Result<PatchPair> {
            Ok(PatchPair {
                clean: self.load(&entry.clean, &entry.clean_sha256)?,
                noisy: self.load(&entry.noisy, &entry.noisy_sha256)?,
                key: PairKey {
                    camera: entry.camera.clone(),
                    scene: entry.scene.clone(),
                    setting: entry.setting,
                    index: entry.index,
                },
            })
        };
        Some(load())
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.entries.size_hint()
    }
}

/// Write-once, in-memory dataset handle.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub pairs: Vec<PatchPair>,
    nlfs: Vec<NoiseLevelFunction>,
    splits: Vec<Split>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let (manifest, iter) = read_dataset(root)?;
        let pairs = iter.collect::<Result<Vec<_>>>()?;
        Self::from_parts(manifest, pairs)
    }

    pub fn from_parts(manifest: DatasetManifest, pairs: Vec<PatchPair>) -> Result<Self> {
        let mut nlfs = Vec::with_capacity(pairs.len());
        let mut splits = Vec::with_capacity(pairs.len());
        for p in &pairs {
            let nlf = manifest
                .nlf_for(&p.key.camera, &p.key.scene, p.key.setting)
                .ok_or_else(|| {
                    Error::Data(format!(
                        "missing NLF for ({}, {}, {})",
                        p.key.camera, p.key.scene, p.key.setting
                    ))
                })?;
            let split = manifest
                .split_of(&p.key.scene)
                .ok_or_else(|| Error::Data(format!("scene {} not in any split", p.key.scene)))?;
            nlfs.push(nlf);
            splits.push(split);
        }
        Ok(Self {
            manifest,
            pairs,
            nlfs,
            splits,
        })
    }

    pub fn nlf(&self, pair: usize) -> NoiseLevelFunction {
        self.nlfs[pair]
    }

    pub fn split(&self, pair: usize) -> Split {
        self.splits[pair]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.pairs.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn camera_ids(&self) -> Vec<String> {
        self.manifest.cameras.iter().map(|c| c.camera_id.clone()).collect()
    }

    /// Pair indices of `split` grouped by camera, in manifest camera order.
    pub fn by_camera(&self, split: Split) -> Vec<(String, Vec<usize>)> {
        let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
        for i in self.indices(split) {
            groups.entry(self.pairs[i].key.camera.as_str()).or_default().push(i);
        }
        self.manifest
            .cameras
            .iter()
            .filter_map(|c| {
                groups
                    .remove(c.camera_id.as_str())
                    .map(|v| (c.camera_id.clone(), v))
            })
            .collect()
    }

    pub fn scenes_in(&self, split: Split) -> BTreeSet<String> {
        self.indices(split)
            .into_iter()
            .map(|i| self.pairs[i].key.scene.clone())
            .collect()
    }
}
