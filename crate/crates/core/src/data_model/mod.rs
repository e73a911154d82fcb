//! Raw-domain data types, Bayer handling, virtual cameras and the dataset store.

pub mod bayer;
pub mod camera;
pub mod dataset;
pub mod nlf;
pub mod scene;
pub mod synth;

pub use bayer::{
    bayer_flip_h, pack_bayer, random_crop, unpack_bayer, PackedRawPatch, RawMosaic, BAYER_CHANNELS,
};
pub use camera::{preset_cameras, simulate_virtual_capture, validate_cameras, VirtualCamera};
pub use dataset::{
    atomic_write, read_dataset, read_manifest, write_dataset, Dataset, DatasetManifest, NlfEntry, PairEntry,
    PairIter, PairKey, PatchPair, SceneSplit, Split, FORMAT_VERSION, MANIFEST_FILE,
};
pub use nlf::{scale_nlf, scale_nlf_with, GainExponents, NoiseLevelFunction};
pub use synth::{derive_seed, synthesize, SynthConfig};
