//! Camera-aware learned noise synthesis for packed raw Bayer images.

pub mod checkpoint;
pub mod cli;
pub mod data_model;
pub mod denoiser;
pub mod error;
pub mod evaluation;
pub mod init_noise;
pub mod losses;
pub mod networks;
pub mod optim;
pub mod training;

pub use error::{Error, Result};
