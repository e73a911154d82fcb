//! Joint adversarial training of the generator, critic and camera encoder.

mod config;
mod sampler;
mod trainer;

pub use config::{apply_json_overrides, TrainConfig};
pub use sampler::{sample_batch, SamplerIndex, TrainingSample};
pub use trainer::{load_models, StepMetrics, Trainer, TRAIN_KIND};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data_model::{derive_seed, Dataset, Split};
use crate::evaluation::{csv_error, evaluation_subset};
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const SNAPSHOT_CHECKPOINT: &str = "nan_snapshot.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_adv: f64,
    pub l_fm: Option<f64>,
    pub l_triplet: Option<f64>,
    pub l_critic: f64,
    pub gp: f64,
    pub val_kl: f64,
    pub wall_time: f64,
}

pub fn epoch_checkpoint(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("epoch_{epoch:04}.ckpt"))
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["epoch", "l_adv", "l_fm", "l_triplet", "l_critic", "gp", "val_kl", "wall_time"])
            .map_err(|e| csv_error(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    crate::data_model::atomic_write(path, &bytes)
}

fn append_metrics(path: &Path, row: &EpochMetrics) -> Result<()> {
    use std::io::Write;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(row).map_err(|e| csv_error(path, e))?;
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn mean_opt(steps: &[StepMetrics], f: impl Fn(&StepMetrics) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = steps.iter().filter_map(&f).collect();
    (!v.is_empty()).then(|| mean(v.into_iter()))
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub history: Vec<EpochMetrics>,
}

/// Trains to `config.epochs`, writing metrics and checkpoints under `out`.
/// With `resume`, continues from `out/latest.ckpt` when present.
pub fn train(config: &TrainConfig, data: &Dataset, out: &Path, resume: bool) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), data)?;
    let index = trainer.sampler(data)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let metrics_path = out.join(METRICS_FILE);
    let latest = out.join(LATEST_CHECKPOINT);
    let mut history = Vec::new();
    if resume && latest.exists() {
        trainer.restore(&latest)?;
        if metrics_path.exists() {
            history = read_metrics(&metrics_path)?;
            history.retain(|r| r.epoch <= trainer.epoch);
        }
        log::info!("resuming at epoch {} step {}", trainer.epoch, trainer.step);
    }
    write_metrics(&metrics_path, &history)?;
    let config_path = out.join("config.json");
    let text = serde_json::to_vec_pretty(config).map_err(|e| Error::json(&config_path, e))?;
    crate::data_model::atomic_write(&config_path, &text)?;

    let steps = config
        .steps_per_epoch
        .unwrap_or_else(|| index.len().div_ceil(config.batch_size));
    let val_targets = evaluation_subset(data, Split::Test, config.val_patches);
    while trainer.epoch < config.epochs {
        let start = Instant::now();
        let epoch = trainer.epoch + 1;
        let mut step_metrics = Vec::with_capacity(steps);
        for _ in 0..steps {
            match trainer.step(data, &index) {
                Ok(m) => step_metrics.push(m),
                Err(e @ Error::NonFinite(_)) => {
                    let snapshot = out.join(SNAPSHOT_CHECKPOINT);
                    trainer.save(&snapshot)?;
                    return Err(Error::NonFinite(format!(
                        "{e} at epoch {epoch}, step {}; state saved to {}",
                        trainer.step,
                        snapshot.display()
                    )));
                }
                Err(e) => return Err(e),
            }
        }
        let val_kl = if val_targets.is_empty() {
            f64::NAN
        } else {
            trainer.validation_kl(data, &val_targets, derive_seed(config.seed, &format!("val{epoch}")))?
        };
        trainer.epoch = epoch;
        let row = EpochMetrics {
            epoch,
            l_adv: mean(step_metrics.iter().map(|m| m.l_adv)),
            l_fm: mean_opt(&step_metrics, |m| m.l_fm),
            l_triplet: mean_opt(&step_metrics, |m| m.l_triplet),
            l_critic: mean(step_metrics.iter().map(|m| m.l_critic)),
            gp: mean(step_metrics.iter().map(|m| m.gp)),
            val_kl,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: l_adv {:.4} l_critic {:.4} gp {:.4} val_kl {:.5}",
            row.l_adv,
            row.l_critic,
            row.gp,
            row.val_kl
        );
        append_metrics(&metrics_path, &row)?;
        history.push(row);
        trainer.save(&latest)?;
        if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) || epoch == config.epochs {
            fs::copy(&latest, epoch_checkpoint(out, epoch)).map_err(|e| Error::io(out, e))?;
        }
    }
    Ok(TrainOutcome { trainer, history })
}
