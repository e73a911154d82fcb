//! Every command twice with the same seed and config; the CSV outputs must
//! agree byte for byte, except the wall-clock column of the training log.

use std::fs;
use std::path::Path;
use std::process::Command;

use crate::{all, Outcome};

const BIN: &str = env!("CARGO_BIN_EXE_noisegen");

fn run(args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_default()
}

fn without_time(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn session(root: &Path) -> Result<Vec<(&'static str, String)>, String> {
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let (data, model, kld, lat, dn, ev) = (p("data"), p("model"), p("kld"), p("lat"), p("dn"), p("ev"));
    let ckpt = root.join("model").join("latest.ckpt").to_string_lossy().into_owned();
    run(&[
        "make-dataset", "--cameras", "2", "--scenes-train", "a", "--scenes-test", "b",
        "--patches-per-scene", "8", "--gains", "1,4", "--scene-size", "80", "--seed", "4", "--out", &data,
    ])?;
    run(&[
        "train", "--data", &data, "--out", &model, "--seed", "4",
        "--set", "net.base_channels=2", "--set", "epochs=2", "--set", "steps_per_epoch=3",
        "--set", "batch_size=4", "--set", "val_patches=4", "--set", "net.residual_scale=0.05",
    ])?;
    run(&["eval-kld", "--checkpoint", &ckpt, "--data", &data, "--test-patches", "8", "--out", &kld])?;
    run(&["export-latents", "--checkpoint", &ckpt, "--data", &data, "--per-camera", "4", "--out", &lat])?;
    run(&[
        "train-denoiser", "--regime", "learned_plus_real", "--checkpoint", &ckpt, "--data", &data,
        "--set", "width=4", "--set", "steps=4", "--set", "batch_size=6", "--out", &dn,
    ])?;
    let dn_ckpt = root.join("dn").join("denoiser.ckpt").to_string_lossy().into_owned();
    run(&["eval-denoiser", "--model", &dn_ckpt, "--data", &data, "--label", "mixed", "--out", &ev])?;
    let r = |sub: &str, file: &str| read(&root.join(sub).join(file));
    Ok(vec![
        ("metrics.csv", without_time(&r("model", "metrics.csv"))),
        ("kld.csv", r("kld", "kld.csv")),
        ("kld_rows.csv", r("kld", "kld_rows.csv")),
        ("latents.csv", r("lat", "latents.csv")),
        ("train_log.csv", r("dn", "train_log.csv")),
        ("denoise.csv", r("ev", "denoise.csv")),
    ])
}

pub fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, second) = match (session(a.path()), session(b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return Outcome::fail(e),
    };
    all(first
        .iter()
        .zip(&second)
        .map(|((name, x), (_, y))| Outcome::check(!x.is_empty() && x == y, format!("{name} identical")))
        .collect())
}
