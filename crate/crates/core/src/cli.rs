//! Command-line surface.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::data_model::{
    derive_seed, synthesize, unpack_bayer, write_dataset, Dataset, PackedRawPatch, Split,
    SynthConfig, MANIFEST_FILE,
};
use crate::denoiser::{
    eval_denoiser, train_denoiser, write_denoise_csv, DenoiseRegime, Denoiser, DenoiserConfig, LearnedSource,
};
use crate::evaluation::{
    evaluation_subset, export_latents_csv, gaussian_baseline_sigma, latent_separation, model_kl_eval,
    shuffled_separation, write_json, write_kl_csv, KlConfig, LatentChoice, NoiseModel,
};
use crate::init_noise::{sample_init_noise, InitNoiseConfig};
use crate::training::{load_models, train, TrainConfig};
use crate::{Error, Result};

/// Environment variable bounding intra-op parallelism.
pub const NUM_WORKERS_ENV: &str = "NOISEGEN_NUM_WORKERS";
/// Default amplification applied to noise previews.
pub const PREVIEW_SCALE: f64 = 10.0;

#[derive(Debug, Parser)]
#[command(name = "noisegen", version, about = "Camera-aware learned noise synthesis for raw Bayer images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a virtual-camera dataset.
    MakeDataset(MakeDatasetArgs),
    /// Train the noise model.
    Train(TrainArgs),
    /// Write generated noise samples and previews.
    SampleNoise(SampleNoiseArgs),
    /// Compare noise models by histogram KL divergence.
    EvalKld(EvalKldArgs),
    /// Export encoder latents with camera labels.
    ExportLatents(ExportLatentsArgs),
    /// Train a denoiser on pairs from one regime.
    TrainDenoiser(TrainDenoiserArgs),
    /// Score a trained denoiser on the test split.
    EvalDenoiser(EvalDenoiserArgs),
    /// Merge result CSVs into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct MakeDatasetArgs {
    #[arg(long, default_value_t = 3)]
    pub cameras: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    pub scenes_train: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub scenes_test: Vec<String>,
    #[arg(long, default_value_t = 500)]
    pub patches_per_scene: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 4.0, 8.0])]
    pub gains: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 256)]
    pub scene_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` overrides with dotted keys, e.g. `weights.lambda_gp=5`.
    #[arg(long = "set")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the latest checkpoint under `--out`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SampleNoiseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub camera: String,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = PREVIEW_SCALE)]
    pub scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalKldArgs {
    /// Learned model; without it only the statistical baselines are scored.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 384)]
    pub test_patches: usize,
    #[arg(long, default_value = "matched")]
    pub latent: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportLatentsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub per_camera: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainDenoiserArgs {
    #[arg(long)]
    pub regime: DenoiseRegime,
    /// Noise-model checkpoint for the learned regimes.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub camera: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalDenoiserArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Label of the row group in the CSV.
    #[arg(long, default_value = "denoiser")]
    pub label: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub html: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Applies `NOISEGEN_NUM_WORKERS` to the tensor backend.
pub fn configure_workers() -> Result<()> {
    match std::env::var(NUM_WORKERS_ENV) {
        Ok(v) => {
            let n: i32 = v
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("{NUM_WORKERS_ENV} must be a positive integer, got {v:?}")))?;
            tch::set_num_threads(n);
            tch::set_num_interop_threads(n);
            Ok(())
        }
        Err(_) => Ok(()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    configure_workers()?;
    match cli.command {
        Command::MakeDataset(a) => make_dataset(&a),
        Command::Train(a) => train_cmd(&a),
        Command::SampleNoise(a) => sample_noise(&a),
        Command::EvalKld(a) => eval_kld(&a),
        Command::ExportLatents(a) => export_latents(&a),
        Command::TrainDenoiser(a) => train_denoiser_cmd(&a),
        Command::EvalDenoiser(a) => eval_denoiser_cmd(&a),
        Command::Report(a) => report(&a),
    }
}

fn is_non_empty_dir(path: &Path) -> bool {
    fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn create_out(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn open_dataset(root: &Path) -> Result<Dataset> {
    if !root.join(MANIFEST_FILE).is_file() {
        return Err(Error::Argument(format!("no dataset at {} (missing {MANIFEST_FILE})", root.display())));
    }
    Dataset::open(root)
}

fn write_f32(path: &Path, patch: &PackedRawPatch) -> Result<()> {
    let bytes: Vec<u8> = patch.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    crate::data_model::atomic_write(path, &bytes)
}

/// Raw-mosaic PNG of `offset + scale * patch`, clamped to `[0, 1]`.
fn write_preview(path: &Path, patch: &PackedRawPatch, scale: f64, offset: f64) -> Result<()> {
    let mosaic = unpack_bayer(patch)?;
    let v = mosaic.values();
    let (h, w) = v.dim();
    let pixels: Vec<u8> = v
        .iter()
        .map(|&x| ((offset + scale * f64::from(x)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer matches dimensions");
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

fn make_dataset(a: &MakeDatasetArgs) -> Result<()> {
    if is_non_empty_dir(&a.out) && !a.force {
        return Err(Error::Argument(format!("{} is not empty; pass --force to overwrite", a.out.display())));
    }
    if a.cameras == 0 {
        return Err(Error::Argument("--cameras must be positive".into()));
    }
    if a.cameras < 2 {
        log::warn!("a single camera cannot be used for triplet training");
    }
    let cfg = SynthConfig {
        patch_size: a.patch_size,
        scene_size: a.scene_size,
        ..SynthConfig::with_presets(
            a.cameras,
            a.scenes_train.clone(),
            a.scenes_test.clone(),
            a.patches_per_scene,
            a.gains.clone(),
            a.seed,
        )
    };
    let (manifest, pairs) = synthesize(&cfg)?;
    if a.force && a.out.exists() {
        fs::remove_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    }
    create_out(&a.out)?;
    let written = write_dataset(&a.out, &manifest, &pairs)?;
    log::info!("wrote {} pairs to {}", written.pairs.len(), a.out.display());
    println!("{} pairs", written.pairs.len());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    config = config.apply_overrides(&a.overrides)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate()?;
    if is_non_empty_dir(&a.out) && !a.resume && !a.force {
        return Err(Error::Argument(format!(
            "{} is not empty; pass --resume to continue or --force to overwrite",
            a.out.display()
        )));
    }
    let data = open_dataset(&a.data)?;
    if a.force && !a.resume && a.out.exists() {
        fs::remove_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    }
    let outcome = train(&config, &data, &a.out, a.resume)?;
    if let Some(last) = outcome.history.last() {
        println!("epoch {} val_kl {:.6}", last.epoch, last.val_kl);
    }
    Ok(())
}

fn sample_noise(a: &SampleNoiseArgs) -> Result<()> {
    if a.count == 0 {
        return Err(Error::Argument("--count must be positive".into()));
    }
    if !(a.scale.is_finite() && a.scale > 0.0) {
        return Err(Error::Argument("--scale must be positive".into()));
    }
    let data = open_dataset(&a.data)?;
    let (config, generator, encoder) = load_models(&a.checkpoint)?;
    let groups = data.by_camera(Split::Test);
    let (_, pool) = groups
        .iter()
        .find(|(c, _)| *c == a.camera)
        .ok_or_else(|| Error::Argument(format!("unknown camera id {:?}", a.camera)))?;
    if pool.len() < 2 {
        return Err(Error::Data(format!("camera {} has fewer than 2 test pairs", a.camera)));
    }
    create_out(&a.out)?;
    let targets: Vec<usize> = (0..a.count).map(|k| pool[k * pool.len() / a.count]).collect();
    let init_cfg = if config.init_noise.mode == crate::init_noise::InitNoiseMode::Gaussian {
        let sigma = if config.init_noise.gaussian_sigma > 0.0 {
            config.init_noise.gaussian_sigma
        } else {
            gaussian_baseline_sigma(&data)?
        };
        InitNoiseConfig::gaussian(sigma)
    } else {
        InitNoiseConfig::default()
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(derive_seed(a.seed, "sample-noise"));
    let scale_tag = format!("x{}", a.scale);
    let mut samples = Vec::new();
    for (k, &i) in targets.iter().enumerate() {
        let pair = &data.pairs[i];
        let source = pool[(pool.iter().position(|&p| p == i).unwrap_or(0) + 1) % pool.len()];
        let latent = if config.use_encoder {
            encoder.encode(&data.pairs[source].noisy)?
        } else {
            crate::networks::LatentVector::zeros(config.net.latent_dim() as usize)
        };
        let init = sample_init_noise(&pair.clean, &data.nlf(i), &init_cfg, &mut rng)?;
        let (final_noise, residual) = generator.generate(&pair.clean, &init, &latent)?;
        let real = pair.noise();
        let identity_error = final_noise
            .sub(&init)?
            .as_slice()
            .iter()
            .zip(residual.as_slice())
            .map(|(a, b)| f64::from((a - b).abs()))
            .fold(0.0, f64::max);
        for (name, patch) in [("clean", &pair.clean), ("init", &init), ("final", &final_noise), ("real", &real)] {
            write_f32(&a.out.join(format!("{name}_{k:04}.f32")), patch)?;
            let preview = if name == "clean" {
                a.out.join(format!("{name}_{k:04}.png"))
            } else {
                a.out.join(format!("{name}_{k:04}_{scale_tag}.png"))
            };
            if name == "clean" {
                write_preview(&preview, patch, 1.0, 0.0)?;
            } else {
                write_preview(&preview, patch, a.scale, 0.5)?;
            }
        }
        samples.push(json!({
            "index": k,
            "pair": pair.key.index,
            "scene": pair.key.scene,
            "latent_source": data.pairs[source].key.index,
            "residual_identity_error": identity_error,
        }));
    }
    write_json(
        &a.out.join("samples.json"),
        &json!({
            "camera": a.camera,
            "patch_size": data.manifest.patch_size(),
            "dtype": "f32 little-endian, [4, h, w]",
            "preview_scale": a.scale,
            "preview_offset": 0.5,
            "samples": samples,
        }),
    )?;
    println!("{} samples", targets.len());
    Ok(())
}

fn parse_latent(s: &str) -> Result<LatentChoice> {
    match s {
        "matched" => Ok(LatentChoice::Matched),
        "mismatched" => Ok(LatentChoice::Mismatched),
        "zero" => Ok(LatentChoice::Zero),
        other => Err(Error::Argument(format!("unknown latent choice {other:?}"))),
    }
}

#[derive(Debug, Serialize)]
struct KldSummary {
    model: String,
    kl_mean: f64,
    kl_std: f64,
    n_patches: usize,
    clipping_warning: bool,
    ordering_holds: bool,
}

fn eval_kld(a: &EvalKldArgs) -> Result<()> {
    let latent = parse_latent(&a.latent)?;
    let data = open_dataset(&a.data)?;
    let models = a.checkpoint.as_deref().map(load_models).transpose()?;
    let targets = evaluation_subset(&data, Split::Test, a.test_patches);
    let cfg = KlConfig::default();
    let seed = derive_seed(a.seed, "eval-kld");
    let mut results = vec![
        model_kl_eval(&NoiseModel::Gaussian { sigma: gaussian_baseline_sigma(&data)? }, &data, &targets, &cfg, seed)?,
        model_kl_eval(&NoiseModel::PoissonGaussian, &data, &targets, &cfg, seed)?,
    ];
    if let Some((config, generator, encoder)) = &models {
        let model = NoiseModel::Learned {
            generator,
            encoder: config.use_encoder.then_some(encoder),
            latent: if config.use_encoder { latent } else { LatentChoice::Zero },
        };
        results.push(model_kl_eval(&model, &data, &targets, &cfg, seed)?);
    }
    // expected order: learned < poisson_gaussian < gaussian
    let ordering_holds = results.windows(2).all(|w| w[1].mean < w[0].mean);
    create_out(&a.out)?;
    let summary_path = a.out.join("kld.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(|e| crate::evaluation::csv_error(&summary_path, e))?;
    for r in &results {
        w.serialize(KldSummary {
            model: r.model.clone(),
            kl_mean: r.mean,
            kl_std: r.std,
            n_patches: r.per_patch.len(),
            clipping_warning: r.clipping_warning,
            ordering_holds,
        })
        .map_err(|e| crate::evaluation::csv_error(&summary_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&summary_path, e))?;
    let rows: Vec<_> = results.iter().flat_map(|r| r.rows(&data)).collect();
    write_kl_csv(&a.out.join("kld_rows.csv"), &rows)?;
    for r in &results {
        println!("{:<18} {:.6}", r.model, r.mean);
    }
    println!("ordering_holds {ordering_holds}");
    Ok(())
}

fn export_latents(a: &ExportLatentsArgs) -> Result<()> {
    if a.per_camera < 2 {
        return Err(Error::Argument("--per-camera must be at least 2".into()));
    }
    let data = open_dataset(&a.data)?;
    let (_, _, encoder) = load_models(&a.checkpoint)?;
    let mut latents = Vec::new();
    let mut labels = Vec::new();
    for (camera, idx) in data.by_camera(Split::Test) {
        let n = a.per_camera.min(idx.len());
        for k in 0..n {
            latents.push(encoder.encode(&data.pairs[idx[k * idx.len() / n]].noisy)?);
            labels.push(camera.clone());
        }
    }
    let ratio = latent_separation(&latents, &labels)?;
    let shuffled = shuffled_separation(&latents, &labels, 20, derive_seed(a.seed, "shuffle"))?;
    create_out(&a.out)?;
    export_latents_csv(&a.out.join("latents.csv"), &latents, &labels)?;
    write_json(
        &a.out.join("separation.json"),
        &json!({ "ratio": ratio, "shuffled_ratio": shuffled, "n_latents": latents.len() }),
    )?;
    println!("separation {ratio:.4} shuffled {shuffled:.4}");
    Ok(())
}

fn train_denoiser_cmd(a: &TrainDenoiserArgs) -> Result<()> {
    let mut config: DenoiserConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(p, e))?
        }
        None => DenoiserConfig::default(),
    };
    config = crate::training::apply_json_overrides(&config, &a.overrides)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if a.camera.is_some() {
        config.camera = a.camera.clone();
    }
    config.validate()?;
    if a.regime.needs_generator() && a.checkpoint.is_none() {
        return Err(Error::Config(format!("regime {:?} needs --checkpoint", a.regime)));
    }
    let data = open_dataset(&a.data)?;
    let models = a.checkpoint.as_deref().map(load_models).transpose()?;
    let learned = models.as_ref().map(|(c, g, e)| LearnedSource {
        generator: g,
        encoder: c.use_encoder.then_some(e),
    });
    let (model, log) = train_denoiser(a.regime, learned, &data, &config)?;
    create_out(&a.out)?;
    model.save(&a.out.join("denoiser.ckpt"))?;
    let log_path = a.out.join("train_log.csv");
    let mut w = csv::Writer::from_path(&log_path).map_err(|e| crate::evaluation::csv_error(&log_path, e))?;
    w.write_record(["step", "loss"]).map_err(|e| crate::evaluation::csv_error(&log_path, e))?;
    for (s, l) in log.losses.iter().enumerate() {
        w.write_record([(s + 1).to_string(), l.to_string()])
            .map_err(|e| crate::evaluation::csv_error(&log_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&log_path, e))?;
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "regime": a.regime,
            "config": config,
            "synthetic_samples": log.synthetic_samples,
            "real_samples": log.real_samples,
        }),
    )?;
    println!("synthetic {} real {}", log.synthetic_samples, log.real_samples);
    Ok(())
}

fn eval_denoiser_cmd(a: &EvalDenoiserArgs) -> Result<()> {
    let data = open_dataset(&a.data)?;
    let model = Denoiser::load(&a.model)?;
    let targets = data.indices(Split::Test);
    let eval = eval_denoiser(&model, &data, &targets)?;
    create_out(&a.out)?;
    write_denoise_csv(&a.out.join("denoise.csv"), &a.label, &eval)?;
    println!("psnr {:.4} ssim {:.4}", eval.overall.psnr, eval.overall.ssim);
    Ok(())
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn report(a: &ReportArgs) -> Result<()> {
    let missing: Vec<PathBuf> = a.inputs.iter().filter(|p| !p.is_file()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    let mut tables = Vec::new();
    for p in &a.inputs {
        let mut r = csv::Reader::from_path(p).map_err(|e| crate::evaluation::csv_error(p, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| crate::evaluation::csv_error(p, e))?
            .iter()
            .map(String::from)
            .collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|x| x.iter().map(String::from).collect::<Vec<_>>()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| crate::evaluation::csv_error(p, e))?;
        tables.push((p.clone(), header, rows));
    }
    let mut columns: Vec<String> = Vec::new();
    for (_, header, _) in &tables {
        for h in header {
            if !columns.contains(h) {
                columns.push(h.clone());
            }
        }
    }
    create_out(&a.out)?;
    let out = a.out.join("report.csv");
    let mut w = csv::Writer::from_path(&out).map_err(|e| crate::evaluation::csv_error(&out, e))?;
    let mut header = vec!["source".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).map_err(|e| crate::evaluation::csv_error(&out, e))?;
    let mut merged = Vec::new();
    for (path, h, rows) in &tables {
        for row in rows {
            let mut rec = vec![path.display().to_string()];
            rec.extend(columns.iter().map(|c| h.iter().position(|x| x == c).map(|i| row[i].clone()).unwrap_or_default()));
            w.write_record(&rec).map_err(|e| crate::evaluation::csv_error(&out, e))?;
            merged.push(rec);
        }
    }
    w.flush().map_err(|e| Error::io(&out, e))?;
    if a.html {
        let mut html = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>noisegen report</title></head><body>\n<table border=\"1\">\n<tr>");
        for h in &header {
            html.push_str(&format!("<th>{}</th>", html_escape(h)));
        }
        html.push_str("</tr>\n");
        for rec in &merged {
            html.push_str("<tr>");
            for v in rec {
                html.push_str(&format!("<td>{}</td>", html_escape(v)));
            }
            html.push_str("</tr>\n");
        }
        html.push_str("</table>\n</body></html>\n");
        let path = a.out.join("report.html");
        crate::data_model::atomic_write(&path, html.as_bytes())?;
    }
    println!("{} rows", merged.len());
    Ok(())
}
