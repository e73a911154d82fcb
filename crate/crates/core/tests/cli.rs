use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_noisegen");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(root: &Path, seed: &str) -> PathBuf {
    let out = root.join(format!("data{seed}"));
    run_ok(&[
        "make-dataset",
        "--cameras",
        "2",
        "--scenes-train",
        "a",
        "--scenes-test",
        "b",
        "--patches-per-scene",
        "6",
        "--gains",
        "1,4",
        "--scene-size",
        "80",
        "--seed",
        seed,
        "--out",
        s(&out),
    ]);
    out
}

const TINY: [&str; 12] = [
    "--set",
    "net.base_channels=2",
    "--set",
    "epochs=2",
    "--set",
    "steps_per_epoch=2",
    "--set",
    "batch_size=4",
    "--set",
    "val_patches=4",
    "--set",
    "net.residual_scale=0.05",
];

fn train_tiny(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(data), "--out", s(out)];
    args.extend(TINY);
    args.extend(extra);
    run(&args)
}

fn metrics_without_time(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

#[test]
fn make_dataset_counts_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let stdout = run_ok(&[
        "make-dataset",
        "--cameras",
        "3",
        "--scenes-train",
        "s0,s1",
        "--scenes-test",
        "t0",
        "--patches-per-scene",
        "500",
        "--out",
        s(&out),
    ]);
    assert_eq!(stdout.trim(), "4500 pairs");
    let data = noisegen::data_model::Dataset::open(&out).unwrap();
    assert_eq!(data.pairs.len(), 4500);
    data.manifest.validate().unwrap();
}

#[test]
fn make_dataset_is_deterministic_and_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_dataset(dir.path(), "3");
    let b = dir.path().join("copy");
    fs::create_dir(&b).unwrap();
    fs::write(b.join("stale"), "x").unwrap();
    let args = |force: bool| {
        let mut v = vec![
            "make-dataset",
            "--cameras",
            "2",
            "--scenes-train",
            "a",
            "--scenes-test",
            "b",
            "--patches-per-scene",
            "6",
            "--gains",
            "1,4",
            "--scene-size",
            "80",
            "--seed",
            "3",
            "--out",
            s(&b),
        ];
        if force {
            v.push("--force");
        }
        v
    };
    let refused = run(&args(false));
    assert_eq!(code(&refused), 2);
    assert!(b.join("stale").exists());
    run_ok(&args(true));
    assert!(!b.join("stale").exists());
    let ma = noisegen::data_model::read_manifest(&a).unwrap();
    assert_eq!(ma, noisegen::data_model::read_manifest(&b).unwrap());
    for p in &ma.pairs {
        for f in [&p.clean, &p.noisy] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        }
    }

    let overlap = run(&[
        "make-dataset",
        "--scenes-train",
        "a,b",
        "--scenes-test",
        "b",
        "--out",
        s(&dir.path().join("bad")),
    ]);
    assert_eq!(code(&overlap), 2);
    assert!(!dir.path().join("bad").exists());
}

#[test]
fn train_reports_missing_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(&dir.path().join("nope"), &dir.path().join("run"), &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no dataset"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn train_writes_metrics_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "1");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train_tiny(&data, out, &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let rows = metrics_without_time(&a.join("metrics.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("epoch,l_adv,l_fm,l_triplet,l_critic,gp,val_kl"));
    assert_eq!(rows, metrics_without_time(&b.join("metrics.csv")));

    assert_eq!(code(&train_tiny(&data, &a, &[])), 2);
    let resumed = train_tiny(&data, &a, &["--resume"]);
    assert!(resumed.status.success());
    assert_eq!(metrics_without_time(&a.join("metrics.csv")), rows);

    let ablation = dir.path().join("no_triplet");
    assert!(train_tiny(&data, &ablation, &["--set", "use_triplet=false"]).status.success());
    let text = fs::read_to_string(ablation.join("metrics.csv")).unwrap();
    let first = text.lines().nth(1).unwrap();
    assert_eq!(first.split(',').nth(3), Some(""));
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(ablation.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["use_triplet"], false);

    let bad_key = train_tiny(&data, &dir.path().join("c"), &["--set", "no_such_key=1"]);
    assert_eq!(code(&bad_key), 2);
}

#[test]
fn non_finite_training_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "2");
    let out = dir.path().join("nan");
    let o = train_tiny(&data, &out, &["--set", "lr=1e38", "--set", "weights.lambda_gp=1e38"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("nan_snapshot.ckpt").exists());
}

#[test]
fn downstream_commands() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "4");
    let run_dir = dir.path().join("run");
    assert!(train_tiny(&data, &run_dir, &[]).status.success());
    let ckpt = run_dir.join("latest.ckpt");

    let samples = dir.path().join("samples");
    run_ok(&[
        "sample-noise",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--camera",
        "cam1",
        "--count",
        "4",
        "--out",
        s(&samples),
    ]);
    let payloads = files_with_ext(&samples, "f32");
    assert_eq!(payloads.len(), 16);
    assert!(payloads.iter().all(|p| fs::metadata(p).unwrap().len() == 4 * 32 * 32 * 4));
    let previews = files_with_ext(&samples, "png");
    assert_eq!(previews.len(), 16);
    assert!(samples.join("final_0000_x10.png").exists());
    let img = image::open(samples.join("real_0002_x10.png")).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (64, 64));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(samples.join("samples.json")).unwrap()).unwrap();
    assert_eq!(meta["preview_scale"], 10.0);
    for sample in meta["samples"].as_array().unwrap() {
        assert!(sample["residual_identity_error"].as_f64().unwrap() <= 1e-6);
    }
    let unknown = run(&[
        "sample-noise",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--camera",
        "cam9",
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(code(&unknown), 2);

    let kld = dir.path().join("kld");
    let stdout = run_ok(&[
        "eval-kld",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--out",
        s(&kld),
    ]);
    assert!(stdout.contains("ordering_holds"));
    let mut r = csv::Reader::from_path(kld.join("kld.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert!(header.contains(&"ordering_holds".to_string()));
    let models: Vec<String> = r.records().map(|x| x.unwrap()[0].to_string()).collect();
    assert_eq!(models, ["gaussian", "poisson_gaussian", "learned"]);
    assert!(kld.join("kld_rows.csv").exists());

    let lat = dir.path().join("lat");
    run_ok(&[
        "export-latents",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--per-camera",
        "4",
        "--out",
        s(&lat),
    ]);
    let text = fs::read_to_string(lat.join("latents.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 8);
    assert_eq!(lines[0].split(',').count(), 1 + 16);
    assert!(lines[1].starts_with("cam0,"));
    let sep: serde_json::Value = serde_json::from_str(&fs::read_to_string(lat.join("separation.json")).unwrap()).unwrap();
    assert!(sep["ratio"].as_f64().unwrap().is_finite());

    let den_args = ["--set", "width=4", "--set", "steps=3", "--set", "batch_size=6"];
    let missing = {
        let bad = dir.path().join("dn_bad");
        let mut a = vec!["train-denoiser", "--regime", "learned_model", "--data", s(&data), "--out", s(&bad)];
        a.extend(den_args);
        run(&a)
    };
    assert_eq!(code(&missing), 2);
    let dn = dir.path().join("dn");
    let mut a = vec!["train-denoiser", "--regime", "learned_plus_real", "--checkpoint", s(&ckpt), "--data", s(&data)];
    a.extend(["--out", s(&dn)]);
    a.extend(den_args);
    let stdout = run_ok(&a);
    assert_eq!(stdout.trim(), "synthetic 15 real 3");
    let log = fs::read_to_string(dn.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let ev = dir.path().join("ev");
    run_ok(&[
        "eval-denoiser",
        "--model",
        s(&dn.join("denoiser.ckpt")),
        "--data",
        s(&data),
        "--label",
        "mixed",
        "--out",
        s(&ev),
    ]);
    let text = fs::read_to_string(ev.join("denoise.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3);
    assert!(text.lines().last().unwrap().starts_with("mixed,all,"));

    let rep = dir.path().join("rep");
    run_ok(&[
        "report",
        "--input",
        s(&kld.join("kld.csv")),
        "--input",
        s(&ev.join("denoise.csv")),
        "--html",
        "--out",
        s(&rep),
    ]);
    assert!(rep.join("report.csv").exists() && rep.join("report.html").exists());
}

#[test]
fn report_lists_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("kld.csv"), dir.path().join("denoise.csv"));
    let out = run(&["report", "--input", s(&a), "--input", s(&b), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&out), 3);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kld.csv") && err.contains("denoise.csv"), "{err}");
}

#[test]
fn worker_variable_is_validated() {
    let out = Command::new(BIN)
        .args(["report", "--input", "x.csv", "--out", "y"])
        .env("NOISEGEN_NUM_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&run(&["bogus"])), 2);
    assert_eq!(code(&run(&["train"])), 2);
    assert!(run(&["--help"]).status.success());
}
