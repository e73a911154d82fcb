//! End-to-end acceptance checks. Runs without the libtest harness so the
//! expensive desk-scale fixture is built once and shared.

mod data;
mod desk;
mod determinism;
mod gradients;
mod models;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn check(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    pub fn fail(detail: impl Into<String>) -> Self {
        Self::check(false, detail)
    }
}

/// Folds sub-checks into one outcome; every part must hold.
pub fn all(parts: Vec<Outcome>) -> Outcome {
    let pass = parts.iter().all(|p| p.pass);
    let detail = parts
        .iter()
        .map(|p| if p.pass { p.detail.clone() } else { format!("[failed] {}", p.detail) })
        .collect::<Vec<_>>()
        .join("; ");
    Outcome { pass, detail }
}

type Check = fn(&mut desk::Fixture) -> Outcome;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [(u32, &str, Check); 12] = [
        (1, "sampler fidelity", |_| models::sampler_fidelity()),
        (2, "kl oracle", |_| models::kl_oracle()),
        (3, "gradient suite", |_| gradients::gradient_suite()),
        (4, "penalty anchors", |_| models::penalty_anchors()),
        (5, "architecture audit", |_| models::architecture_audit()),
        (6, "baseline ordering", desk::baseline_ordering),
        (7, "triplet ablation ordering", desk::triplet_ablation),
        (8, "matched latent beats mismatched", desk::matched_latent),
        (9, "latent separation", desk::latent_separation),
        (10, "denoiser ordering", desk::denoiser_ordering),
        (11, "data-layer properties", |_| data::data_layer()),
        (12, "determinism", |_| determinism::determinism()),
    ];
    let filter: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut fixture = desk::Fixture::default();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&mut fixture)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Outcome::fail(format!("panicked: {msg}"))
            });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!outcome.pass);
        println!(
            "criterion {n}: {verdict} {name} ({:.1}s) {}",
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
