use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fraction of samples outside the histogram range that triggers a warning.
pub const CLIP_WARNING_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KlConfig {
    pub bin_count: usize,
    pub range: [f64; 2],
    pub smoothing_epsilon: f64,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self {
            bin_count: 201,
            range: [-0.5, 0.5],
            smoothing_epsilon: 1e-12,
        }
    }
}

impl KlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bin_count < 2 {
            return Err(Error::Config(format!("bin_count must be at least 2, got {}", self.bin_count)));
        }
        let [lo, hi] = self.range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("invalid histogram range [{lo}, {hi}]")));
        }
        if !(self.smoothing_epsilon >= 0.0) {
            return Err(Error::Config("smoothing_epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlValue {
    pub kl: f64,
    /// Largest out-of-range fraction over the two sample sets.
    pub clipped_fraction: f64,
}

impl KlValue {
    pub fn clipping_warning(&self) -> bool {
        self.clipped_fraction > CLIP_WARNING_FRACTION
    }
}

/// Normalized, smoothed histogram. Out-of-range values land in the edge bins.
pub fn histogram(samples: &[f32], cfg: &KlConfig) -> Result<(Vec<f64>, f64)> {
    if samples.is_empty() {
        return Err(Error::Argument("histogram needs at least one sample".into()));
    }
    let [lo, hi] = cfg.range;
    let bins = cfg.bin_count;
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    let mut clipped = 0u64;
    for &s in samples {
        let s = f64::from(s);
        if !s.is_finite() {
            return Err(Error::Argument("non-finite noise sample".into()));
        }
        if s < lo || s > hi {
            clipped += 1;
        }
        let b = ((s - lo) / width).floor().clamp(0.0, (bins - 1) as f64) as usize;
        counts[b] += 1;
    }
    let n = samples.len() as f64;
    let eps = cfg.smoothing_epsilon;
    let z = 1.0 + eps * bins as f64;
    let hist = counts.iter().map(|&c| (c as f64 / n + eps) / z).collect();
    Ok((hist, clipped as f64 / n))
}

/// `sum_b p_b ln(p_b / q_b)` with zero-probability bins of `p` skipped.
pub fn kl_from_histograms(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Dimension(format!("histograms of length {} and {}", p.len(), q.len())));
    }
    let mut kl = 0.0;
    for (&pb, &qb) in p.iter().zip(q) {
        if pb > 0.0 {
            if qb <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += pb * (pb / qb).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// KL divergence of the synthetic noise histogram from the real one.
pub fn histogram_kl(real: &[f32], synthetic: &[f32], cfg: &KlConfig) -> Result<KlValue> {
    cfg.validate()?;
    let (p, clip_p) = histogram(real, cfg)?;
    let (q, clip_q) = histogram(synthetic, cfg)?;
    Ok(KlValue {
        kl: kl_from_histograms(&p, &q)?,
        clipped_fraction: clip_p.max(clip_q),
    })
}
