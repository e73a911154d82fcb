use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::networks::LatentVector;
use crate::{Error, Result};

fn centroid(points: &[&LatentVector]) -> Vec<f64> {
    let dim = points[0].len();
    let mut c = vec![0.0; dim];
    for p in points {
        for (ci, &v) in c.iter_mut().zip(p.as_slice()) {
            *ci += f64::from(v);
        }
    }
    c.iter_mut().for_each(|v| *v /= points.len() as f64);
    c
}

fn dist(a: &[f64], b: impl Iterator<Item = f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean inter-camera centroid distance over mean point-to-own-centroid distance.
pub fn latent_separation(latents: &[LatentVector], labels: &[String]) -> Result<f64> {
    if latents.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} latents but {} labels",
            latents.len(),
            labels.len()
        )));
    }
    let mut groups: BTreeMap<&str, Vec<&LatentVector>> = BTreeMap::new();
    for (l, c) in latents.iter().zip(labels) {
        groups.entry(c.as_str()).or_default().push(l);
    }
    if groups.len() < 2 {
        return Err(Error::Argument("latent separation needs at least two cameras".into()));
    }
    if let Some((cam, g)) = groups.iter().find(|(_, g)| g.len() < 2) {
        return Err(Error::Argument(format!("camera {cam} has {} latent(s); need 2", g.len())));
    }
    let dim = latents[0].len();
    if latents.iter().any(|l| l.len() != dim) {
        return Err(Error::Dimension("latent lengths differ".into()));
    }
    let centroids: Vec<(&str, Vec<f64>)> = groups.iter().map(|(c, g)| (*c, centroid(g))).collect();
    let mut inter = 0.0;
    let mut pairs = 0usize;
    for a in 0..centroids.len() {
        for b in a + 1..centroids.len() {
            inter += dist(&centroids[a].1, centroids[b].1.iter().copied());
            pairs += 1;
        }
    }
    inter /= pairs as f64;
    let mut intra = 0.0;
    for (cam, c) in &centroids {
        for p in &groups[cam] {
            intra += dist(c, p.as_slice().iter().map(|&v| f64::from(v)));
        }
    }
    intra /= latents.len() as f64;
    if intra <= 0.0 {
        return Err(Error::Argument("latents are identical within every camera; ratio undefined".into()));
    }
    Ok(inter / intra)
}

/// Mean separation ratio over `shuffles` random relabelings of the same latents.
pub fn shuffled_separation(latents: &[LatentVector], labels: &[String], shuffles: usize, seed: u64) -> Result<f64> {
    if shuffles == 0 {
        return Err(Error::Argument("need at least one shuffle".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = labels.to_vec();
    let mut sum = 0.0;
    for _ in 0..shuffles {
        shuffled.shuffle(&mut rng);
        sum += latent_separation(latents, &shuffled)?;
    }
    Ok(sum / shuffles as f64)
}

/// Writes `camera_id, v0, v1, ...` rows.
pub fn export_latents_csv(path: &Path, latents: &[LatentVector], labels: &[String]) -> Result<()> {
    let dim = latents.first().map(LatentVector::len).unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["camera_id".to_string()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (l, c) in latents.iter().zip(labels) {
        let mut rec = vec![c.clone()];
        rec.extend(l.as_slice().iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}
