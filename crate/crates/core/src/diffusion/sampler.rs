use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::denoiser::Denoise;
use super::schedule::NoiseSchedule;
use crate::dataset::{Coordinate, Fingerprint, FingerprintDataset, NormalizationParams};
use crate::error::{Error, Result};
use crate::initializer::LocationSplit;
use crate::seed;

/// Maps a raw generated vector onto valid fingerprint values: entries below
/// `detect_floor` become 0, the rest are clamped to `[detect_floor, 1]`.
pub fn postprocess(v: f64, detect_floor: f64) -> f64 {
    if v < detect_floor {
        0.0
    } else {
        v.min(1.0)
    }
}

/// Ancestral sampling of `n` fingerprints conditioned on `unseen`.
///
/// Starts from standard normal noise; at every step the clamped
/// clean-signal prediction and the current state give the Gaussian
/// posterior mean, and posterior-variance noise is added except at the last
/// step.
pub fn sample<D: Denoise + ?Sized>(
    net: &D,
    unseen: &Coordinate,
    schedule: &NoiseSchedule,
    n: usize,
    detect_floor: f64,
    seed: u64,
) -> Result<Vec<Fingerprint>> {
    if n == 0 {
        return Err(Error::Size("requested zero samples".into()));
    }
    if let Some(steps) = net.diffusion_steps() {
        if steps != schedule.steps() {
            return Err(Error::Shape(format!(
                "denoiser built for {steps} steps, schedule has {}",
                schedule.steps()
            )));
        }
    }
    let a = net.ap_count();
    let mut rng = seed::rng(seed);
    let mut x = Array2::from_shape_simple_fn((n, a), || rng.sample::<f64, _>(StandardNormal));
    let conditions = vec![*unseen; n];
    for t in (1..=schedule.steps()).rev() {
        let mut clean = net.predict_clean(&vec![t; n], &conditions, x.view())?;
        if clean.dim() != (n, a) {
            return Err(Error::Shape(format!("denoiser returned {:?}, expected {:?}", clean.dim(), (n, a))));
        }
        clean.mapv_inplace(|v| v.clamp(0.0, 1.0));
        let (c_clean, c_noisy, variance) = schedule.posterior(t)?;
        x = clean * c_clean + &(x * c_noisy);
        if t > 1 {
            let sd = variance.sqrt();
            x.mapv_inplace(|v| v + sd * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(x
        .rows()
        .into_iter()
        .map(|row| Fingerprint::new(row.iter().map(|&v| postprocess(v, detect_floor)).collect(), *unseen))
        .collect())
}

/// Samples `samples_per_unseen` fingerprints at every unseen location. Each
/// location has its own seed substream, so locations are generated in
/// parallel without affecting the output.
pub fn generate_unseen_map<D: Denoise + ?Sized>(
    net: &D,
    split: &LocationSplit,
    schedule: &NoiseSchedule,
    samples_per_unseen: usize,
    norm: &NormalizationParams,
    seed: u64,
) -> Result<FingerprintDataset> {
    norm.validate()?;
    let per_location = split
        .unseen
        .par_iter()
        .enumerate()
        .map(|(i, loc)| sample(net, loc, schedule, samples_per_unseen, norm.detect_floor, seed::substream(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    FingerprintDataset::with_locations(
        per_location.into_iter().flatten().collect(),
        net.ap_count(),
        *norm,
        split.unseen.clone(),
    )
}
