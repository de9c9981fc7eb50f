//! Heuristic augmentation of surveyed fingerprints.
//!
//! Replicas imitate temporal signal variation: detected readings receive
//! Gaussian jitter, then readings that end up below a threshold are dropped
//! to zero. Absent transmitters are never resurrected.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Fingerprint, FingerprintDataset};
use crate::error::{Error, Result};
use crate::initializer::LocationSplit;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    /// Standard deviation of the jitter, normalized RSS units.
    pub noise_sigma: f64,
    /// Detected readings strictly below this (normalized) become zero.
    pub drop_threshold: f64,
    pub replicas_per_sample: usize,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            noise_sigma: 0.02,
            drop_threshold: 0.15,
            replicas_per_sample: 4,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(0.0..1.0).contains(&self.drop_threshold) {
            return Err(Error::Config(format!(
                "drop_threshold must lie in [0, 1), got {}",
                self.drop_threshold
            )));
        }
        Ok(())
    }
}

/// Adds independent `N(0, sigma^2)` noise to every detected entry and clamps
/// the result to `[detect_floor, 1]`. Zero entries stay zero.
pub fn inject_gaussian_noise<R: Rng + ?Sized>(
    fp: &Fingerprint,
    sigma: f64,
    detect_floor: f64,
    rng: &mut R,
) -> Fingerprint {
    let rss = fp
        .rss
        .iter()
        .map(|&v| {
            if v > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                (v + sigma * z).clamp(detect_floor, 1.0)
            } else {
                v
            }
        })
        .collect();
    Fingerprint { rss, ..fp.clone() }
}

pub fn drop_weak_transmitters(fp: &Fingerprint, threshold: f64) -> Fingerprint {
    let rss = fp
        .rss
        .iter()
        .map(|&v| if v > 0.0 && v < threshold { 0.0 } else { v })
        .collect();
    Fingerprint { rss, ..fp.clone() }
}

/// Seen-location samples followed by `replicas_per_sample` noisy, thinned
/// replicas of each. Samples at any other location are discarded.
///
/// Replica streams are seeded per source sample, so output does not depend
/// on evaluation order.
pub fn augment_seen(
    data: &FingerprintDataset,
    split: &LocationSplit,
    cfg: &AugmentationConfig,
) -> Result<FingerprintDataset> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Size("nothing to augment: dataset is empty".into()));
    }
    for c in &split.seen {
        if !data.locations().iter().any(|l| l.key() == c.key()) {
            return Err(Error::Consistency(format!(
                "seen location ({}, {}) does not occur in the data",
                c.x, c.y
            )));
        }
    }
    let floor = data.norm().detect_floor;
    if cfg.drop_threshold <= floor && cfg.drop_threshold > 0.0 {
        log::warn!(
            "drop_threshold {} is not above detect_floor {floor}; dropout will never fire",
            cfg.drop_threshold
        );
    }

    let originals: Vec<&Fingerprint> = data
        .samples()
        .iter()
        .filter(|s| split.is_seen(&s.location))
        .collect();
    let mut out: Vec<Fingerprint> = originals.iter().map(|&s| s.clone()).collect();
    out.reserve(originals.len() * cfg.replicas_per_sample);
    for (i, src) in originals.iter().enumerate() {
        let mut rng = seed::rng(seed::substream(cfg.seed, i as u64));
        for _ in 0..cfg.replicas_per_sample {
            let noisy = inject_gaussian_noise(src, cfg.noise_sigma, floor, &mut rng);
            out.push(drop_weak_transmitters(&noisy, cfg.drop_threshold));
        }
    }
    let locations = data
        .locations()
        .iter()
        .copied()
        .filter(|c| split.is_seen(c))
        .collect();
    FingerprintDataset::with_locations(out, data.ap_count(), *data.norm(), locations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Coordinate, NormalizationParams};

    fn fp(rss: &[f64]) -> Fingerprint {
        Fingerprint::new(rss.to_vec(), Coordinate { x: 1.0, y: 2.0 })
    }

    #[test]
    fn zero_sigma_is_identity() {
        let f = fp(&[0.0, 0.3, 1.0]);
        let mut rng = seed::rng(1);
        assert_eq!(inject_gaussian_noise(&f, 0.0, 0.1, &mut rng), f);
    }

    #[test]
    fn absent_entries_stay_absent() {
        let f = fp(&[0.0; 6]);
        let mut rng = seed::rng(1);
        assert_eq!(inject_gaussian_noise(&f, 0.5, 0.1, &mut rng), f);
    }

    #[test]
    fn noise_moments() {
        // Monte Carlo check against N(0.5, 0.05^2); the clamp bounds are
        // 8 sigma away.
        let f = fp(&[0.5]);
        let mut rng = seed::rng(42);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| inject_gaussian_noise(&f, 0.05, 0.1, &mut rng).rss[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.5).abs() < 0.001, "mean {mean}");
        assert!((var.sqrt() - 0.05).abs() < 0.002, "std {}", var.sqrt());
    }

    #[test]
    fn dropout_examples() {
        assert_eq!(drop_weak_transmitters(&fp(&[0.0, 0.12, 0.5]), 0.2).rss, vec![0.0, 0.0, 0.5]);
        let f = fp(&[0.0, 0.12, 0.5]);
        assert_eq!(drop_weak_transmitters(&f, 0.0), f);
        let once = drop_weak_transmitters(&f, 0.3);
        assert_eq!(drop_weak_transmitters(&once, 0.3), once);
    }

    fn two_location_data() -> (FingerprintDataset, LocationSplit) {
        let a = Coordinate { x: 0.0, y: 0.0 };
        let b = Coordinate { x: 5.0, y: 0.0 };
        let mut samples = Vec::new();
        for i in 0..10 {
            samples.push(Fingerprint::new(vec![0.2 + 0.01 * i as f64, 0.0, 0.9], a));
        }
        for _ in 0..3 {
            samples.push(Fingerprint::new(vec![0.5, 0.5, 0.5], b));
        }
        let data = FingerprintDataset::new(samples, 3, NormalizationParams::default()).unwrap();
        (data, LocationSplit { seen: vec![a], unseen: vec![b] })
    }

    #[test]
    fn augment_counts_and_exclusion() {
        let (data, split) = two_location_data();
        let cfg = AugmentationConfig { replicas_per_sample: 4, seed: 3, ..Default::default() };
        let out = augment_seen(&data, &split, &cfg).unwrap();
        assert_eq!(out.len(), 50);
        assert!(out.samples().iter().all(|s| split.is_seen(&s.location)));
        assert_eq!(out.locations(), &split.seen[..]);

        let none = AugmentationConfig { replicas_per_sample: 0, ..cfg };
        let plain = augment_seen(&data, &split, &none).unwrap();
        assert_eq!(plain.samples(), &data.samples()[..10]);
    }

    #[test]
    fn augment_requires_seen_locations_in_data() {
        let (data, _) = two_location_data();
        let split = LocationSplit { seen: vec![Coordinate { x: 9.0, y: 9.0 }], unseen: vec![] };
        assert!(matches!(
            augment_seen(&data, &split, &AugmentationConfig::default()),
            Err(Error::Consistency(_))
        ));
    }
}
