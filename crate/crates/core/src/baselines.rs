//! Reference augmenters: spatial interpolation and plain passthrough.

use crate::dataset::{Coordinate, Fingerprint, FingerprintDataset};
use crate::error::{Error, Result};
use crate::initializer::LocationSplit;

pub const DEFAULT_INTERPOLATION_K: usize = 3;

/// Mean fingerprint at each distinct location, in dataset location order.
pub fn location_means(data: &FingerprintDataset) -> Vec<(Coordinate, Vec<f64>)> {
    let a = data.ap_count();
    let mut sums: Vec<(Coordinate, Vec<f64>, usize)> = data
        .locations()
        .iter()
        .map(|&c| (c, vec![0.0; a], 0))
        .collect();
    for s in data.samples() {
        let slot = sums
            .iter_mut()
            .find(|e| e.0.key() == s.location.key())
            .expect("dataset locations cover every sample");
        for (acc, v) in slot.1.iter_mut().zip(&s.rss) {
            *acc += v;
        }
        slot.2 += 1;
    }
    sums.into_iter()
        .filter(|e| e.2 > 0)
        .map(|(c, sum, n)| (c, sum.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}

fn interpolate_from_means(means: &[(Coordinate, Vec<f64>)], target: &Coordinate, k: usize, floor: f64) -> Vec<f64> {
    let mut nearest: Vec<(f64, usize)> = means
        .iter()
        .enumerate()
        .map(|(i, (c, _))| (c.distance(target), i))
        .collect();
    nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    nearest.truncate(k);
    if nearest[0].0 == 0.0 {
        return means[nearest[0].1].1.clone();
    }
    let total: f64 = nearest.iter().map(|n| 1.0 / n.0).sum();
    let mut out = vec![0.0; means[0].1.len()];
    for &(d, i) in &nearest {
        let w = 1.0 / d / total;
        for (o, v) in out.iter_mut().zip(&means[i].1) {
            *o += w * v;
        }
    }
    for v in &mut out {
        if *v < floor {
            *v = 0.0;
        }
    }
    out
}

/// Inverse-distance-weighted average of the per-location mean fingerprints
/// of the `k` nearest seen locations. A target that coincides with a seen
/// location gets that location's mean unchanged.
pub fn knn_spatial_interpolate(seen: &FingerprintDataset, target: &Coordinate, k: usize) -> Result<Fingerprint> {
    if k == 0 {
        return Err(Error::Config("interpolation k must be positive".into()));
    }
    let means = location_means(seen);
    if means.len() < k {
        return Err(Error::Size(format!(
            "interpolation needs at least {k} seen locations, have {}",
            means.len()
        )));
    }
    let rss = interpolate_from_means(&means, target, k, seen.norm().detect_floor);
    Ok(Fingerprint::new(rss, *target))
}

/// Interpolated fingerprints for every unseen location, `copies` each.
pub fn interpolate_unseen(
    seen: &FingerprintDataset,
    split: &LocationSplit,
    k: usize,
    copies: usize,
) -> Result<FingerprintDataset> {
    if k == 0 {
        return Err(Error::Config("interpolation k must be positive".into()));
    }
    let means = location_means(seen);
    if means.len() < k {
        return Err(Error::Size(format!(
            "interpolation needs at least {k} seen locations, have {}",
            means.len()
        )));
    }
    let floor = seen.norm().detect_floor;
    let mut samples = Vec::with_capacity(split.unseen.len() * copies);
    for target in &split.unseen {
        let rss = interpolate_from_means(&means, target, k, floor);
        samples.extend(std::iter::repeat_n(Fingerprint::new(rss, *target), copies));
    }
    FingerprintDataset::with_locations(samples, seen.ap_count(), *seen.norm(), split.unseen.clone())
}

/// Seen-location samples only.
pub fn no_augmentation(data: &FingerprintDataset, split: &LocationSplit) -> Result<FingerprintDataset> {
    data.filter_locations(|c| split.is_seen(c))
}
