//! Fingerprint datasets: loading, normalization and the synthetic radio
//! environment used as a desk-scale ground truth.
//!
//! # File format
//!
//! UTF-8 comma-separated text with a header row. RSS columns are named
//! `AP001`, `AP002`, ... (the `WAP` prefix of the public UJIIndoorLoc files is
//! accepted as well) and hold raw dBm values or the "not detected" sentinel.
//! Coordinates live in `X` and `Y` (aliases `LONGITUDE`, `LATITUDE`), and an
//! optional `COLLECTOR` (alias `USERID`) column tags the collecting user.
//! Any other column is ignored, so the public dataset loads after filtering
//! rows down to one floor.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;

/// A planar location in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coordinate {
    pub x: f64,
    pub y: f64,
}

impl Coordinate {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Range(format!("non-finite coordinate ({x}, {y})")));
        }
        Ok(Coordinate { x, y })
    }

    pub fn distance(&self, other: &Coordinate) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Lexicographic order on (x, y); used for every deterministic tie-break.
    pub fn lex_cmp(&self, other: &Coordinate) -> Ordering {
        self.x
            .total_cmp(&other.x)
            .then_with(|| self.y.total_cmp(&other.y))
    }

    /// Bit-level identity key, suitable for hashing.
    pub fn key(&self) -> (u64, u64) {
        // -0.0 and 0.0 are the same location
        ((self.x + 0.0).to_bits(), (self.y + 0.0).to_bits())
    }
}

/// Axis-aligned bounding box of a set of locations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Coordinate,
    pub max: Coordinate,
}

impl Bounds {
    /// Strict constructor: both axes must have positive extent.
    pub fn new(min: Coordinate, max: Coordinate) -> Result<Self> {
        if !(max.x > min.x) || !(max.y > min.y) {
            return Err(Error::Config(format!(
                "degenerate bounds [{}, {}] x [{}, {}]",
                min.x, max.x, min.y, max.y
            )));
        }
        Ok(Bounds { min, max })
    }

    /// Bounding box of `points`. An axis with zero extent is widened by
    /// `pad` meters on each side so the box is never degenerate.
    pub fn enclosing(points: &[Coordinate], pad: f64) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::Size("cannot bound an empty point set".into()))?;
        let (mut lo, mut hi) = (*first, *first);
        for p in points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        if hi.x <= lo.x {
            lo.x -= pad;
            hi.x += pad;
        }
        if hi.y <= lo.y {
            lo.y -= pad;
            hi.y += pad;
        }
        Bounds::new(lo, hi)
    }

    /// Min-max scales `c` into the unit square (values outside the box map
    /// outside [0, 1]).
    pub fn unit(&self, c: &Coordinate) -> (f64, f64) {
        (
            (c.x - self.min.x) / (self.max.x - self.min.x),
            (c.y - self.min.y) / (self.max.y - self.min.y),
        )
    }

    pub fn from_unit(&self, u: f64, v: f64) -> Coordinate {
        Coordinate {
            x: self.min.x + u * (self.max.x - self.min.x),
            y: self.min.y + v * (self.max.y - self.min.y),
        }
    }
}

/// Mapping between raw dBm readings and the normalized [0, 1] scale.
///
/// Undetected transmitters map to exactly 0; detected readings map affinely
/// from `[rss_min, rss_max]` onto `[detect_floor, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationParams {
    pub rss_min: f64,
    pub rss_max: f64,
    pub sentinel_raw: f64,
    pub detect_floor: f64,
}

impl Default for NormalizationParams {
    fn default() -> Self {
        NormalizationParams {
            rss_min: -104.0,
            rss_max: 0.0,
            sentinel_raw: 100.0,
            detect_floor: 0.1,
        }
    }
}

impl NormalizationParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.rss_min, self.rss_max, self.sentinel_raw, self.detect_floor]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("normalization parameters must be finite".into()));
        }
        if self.rss_min >= self.rss_max {
            return Err(Error::Config(format!(
                "rss_min ({}) must be below rss_max ({})",
                self.rss_min, self.rss_max
            )));
        }
        if !(self.detect_floor > 0.0 && self.detect_floor <= 0.5) {
            return Err(Error::Config(format!(
                "detect_floor must lie in (0, 0.5], got {}",
                self.detect_floor
            )));
        }
        if self.sentinel_raw >= self.rss_min && self.sentinel_raw <= self.rss_max {
            return Err(Error::Config(format!(
                "sentinel {} collides with the detected range",
                self.sentinel_raw
            )));
        }
        Ok(())
    }

    /// True when `v` is a legal normalized entry: 0 or within [detect_floor, 1].
    pub fn is_valid_entry(&self, v: f64) -> bool {
        v == 0.0 || (v >= self.detect_floor && v <= 1.0)
    }
}

pub fn normalize_rss(raw: f64, params: &NormalizationParams) -> Result<f64> {
    if raw == params.sentinel_raw {
        return Ok(0.0);
    }
    if !(raw >= params.rss_min && raw <= params.rss_max) {
        return Err(Error::Range(format!(
            "raw RSS {raw} outside [{}, {}] and not the sentinel {}",
            params.rss_min, params.rss_max, params.sentinel_raw
        )));
    }
    let frac = (raw - params.rss_min) / (params.rss_max - params.rss_min);
    Ok(params.detect_floor + frac * (1.0 - params.detect_floor))
}

/// Inverse of [`normalize_rss`]. Values in `(0, detect_floor)` are treated as
/// undetected and map to the sentinel.
pub fn denormalize_rss(v: f64, params: &NormalizationParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Range(format!("normalized RSS {v} outside [0, 1]")));
    }
    if v < params.detect_floor {
        return Ok(params.sentinel_raw);
    }
    let frac = (v - params.detect_floor) / (1.0 - params.detect_floor);
    Ok(params.rss_min + frac * (params.rss_max - params.rss_min))
}

/// One RSS vector tagged with the location where it was measured.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub rss: Vec<f64>,
    pub location: Coordinate,
    pub collector_id: Option<u32>,
}

impl Fingerprint {
    pub fn new(rss: Vec<f64>, location: Coordinate) -> Self {
        Fingerprint {
            rss,
            location,
            collector_id: None,
        }
    }
}

/// Fingerprints sharing one AP universe and one normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDataset {
    samples: Vec<Fingerprint>,
    ap_count: usize,
    norm: NormalizationParams,
    locations: Vec<Coordinate>,
}

impl FingerprintDataset {
    /// Builds a dataset whose location list is the distinct sample locations
    /// in order of first appearance.
    pub fn new(
        samples: Vec<Fingerprint>,
        ap_count: usize,
        norm: NormalizationParams,
    ) -> Result<Self> {
        let locations = distinct_locations(samples.iter().map(|s| s.location));
        Self::with_locations(samples, ap_count, norm, locations)
    }

    /// Builds a dataset with an explicit survey grid, which may include
    /// locations without samples.
    pub fn with_locations(
        samples: Vec<Fingerprint>,
        ap_count: usize,
        norm: NormalizationParams,
        locations: Vec<Coordinate>,
    ) -> Result<Self> {
        norm.validate()?;
        if ap_count == 0 {
            return Err(Error::Size("a dataset needs at least one AP".into()));
        }
        let known: HashSet<_> = locations.iter().map(Coordinate::key).collect();
        if known.len() != locations.len() {
            return Err(Error::Consistency("duplicate entries in location list".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.rss.len() != ap_count {
                return Err(Error::Shape(format!(
                    "sample {i} has {} RSS entries, expected {ap_count}",
                    s.rss.len()
                )));
            }
            if let Some(v) = s.rss.iter().find(|v| !norm.is_valid_entry(**v)) {
                return Err(Error::Range(format!(
                    "sample {i} has entry {v} outside {{0}} u [{}, 1]",
                    norm.detect_floor
                )));
            }
            if !known.contains(&s.location.key()) {
                return Err(Error::Consistency(format!(
                    "sample {i} at ({}, {}) is not on the location list",
                    s.location.x, s.location.y
                )));
            }
        }
        Ok(FingerprintDataset {
            samples,
            ap_count,
            norm,
            locations,
        })
    }

    pub fn samples(&self) -> &[Fingerprint] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Fingerprint> {
        self.samples
    }

    pub fn ap_count(&self) -> usize {
        self.ap_count
    }

    pub fn norm(&self) -> &NormalizationParams {
        &self.norm
    }

    pub fn locations(&self) -> &[Coordinate] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples whose location satisfies `keep`, with the location list
    /// restricted accordingly.
    pub fn filter_locations(&self, mut keep: impl FnMut(&Coordinate) -> bool) -> Result<Self> {
        let locations: Vec<_> = self.locations.iter().copied().filter(|c| keep(c)).collect();
        let allowed: HashSet<_> = locations.iter().map(Coordinate::key).collect();
        let samples = self
            .samples
            .iter()
            .filter(|s| allowed.contains(&s.location.key()))
            .cloned()
            .collect();
        Self::with_locations(samples, self.ap_count, self.norm, locations)
    }

    /// Concatenates two datasets over the same AP universe.
    pub fn merge(&self, other: &FingerprintDataset) -> Result<Self> {
        if self.ap_count != other.ap_count || self.norm != other.norm {
            return Err(Error::Consistency(
                "cannot merge datasets with different APs or normalization".into(),
            ));
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        let locations = distinct_locations(
            self.locations.iter().chain(other.locations.iter()).copied(),
        );
        Self::with_locations(samples, self.ap_count, self.norm, locations)
    }
}

pub(crate) fn distinct_locations(iter: impl IntoIterator<Item = Coordinate>) -> Vec<Coordinate> {
    let mut seen = HashSet::new();
    iter.into_iter().filter(|c| seen.insert(c.key())).collect()
}

#[derive(Debug, Default)]
struct Columns {
    rss: Vec<usize>,
    x: Option<usize>,
    y: Option<usize>,
    collector: Option<usize>,
}

fn is_ap_column(name: &str) -> bool {
    let upper = name.to_ascii_uppercase();
    let digits = upper
        .strip_prefix("WAP")
        .or_else(|| upper.strip_prefix("AP"))
        .unwrap_or("");
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

fn classify_header(header: &csv::StringRecord) -> Columns {
    let mut cols = Columns::default();
    for (i, name) in header.iter().enumerate() {
        match name.trim().to_ascii_uppercase().as_str() {
            "X" | "LONGITUDE" => cols.x = Some(i),
            "Y" | "LATITUDE" => cols.y = Some(i),
            "COLLECTOR" | "USERID" => cols.collector = Some(i),
            n if is_ap_column(n) => cols.rss.push(i),
            _ => {}
        }
    }
    cols
}

pub fn load_dataset(path: impl AsRef<Path>, params: &NormalizationParams) -> Result<FingerprintDataset> {
    let path = path.as_ref();
    params.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let cols = classify_header(&header);
    if cols.rss.is_empty() {
        return Err(parse_err(1, "header names no AP columns".into()));
    }
    let (xi, yi) = match (cols.x, cols.y) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(parse_err(1, "header lacks X and Y columns".into())),
    };

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let number = |i: usize| -> Result<f64> {
            let field = &record[i];
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("column {}: `{field}` is not a finite number", &header[i])))
        };
        let rss = cols
            .rss
            .iter()
            .map(|&i| {
                let raw = number(i)?;
                normalize_rss(raw, params).map_err(|e| parse_err(line, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let location = Coordinate::new(number(xi)?, number(yi)?)?;
        let collector_id = match cols.collector {
            Some(i) if !record[i].is_empty() => Some(
                record[i]
                    .parse::<u32>()
                    .map_err(|_| parse_err(line, format!("collector `{}` is not an integer", &record[i])))?,
            ),
            _ => None,
        };
        samples.push(Fingerprint {
            rss,
            location,
            collector_id,
        });
    }
    FingerprintDataset::new(samples, cols.rss.len(), *params)
}

/// Writes `data` in the format read by [`load_dataset`]. Raw values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_dataset(path: impl AsRef<Path>, data: &FingerprintDataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let with_collector = data.samples.iter().any(|s| s.collector_id.is_some());
    let io = |e| Error::io(path, e);

    let mut header: Vec<String> = (1..=data.ap_count).map(|i| format!("AP{i:03}")).collect();
    header.push("X".into());
    header.push("Y".into());
    if with_collector {
        header.push("COLLECTOR".into());
    }
    writeln!(out, "{}", header.join(",")).map_err(io)?;

    for s in &data.samples {
        let mut fields = Vec::with_capacity(header.len());
        for &v in &s.rss {
            fields.push(format!("{}", denormalize_rss(v, &data.norm)?));
        }
        fields.push(format!("{}", s.location.x));
        fields.push(format!("{}", s.location.y));
        if with_collector {
            fields.push(s.collector_id.map(|c| c.to_string()).unwrap_or_default());
        }
        writeln!(out, "{}", fields.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Log-distance path loss with Gaussian shadowing.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnvironment {
    pub ap_positions: Vec<Coordinate>,
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    pub shadowing_sigma_db: f64,
    pub reference_distance_m: f64,
    pub detection_threshold_dbm: f64,
}

impl SyntheticEnvironment {
    pub fn validate(&self) -> Result<()> {
        if self.ap_positions.is_empty() {
            return Err(Error::Config("synthetic environment needs at least one AP".into()));
        }
        if !(self.path_loss_exponent > 0.0) {
            return Err(Error::Config("path_loss_exponent must be positive".into()));
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return Err(Error::Config("shadowing_sigma_db must be non-negative".into()));
        }
        if !(self.reference_distance_m > 0.0) {
            return Err(Error::Config("reference_distance_m must be positive".into()));
        }
        Ok(())
    }

    /// Noise-free received power from AP `ap` at `at`, in dBm.
    pub fn mean_rss_dbm(&self, ap: usize, at: &Coordinate) -> f64 {
        let d0 = self.reference_distance_m;
        let d = self.ap_positions[ap].distance(at).max(d0);
        self.tx_power_dbm - 10.0 * self.path_loss_exponent * (d / d0).log10()
    }
}

/// `nx * ny` cell centers tiling a `width` x `height` rectangle anchored at
/// the origin, row by row.
pub fn grid_locations(nx: usize, ny: usize, width: f64, height: f64) -> Vec<Coordinate> {
    let (dx, dy) = (width / nx as f64, height / ny as f64);
    (0..ny)
        .flat_map(|j| {
            (0..nx).map(move |i| Coordinate {
                x: (i as f64 + 0.5) * dx,
                y: (j as f64 + 0.5) * dy,
            })
        })
        .collect()
}

/// Uniformly random AP positions inside a `width` x `height` rectangle.
pub fn random_ap_layout(count: usize, width: f64, height: f64, seed: u64) -> Vec<Coordinate> {
    let mut rng = seed::rng(seed);
    (0..count)
        .map(|_| Coordinate {
            x: rng.random::<f64>() * width,
            y: rng.random::<f64>() * height,
        })
        .collect()
}

/// Draws `samples_per_location` fingerprints at every grid location.
///
/// Readings below the detection threshold become the sentinel; readings are
/// clamped into the normalization range before normalizing.
pub fn generate_synthetic(
    env: &SyntheticEnvironment,
    grid: &[Coordinate],
    samples_per_location: usize,
    norm: &NormalizationParams,
    seed: u64,
) -> Result<FingerprintDataset> {
    env.validate()?;
    norm.validate()?;
    if grid.is_empty() {
        return Err(Error::Size("synthetic grid is empty".into()));
    }
    if samples_per_location == 0 {
        return Err(Error::Size("samples_per_location must be at least 1".into()));
    }
    let mut rng = seed::rng(seed);
    let mut samples = Vec::with_capacity(grid.len() * samples_per_location);
    for loc in grid {
        let means: Vec<f64> = (0..env.ap_positions.len())
            .map(|ap| env.mean_rss_dbm(ap, loc))
            .collect();
        for _ in 0..samples_per_location {
            let rss = means
                .iter()
                .map(|&mean| {
                    let z: f64 = rng.sample(StandardNormal);
                    let raw = mean + env.shadowing_sigma_db * z;
                    let raw = if raw < env.detection_threshold_dbm || raw < norm.rss_min {
                        norm.sentinel_raw
                    } else {
                        raw.min(norm.rss_max)
                    };
                    normalize_rss(raw, norm)
                })
                .collect::<Result<Vec<_>>>()?;
            samples.push(Fingerprint::new(rss, *loc));
        }
    }
    FingerprintDataset::with_locations(samples, env.ap_positions.len(), *norm, grid.to_vec())
}
