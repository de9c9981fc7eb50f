//! Seen/unseen partition of the target locations.
//!
//! The density strategy repeatedly moves the most crowded remaining locations
//! (smallest mean distance to their `k` nearest neighbours) into the unseen
//! set, so every generated location stays surrounded by surveyed ones.
//! Random and grid-center strategies are provided for comparison.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;

use crate::dataset::{distinct_locations, Bounds, Coordinate};
use crate::error::{Error, Result};
use crate::seed;

/// Relative slack under which two densities count as tied.
pub const DENSITY_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LocationSplit {
    pub seen: Vec<Coordinate>,
    pub unseen: Vec<Coordinate>,
}

impl LocationSplit {
    pub fn is_seen(&self, c: &Coordinate) -> bool {
        self.seen.iter().any(|s| s.key() == c.key())
    }

    pub fn is_unseen(&self, c: &Coordinate) -> bool {
        self.unseen.iter().any(|s| s.key() == c.key())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seen.is_empty() {
            return Err(Error::Size("split has no seen locations".into()));
        }
        let seen: HashSet<_> = self.seen.iter().map(Coordinate::key).collect();
        let unseen: HashSet<_> = self.unseen.iter().map(Coordinate::key).collect();
        if seen.len() != self.seen.len() || unseen.len() != self.unseen.len() {
            return Err(Error::Consistency("split lists a location twice".into()));
        }
        if !seen.is_disjoint(&unseen) {
            return Err(Error::Consistency("a location is both seen and unseen".into()));
        }
        Ok(())
    }

    /// Writes `x,y,role` rows, seen locations first.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "x,y,role").map_err(io)?;
        for (list, role) in [(&self.seen, "seen"), (&self.unseen, "unseen")] {
            for c in list.iter() {
                writeln!(out, "{},{},{role}", c.x, c.y).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line as u64,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "x,y,role" => {}
            _ => return Err(parse_err(1, "expected header `x,y,role`".into())),
        }
        let mut split = LocationSplit {
            seen: Vec::new(),
            unseen: Vec::new(),
        };
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(parse_err(line_no, format!("expected 3 fields, found {}", fields.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("`{s}` is not a number")))
            };
            let c = Coordinate::new(num(fields[0])?, num(fields[1])?)
                .map_err(|e| parse_err(line_no, e.to_string()))?;
            match fields[2] {
                "seen" => split.seen.push(c),
                "unseen" => split.unseen.push(c),
                other => return Err(parse_err(line_no, format!("unknown role `{other}`"))),
            }
        }
        split.validate()?;
        Ok(split)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DensityParams {
    pub k_neighbors: usize,
    pub batch_per_iteration: usize,
}

impl Default for DensityParams {
    fn default() -> Self {
        DensityParams {
            k_neighbors: 3,
            batch_per_iteration: 1,
        }
    }
}

impl DensityParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 || self.batch_per_iteration == 0 {
            return Err(Error::Config(
                "k_neighbors and batch_per_iteration must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn check_distinct(points: &[Coordinate]) -> Result<()> {
    if distinct_locations(points.iter().copied()).len() != points.len() {
        return Err(Error::Consistency("input locations must be distinct".into()));
    }
    Ok(())
}

/// Mean distance from each point to its `k` nearest other points.
pub fn neighbor_density(points: &[Coordinate], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if points.len() <= k {
        return Err(Error::Size(format!(
            "{} points cannot supply {k} neighbours each",
            points.len()
        )));
    }
    let mut dists = Vec::with_capacity(points.len() - 1);
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            dists.clear();
            dists.extend(
                points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| p.distance(q)),
            );
            dists.sort_by(f64::total_cmp);
            dists[..k].iter().sum::<f64>() / k as f64
        })
        .collect())
}

/// Index of the densest point among `candidates`; ties within
/// [`DENSITY_TIE_TOLERANCE`] go to the lexicographically smallest coordinate.
fn densest(points: &[Coordinate], density: &[f64], candidates: &[usize]) -> usize {
    let best = candidates
        .iter()
        .map(|&i| density[i])
        .fold(f64::INFINITY, f64::min);
    let slack = DENSITY_TIE_TOLERANCE * best.abs().max(1.0);
    *candidates
        .iter()
        .filter(|&&i| density[i] <= best + slack)
        .min_by(|&&a, &&b| points[a].lex_cmp(&points[b]))
        .expect("candidate set is non-empty")
}

pub fn select_unseen_density(
    points: &[Coordinate],
    n_unseen: usize,
    params: &DensityParams,
) -> Result<LocationSplit> {
    params.validate()?;
    check_distinct(points)?;
    let k = params.k_neighbors;
    if n_unseen + k + 1 > points.len() {
        return Err(Error::Size(format!(
            "cannot mark {n_unseen} of {} locations unseen with k = {k}",
            points.len()
        )));
    }

    let mut remaining = points.to_vec();
    let mut unseen = Vec::with_capacity(n_unseen);
    while unseen.len() < n_unseen {
        let density = neighbor_density(&remaining, k)?;
        let take = params.batch_per_iteration.min(n_unseen - unseen.len());
        let mut candidates: Vec<usize> = (0..remaining.len()).collect();
        let mut picked = Vec::with_capacity(take);
        for _ in 0..take {
            let i = densest(&remaining, &density, &candidates);
            candidates.retain(|&c| c != i);
            picked.push(i);
        }
        unseen.extend(picked.iter().map(|&i| remaining[i]));
        picked.sort_unstable_by(|a, b| b.cmp(a));
        for i in picked {
            remaining.remove(i);
        }
    }
    Ok(LocationSplit {
        seen: remaining,
        unseen,
    })
}

fn check_simple_size(points: &[Coordinate], n_unseen: usize) -> Result<()> {
    if points.is_empty() || n_unseen >= points.len() {
        return Err(Error::Size(format!(
            "cannot mark {n_unseen} of {} locations unseen",
            points.len()
        )));
    }
    Ok(())
}

/// Keeps input order inside each side of the split.
fn partition(points: &[Coordinate], unseen: &HashSet<usize>) -> LocationSplit {
    let (mut seen_list, mut unseen_list) = (Vec::new(), Vec::new());
    for (i, p) in points.iter().enumerate() {
        if unseen.contains(&i) {
            unseen_list.push(*p);
        } else {
            seen_list.push(*p);
        }
    }
    LocationSplit {
        seen: seen_list,
        unseen: unseen_list,
    }
}

pub fn select_unseen_random(points: &[Coordinate], n_unseen: usize, seed: u64) -> Result<LocationSplit> {
    check_distinct(points)?;
    check_simple_size(points, n_unseen)?;
    let mut rng = seed::rng(seed);
    let chosen: HashSet<usize> = index::sample(&mut rng, points.len(), n_unseen)
        .into_iter()
        .collect();
    Ok(partition(points, &chosen))
}

/// Grid-center selection: the bounding box is cut into `g x g` cells with
/// `g = ceil(sqrt(n_seen))`; the point nearest each cell center is surveyed.
/// Cells are served closest-match first, and when the cells yield fewer
/// distinct points than needed the rest are filled farthest-point first.
pub fn select_unseen_grid(points: &[Coordinate], n_unseen: usize) -> Result<LocationSplit> {
    check_distinct(points)?;
    check_simple_size(points, n_unseen)?;
    let n_seen = points.len() - n_unseen;
    let bounds = Bounds::enclosing(points, 0.5)?;
    let g = (n_seen as f64).sqrt().ceil() as usize;

    let nearest = |target: &Coordinate| -> (usize, f64) {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.distance(target)))
            .min_by(|a, b| {
                a.1.total_cmp(&b.1)
                    .then_with(|| points[a.0].lex_cmp(&points[b.0]))
            })
            .expect("points is non-empty")
    };

    // (cell index, nearest point, distance)
    let mut cells: Vec<(usize, usize, f64)> = (0..g * g)
        .map(|cell| {
            let (row, col) = (cell / g, cell % g);
            let center = bounds.from_unit((col as f64 + 0.5) / g as f64, (row as f64 + 0.5) / g as f64);
            let (i, d) = nearest(&center);
            (cell, i, d)
        })
        .collect();
    cells.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));

    let mut chosen: Vec<usize> = Vec::with_capacity(n_seen);
    for &(_, i, _) in &cells {
        if chosen.len() == n_seen {
            break;
        }
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    while chosen.len() < n_seen {
        let far = (0..points.len())
            .filter(|i| !chosen.contains(i))
            .map(|i| {
                let d = chosen
                    .iter()
                    .map(|&s| points[i].distance(&points[s]))
                    .fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .max_by(|a, b| {
                a.1.total_cmp(&b.1)
                    .then_with(|| points[b.0].lex_cmp(&points[a.0]))
            })
            .expect("fewer seen than points")
            .0;
        chosen.push(far);
    }

    let seen: HashSet<usize> = chosen.into_iter().collect();
    let unseen: HashSet<usize> = (0..points.len()).filter(|i| !seen.contains(i)).collect();
    Ok(partition(points, &unseen))
}
