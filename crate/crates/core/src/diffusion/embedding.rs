use std::f64::consts::{FRAC_PI_2, PI};

use crate::dataset::{Bounds, Coordinate};
use crate::error::{Error, Result};

/// Feature vector describing a conditioning location.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding(pub Vec<f64>);

impl ConditionEmbedding {
    /// Embedding length for `frequencies` octaves: the two scaled
    /// coordinates plus a sine/cosine pair per octave and axis.
    pub fn len_for(frequencies: usize) -> usize {
        2 + 4 * frequencies
    }
}

/// Min-max scales `loc` by `bounds` and expands `(u, v)` into
/// `[u, v, sin(2^k pi u), cos(2^k pi u), sin(2^k pi v), cos(2^k pi v), ...]`.
///
/// The raw scaled coordinates are kept, so the map is injective.
pub fn embed_condition(loc: &Coordinate, bounds: &Bounds, frequencies: usize) -> Result<ConditionEmbedding> {
    let bounds = Bounds::new(bounds.min, bounds.max)?;
    let (u, v) = bounds.unit(loc);
    let mut out = Vec::with_capacity(ConditionEmbedding::len_for(frequencies));
    out.push(u);
    out.push(v);
    for k in 0..frequencies {
        let f = PI * (1u64 << k) as f64;
        out.extend([(f * u).sin(), (f * u).cos(), (f * v).sin(), (f * v).cos()]);
    }
    Ok(ConditionEmbedding(out))
}

/// Sinusoidal encoding of `t / T` at `dim` (even) entries with dyadic
/// frequencies `2^k pi / 2`; the lowest frequency alone is injective on
/// `(0, 1]`.
pub fn embed_time(t: usize, steps: usize, dim: usize) -> Result<Vec<f64>> {
    if t == 0 || t > steps {
        return Err(Error::Range(format!("step {t} outside 1..={steps}")));
    }
    if dim % 2 != 0 {
        return Err(Error::Config(format!("time embedding size must be even, got {dim}")));
    }
    let s = t as f64 / steps as f64;
    Ok((0..dim / 2)
        .flat_map(|k| {
            let angle = FRAC_PI_2 * (1u64 << k) as f64 * s;
            [angle.sin(), angle.cos()]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> Bounds {
        Bounds::new(Coordinate { x: 0.0, y: 0.0 }, Coordinate { x: 50.0, y: 20.0 }).unwrap()
    }

    #[test]
    fn minimum_corner_embeds_origin() {
        let e = embed_condition(&Coordinate { x: 0.0, y: 0.0 }, &bounds(), 2).unwrap();
        assert_eq!(e.0, vec![0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(e.0.len(), ConditionEmbedding::len_for(2));
    }

    #[test]
    fn distinct_grid_points_embed_distinctly() {
        let grid = crate::dataset::grid_locations(10, 10, 50.0, 20.0);
        let embs: Vec<_> = grid.iter().map(|c| embed_condition(c, &bounds(), 4).unwrap()).collect();
        for i in 0..embs.len() {
            assert_eq!(embs[i], embed_condition(&grid[i], &bounds(), 4).unwrap());
            for j in 0..i {
                assert_ne!(embs[i], embs[j]);
            }
        }
    }

    #[test]
    fn degenerate_bounds_rejected() {
        let flat = Bounds {
            min: Coordinate { x: 0.0, y: 1.0 },
            max: Coordinate { x: 5.0, y: 1.0 },
        };
        assert!(matches!(
            embed_condition(&Coordinate { x: 1.0, y: 1.0 }, &flat, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn time_encoding_is_bounded_and_injective() {
        let steps = 1000;
        let all: Vec<Vec<f64>> = (1..=steps).map(|t| embed_time(t, steps, 16).unwrap()).collect();
        assert!(all.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        for w in all.windows(2) {
            assert_ne!(w[0], w[1]);
        }
        // the first (lowest-frequency) sine is strictly increasing in t
        assert!(all.windows(2).all(|w| w[1][0] > w[0][0]));
        assert_eq!(embed_time(7, steps, 16).unwrap(), all[6]);
        assert!(embed_time(0, steps, 16).is_err());
        assert!(embed_time(1001, steps, 16).is_err());
    }
}
