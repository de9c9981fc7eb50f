//! Downstream localization models and error reporting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::{Bounds, Coordinate, Fingerprint, FingerprintDataset};
use crate::error::{Error, Result};
use crate::nn::{rows_to_array, Activation, Adam, Mlp, MlpShape};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalizerVariant {
    Knn,
    Feedforward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizerParams {
    pub variant: LocalizerVariant,
    pub k: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for LocalizerParams {
    fn default() -> Self {
        LocalizerParams {
            variant: LocalizerVariant::Knn,
            k: 5,
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocalizationModel {
    Knn {
        k: usize,
        fingerprints: Vec<Vec<f64>>,
        locations: Vec<Coordinate>,
    },
    Feedforward {
        net: Mlp,
        bounds: Bounds,
    },
}

pub fn fit_localizer(train: &FingerprintDataset, params: &LocalizerParams, seed: u64) -> Result<LocalizationModel> {
    if train.is_empty() {
        return Err(Error::Size("cannot fit a localizer on an empty dataset".into()));
    }
    match params.variant {
        LocalizerVariant::Knn => {
            if params.k == 0 || params.k > train.len() {
                return Err(Error::Config(format!(
                    "k = {} must lie in 1..={} (stored samples)",
                    params.k,
                    train.len()
                )));
            }
            Ok(LocalizationModel::Knn {
                k: params.k,
                fingerprints: train.samples().iter().map(|s| s.rss.clone()).collect(),
                locations: train.samples().iter().map(|s| s.location).collect(),
            })
        }
        LocalizerVariant::Feedforward => fit_feedforward(train, params, seed),
    }
}

fn fit_feedforward(train: &FingerprintDataset, params: &LocalizerParams, seed: u64) -> Result<LocalizationModel> {
    if !(params.learning_rate > 0.0) || params.epochs == 0 || params.batch_size == 0 {
        return Err(Error::Config("feedforward localizer needs positive learning rate, epochs and batch size".into()));
    }
    let a = train.ap_count();
    let locs: Vec<Coordinate> = train.samples().iter().map(|s| s.location).collect();
    let bounds = Bounds::enclosing(&locs, 0.5)?;
    let shape = MlpShape {
        input: a,
        hidden: params.hidden.clone(),
        output: 2,
        activation: Activation::Relu,
        skips: false,
    };
    let mut net = Mlp::random(shape, seed::substream(seed, 0))?;
    let mut rng = seed::rng(seed::substream(seed, 1));
    let mut adam = Adam::new(net.param_count(), params.learning_rate);
    let targets: Vec<[f64; 2]> = locs
        .iter()
        .map(|c| {
            let (u, v) = bounds.unit(c);
            [u, v]
        })
        .collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(params.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| train.samples()[i].rss.as_slice()).collect();
            let x = rows_to_array(&rows, a);
            let (cache, y) = net.forward_cached(x.view())?;
            let mut d = Array2::zeros((chunk.len(), 2));
            for (r, &i) in chunk.iter().enumerate() {
                for k in 0..2 {
                    d[[r, k]] = 2.0 * (y[[r, k]] - targets[i][k]) / chunk.len() as f64;
                }
            }
            let grad = net.backward(&cache, d.view());
            adam.step(net.params_mut(), &grad);
        }
    }
    Ok(LocalizationModel::Feedforward { net, bounds })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl LocalizationModel {
    pub fn ap_count(&self) -> usize {
        match self {
            LocalizationModel::Knn { fingerprints, .. } => fingerprints[0].len(),
            LocalizationModel::Feedforward { net, .. } => net.shape().input,
        }
    }

    /// kNN: inverse-distance-weighted mean location of the `k` nearest stored
    /// fingerprints (ties by storage order); exact matches take all weight.
    /// Feedforward: the network output mapped back to meters.
    pub fn predict(&self, rss: &[f64]) -> Result<Coordinate> {
        if rss.len() != self.ap_count() {
            return Err(Error::Shape(format!(
                "query has {} entries, model expects {}",
                rss.len(),
                self.ap_count()
            )));
        }
        match self {
            LocalizationModel::Knn { k, fingerprints, locations } => {
                let mut nearest: Vec<(f64, usize)> = fingerprints
                    .iter()
                    .enumerate()
                    .map(|(i, f)| (squared_distance(f, rss).sqrt(), i))
                    .collect();
                let k = (*k).min(nearest.len());
                nearest.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut nearest = nearest[..k].to_vec();
                nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let exact: Vec<usize> = nearest.iter().filter(|n| n.0 == 0.0).map(|n| n.1).collect();
                let weighted: Vec<(f64, usize)> = if exact.is_empty() {
                    nearest.iter().map(|&(d, i)| (1.0 / d, i)).collect()
                } else {
                    exact.iter().map(|&i| (1.0, i)).collect()
                };
                let total: f64 = weighted.iter().map(|w| w.0).sum();
                let (x, y) = weighted.iter().fold((0.0, 0.0), |(x, y), &(w, i)| {
                    (x + w * locations[i].x, y + w * locations[i].y)
                });
                Ok(Coordinate { x: x / total, y: y / total })
            }
            LocalizationModel::Feedforward { net, bounds } => {
                let x = ArrayView2::from_shape((1, rss.len()), rss).map_err(|e| Error::Shape(e.to_string()))?;
                let out = net.forward(x)?;
                Ok(bounds.from_unit(out[[0, 0]], out[[0, 1]]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    pub mean_error_m: f64,
    pub median_error_m: f64,
    /// `(error, fraction of samples with error <= it)` at every distinct error.
    pub error_cdf: Vec<(f64, f64)>,
    pub per_sample_errors: Vec<f64>,
}

impl LocalizationReport {
    pub fn from_errors(errors: Vec<f64>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Size("no errors to summarize".into()));
        }
        let n = errors.len();
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        let mean = errors.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let mut cdf: Vec<(f64, f64)> = Vec::new();
        for (i, &e) in sorted.iter().enumerate() {
            let frac = (i + 1) as f64 / n as f64;
            match cdf.last_mut() {
                Some(last) if last.0 == e => last.1 = frac,
                _ => cdf.push((e, frac)),
            }
        }
        Ok(LocalizationReport {
            mean_error_m: mean,
            median_error_m: median,
            error_cdf: cdf,
            per_sample_errors: errors,
        })
    }

    /// Summary line followed by CDF rows:
    ///
    /// ```text
    /// mean_error_m,median_error_m
    /// 1.234567,1.000000
    /// error_m,cdf
    /// 0.000000,0.125000
    /// ...
    /// ```
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "mean_error_m,median_error_m").map_err(io)?;
        writeln!(out, "{:.6},{:.6}", self.mean_error_m, self.median_error_m).map_err(io)?;
        writeln!(out, "error_m,cdf").map_err(io)?;
        for (e, f) in &self.error_cdf {
            writeln!(out, "{e:.6},{f:.6}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Per-sample Euclidean error of `model` on `test`.
pub fn evaluate(model: &LocalizationModel, test: &FingerprintDataset) -> Result<LocalizationReport> {
    if test.is_empty() {
        return Err(Error::Size("test set is empty".into()));
    }
    let errors = test
        .samples()
        .par_iter()
        .map(|s: &Fingerprint| Ok(model.predict(&s.rss)?.distance(&s.location)))
        .collect::<Result<Vec<f64>>>()?;
    LocalizationReport::from_errors(errors)
}
