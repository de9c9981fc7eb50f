use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::denoiser::{DenoiserArch, DenoiserNetwork};
use super::kernel::{median_nearest_neighbor_distance, vicinity_weight, KernelForm, VicinityKernel};
use super::loss::{batch_loss_and_grad, Batch};
use super::schedule::NoiseSchedule;
use crate::dataset::{Bounds, Coordinate, FingerprintDataset};
use crate::error::{Error, Result};
use crate::initializer::LocationSplit;
use crate::nn::Adam;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionTrainConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Decay of the exponential moving average of the weights that becomes
    /// the returned network; 0 returns the raw weights.
    pub ema_decay: f64,
    pub kernel: KernelForm,
    /// Kernel bandwidth in meters; `None` picks [`default_bandwidth`].
    pub bandwidth: Option<f64>,
    pub seed: u64,
    pub arch: DenoiserArch,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        DiffusionTrainConfig {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 60,
            ema_decay: 0.995,
            kernel: KernelForm::Gaussian,
            bandwidth: None,
            seed: 0,
            arch: DenoiserArch::default(),
        }
    }
}

impl DiffusionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "learning_rate, batch_size and epochs must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema_decay must lie in [0, 1), got {}", self.ema_decay)));
        }
        if self.steps > 1000 {
            return Err(Error::Config(format!("at most 1000 diffusion steps supported, got {}", self.steps)));
        }
        if let Some(bw) = self.bandwidth {
            VicinityKernel::new(bw, self.kernel)?;
        }
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end).map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// Half the median nearest-neighbour spacing of the seen locations, or half
/// the distance from a single seen location to its nearest unseen one. With
/// a Gaussian kernel the adjacent ring of seen locations then carries weight
/// `exp(-2)` and the next ring almost none.
pub fn default_bandwidth(split: &LocationSplit) -> Result<f64> {
    let bw = match median_nearest_neighbor_distance(&split.seen) {
        Some(d) => d,
        None => split
            .seen
            .iter()
            .flat_map(|s| split.unseen.iter().map(move |u| s.distance(u)))
            .fold(f64::INFINITY, f64::min),
    };
    if bw.is_finite() && bw > 0.0 {
        Ok(0.5 * bw)
    } else {
        Err(Error::Coverage("cannot derive a kernel bandwidth from the split".into()))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: DenoiserNetwork,
    pub schedule: NoiseSchedule,
    pub kernel: VicinityKernel,
    /// Minibatch loss after every optimizer step.
    pub loss_trace: Vec<f64>,
    pub steps_per_epoch: usize,
}

impl TrainedModel {
    /// Mean minibatch loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        self.loss_trace
            .chunks(self.steps_per_epoch.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn final_loss(&self) -> f64 {
        self.epoch_means().last().copied().unwrap_or(f64::NAN)
    }
}

/// Pooled standard deviation of fingerprint entries around their location
/// means.
pub fn within_location_spread(data: &FingerprintDataset) -> f64 {
    let mut groups: BTreeMap<(u64, u64), (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in data.samples() {
        let g = groups
            .entry(s.location.key())
            .or_insert_with(|| (0, vec![0.0; s.rss.len()], vec![0.0; s.rss.len()]));
        g.0 += 1;
        for (k, &v) in s.rss.iter().enumerate() {
            g.1[k] += v;
            g.2[k] += v * v;
        }
    }
    let (mut ss, mut dof) = (0.0, 0usize);
    for (n, sum, sq) in groups.values() {
        for (s, q) in sum.iter().zip(sq) {
            ss += (q - s * s / *n as f64).max(0.0);
        }
        dof += (n - 1) * sum.len();
    }
    if dof == 0 {
        0.0
    } else {
        (ss / dof as f64).sqrt()
    }
}

/// Unseen conditions for one seen location, with cumulative kernel weights.
struct ConditionSampler {
    cumulative: Vec<f64>,
}

impl ConditionSampler {
    fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.total();
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

fn condition_samplers(seen: &[Coordinate], unseen: &[Coordinate], kernel: &VicinityKernel) -> Vec<ConditionSampler> {
    seen.iter()
        .map(|s| {
            let cumulative = unseen
                .iter()
                .scan(0.0, |acc, u| {
                    *acc += vicinity_weight(u, s, kernel);
                    Some(*acc)
                })
                .collect();
            ConditionSampler { cumulative }
        })
        .collect()
}

/// Fits the denoiser by minimizing the vicinity-weighted loss.
///
/// Every step draws a minibatch of seen samples; each sample gets a uniform
/// timestep, Gaussian noise and one unseen condition drawn with probability
/// proportional to its kernel weight. Scaling the sample's residual by the
/// total kernel weight of its location keeps the estimator proportional to
/// the full double sum over (unseen, seen) pairs.
pub fn train(seen: &FingerprintDataset, split: &LocationSplit, cfg: &DiffusionTrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    split.validate()?;
    if split.unseen.is_empty() {
        return Err(Error::Coverage("split has no unseen locations to condition on".into()));
    }
    if seen.is_empty() {
        return Err(Error::Size("no seen samples to train on".into()));
    }
    if let Some(s) = seen.samples().iter().find(|s| !split.is_seen(&s.location)) {
        return Err(Error::Consistency(format!(
            "training sample at ({}, {}) is not a seen location",
            s.location.x, s.location.y
        )));
    }

    let schedule = cfg.schedule()?;
    let bandwidth = match cfg.bandwidth {
        Some(bw) => bw,
        None => default_bandwidth(split)?,
    };
    let kernel = VicinityKernel::new(bandwidth, cfg.kernel)?;
    let all: Vec<Coordinate> = split.seen.iter().chain(&split.unseen).copied().collect();
    let bounds = Bounds::enclosing(&all, 0.5)?;

    let samplers = condition_samplers(&split.seen, &split.unseen, &kernel);
    let location_of = |c: &Coordinate| {
        split
            .seen
            .iter()
            .position(|s| s.key() == c.key())
            .expect("checked above")
    };
    let pool: Vec<(usize, usize)> = seen
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| (i, location_of(&s.location)))
        .filter(|&(_, loc)| samplers[loc].total() > 0.0)
        .collect();
    if pool.is_empty() {
        return Err(Error::Coverage(format!(
            "no unseen location lies within kernel reach (bandwidth {bandwidth} m) of any seen sample"
        )));
    }

    let a = seen.ap_count();
    let data_sigma = if cfg.arch.input_blend { within_location_spread(seen) } else { 0.0 };
    let mut network = DenoiserNetwork::random(cfg.arch.clone(), a, bounds, cfg.steps, seed::substream(cfg.seed, 0))?
        .with_blend(data_sigma, &schedule)?;
    let mut rng = seed::rng(seed::substream(cfg.seed, 1));
    let mut optimizer = Adam::new(network.param_count(), cfg.learning_rate);
    // Bias-corrected like Adam's moments: starts at zero, divided by
    // 1 - decay^n at the end.
    let mut ema = vec![0.0; network.param_count()];
    let mut ema_weight = 1.0;
    let mut order = pool.clone();
    let steps_per_epoch = pool.len().div_ceil(cfg.batch_size);
    let mut loss_trace = Vec::with_capacity(steps_per_epoch * cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let rows = chunk.len();
            let mut batch = Batch {
                steps: Vec::with_capacity(rows),
                conditions: Vec::with_capacity(rows),
                clean: Array2::zeros((rows, a)),
                noisy: Array2::zeros((rows, a)),
                weights: Vec::with_capacity(rows),
            };
            for (r, &(sample, loc)) in chunk.iter().enumerate() {
                let clean = &seen.samples()[sample].rss;
                let t = rng.random_range(1..=cfg.steps);
                let eps: Vec<f64> = (0..a).map(|_| rng.sample(StandardNormal)).collect();
                let cond = samplers[loc].draw(&mut rng);
                let noisy = schedule.forward_diffuse(clean, t, &eps)?;
                for k in 0..a {
                    batch.clean[[r, k]] = clean[k];
                    batch.noisy[[r, k]] = noisy[k];
                }
                batch.steps.push(t);
                batch.conditions.push(split.unseen[cond]);
                batch.weights.push(samplers[loc].total());
            }
            let (loss, grad) = batch_loss_and_grad(&network, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Range(format!("training diverged (loss {loss})")));
            }
            optimizer.step(network.params_mut(), &grad);
            for (e, p) in ema.iter_mut().zip(network.params()) {
                *e = cfg.ema_decay * *e + (1.0 - cfg.ema_decay) * p;
            }
            ema_weight *= cfg.ema_decay;
            loss_trace.push(loss);
        }
    }
    for (p, e) in network.params_mut().iter_mut().zip(&ema) {
        *p = e / (1.0 - ema_weight);
    }
    log::debug!(
        "trained denoiser: {} steps, bandwidth {bandwidth:.3} m, final loss {:.3e}",
        loss_trace.len(),
        loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(TrainedModel {
        network,
        schedule,
        kernel,
        loss_trace,
        steps_per_epoch,
    })
}

/// Writes `step,loss` rows (1-based steps).
pub fn write_loss_trace(path: impl AsRef<Path>, trace: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "step,loss").map_err(io)?;
    for (i, loss) in trace.iter().enumerate() {
        writeln!(out, "{},{loss:.9e}", i + 1).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64, y: f64) -> Coordinate {
        Coordinate { x, y }
    }

    #[test]
    fn condition_draws_follow_weights() {
        let sampler = ConditionSampler { cumulative: vec![1.0, 1.0, 4.0] };
        let mut rng = seed::rng(3);
        let mut counts = [0usize; 3];
        for _ in 0..40_000 {
            counts[sampler.draw(&mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        let frac = counts[0] as f64 / 40_000.0;
        assert!((frac - 0.25).abs() < 0.01, "{frac}");
    }

    #[test]
    fn importance_sampled_loss_matches_full_sum() {
        use super::super::loss::{batch_loss, full_sum_loss, LossPair};
        let schedule = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
        let kernel = VicinityKernel::new(2.0, KernelForm::Gaussian).unwrap();
        let seen_locs = [c(0.0, 0.0), c(3.0, 0.0), c(0.0, 3.0)];
        let unseen = [c(1.5, 0.0), c(1.5, 1.5), c(4.0, 4.0), c(0.0, 1.0)];
        let arch = DenoiserArch { hidden: vec![8], ..Default::default() };
        let bounds = Bounds::enclosing(&[c(0.0, 0.0), c(4.0, 4.0)], 0.5).unwrap();
        let net = DenoiserNetwork::random(arch, 3, bounds, 20, 4).unwrap();
        let mut rng = seed::rng(8);
        let pairs: Vec<LossPair> = (0..6)
            .map(|j| LossPair {
                clean: (0..3).map(|_| rng.random_range(0.1..1.0)).collect(),
                seen: seen_locs[j % 3],
                condition: unseen[0],
                step: rng.random_range(1..=20),
                noise: (0..3).map(|_| rng.sample(StandardNormal)).collect(),
            })
            .collect();
        let exact = full_sum_loss(&net, &pairs, &unseen, &kernel, &schedule).unwrap();

        let samplers = condition_samplers(&seen_locs, &unseen, &kernel);
        let draws = 20_000;
        let mut total = 0.0;
        for _ in 0..draws {
            let drawn: Vec<LossPair> = pairs
                .iter()
                .enumerate()
                .map(|(j, p)| LossPair { condition: unseen[samplers[j % 3].draw(&mut rng)], ..p.clone() })
                .collect();
            let mut batch = Batch::from_pairs(&drawn, &kernel, &schedule).unwrap();
            batch.weights = (0..pairs.len()).map(|j| samplers[j % 3].total()).collect();
            total += batch_loss(&net, &batch).unwrap();
        }
        let estimate = total / draws as f64;
        assert!((estimate - exact).abs() < 0.01 * exact, "estimate {estimate}, exact {exact}");
    }

    #[test]
    fn bandwidth_fallback_for_single_seen_location() {
        let split = LocationSplit { seen: vec![c(0.0, 0.0)], unseen: vec![c(3.0, 4.0), c(10.0, 0.0)] };
        assert_eq!(default_bandwidth(&split).unwrap(), 2.5);
        let split = LocationSplit { seen: vec![c(0.0, 0.0), c(2.0, 0.0)], unseen: vec![c(1.0, 0.0)] };
        assert_eq!(default_bandwidth(&split).unwrap(), 1.0);
    }

    #[test]
    fn rejects_unseen_samples_and_missing_coverage() {
        use crate::dataset::{Fingerprint, NormalizationParams};
        let data = FingerprintDataset::new(
            vec![Fingerprint::new(vec![0.5, 0.5], c(0.0, 0.0))],
            2,
            NormalizationParams::default(),
        )
        .unwrap();
        let cfg = DiffusionTrainConfig {
            epochs: 1,
            kernel: KernelForm::Hard,
            bandwidth: Some(1.0),
            ..Default::default()
        };
        let far = LocationSplit { seen: vec![c(0.0, 0.0)], unseen: vec![c(50.0, 0.0)] };
        assert!(matches!(train(&data, &far, &cfg), Err(Error::Coverage(_))));
        let wrong = LocationSplit { seen: vec![c(9.0, 9.0)], unseen: vec![c(0.0, 0.0)] };
        assert!(matches!(train(&data, &wrong, &cfg), Err(Error::Consistency(_))));
        let empty = LocationSplit { seen: vec![c(0.0, 0.0)], unseen: vec![] };
        assert!(matches!(train(&data, &empty, &cfg), Err(Error::Coverage(_))));
    }
}
