use ndarray::{Array2, Axis};
#[cfg(test)]
use ndarray::ArrayView2;

use super::denoiser::{Denoise, DenoiserNetwork};
use super::kernel::{vicinity_weight, VicinityKernel};
use super::schedule::NoiseSchedule;
use crate::dataset::Coordinate;
use crate::error::{Error, Result};
use crate::nn::rows_to_array;

/// One term of the spatial loss: a seen sample noised to `step` with
/// `noise`, denoised under the unseen location `condition`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPair {
    pub clean: Vec<f64>,
    pub seen: Coordinate,
    pub condition: Coordinate,
    pub step: usize,
    pub noise: Vec<f64>,
}

pub(crate) struct Batch {
    pub steps: Vec<usize>,
    pub conditions: Vec<Coordinate>,
    pub clean: Array2<f64>,
    pub noisy: Array2<f64>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn from_pairs(pairs: &[LossPair], kernel: &VicinityKernel, schedule: &NoiseSchedule) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::Size("empty loss batch".into()))?;
        let width = first.clean.len();
        let noisy = pairs
            .iter()
            .map(|p| schedule.forward_diffuse(&p.clean, p.step, &p.noise))
            .collect::<Result<Vec<_>>>()?;
        if pairs.iter().any(|p| p.clean.len() != width) {
            return Err(Error::Shape("loss batch mixes fingerprint widths".into()));
        }
        let clean_rows: Vec<&[f64]> = pairs.iter().map(|p| p.clean.as_slice()).collect();
        let noisy_rows: Vec<&[f64]> = noisy.iter().map(Vec::as_slice).collect();
        Ok(Batch {
            steps: pairs.iter().map(|p| p.step).collect(),
            conditions: pairs.iter().map(|p| p.condition).collect(),
            clean: rows_to_array(&clean_rows, width),
            noisy: rows_to_array(&noisy_rows, width),
            weights: pairs.iter().map(|p| vicinity_weight(&p.condition, &p.seen, kernel)).collect(),
        })
    }
}

fn weighted_mean(residual: &Array2<f64>, weights: &[f64]) -> f64 {
    let per_row = residual.mapv(|v| v * v).sum_axis(Axis(1));
    per_row.iter().zip(weights).map(|(r, w)| w * r).sum::<f64>() / weights.len() as f64
}

pub(crate) fn batch_loss<D: Denoise + ?Sized>(net: &D, batch: &Batch) -> Result<f64> {
    let pred = net.predict_clean(&batch.steps, &batch.conditions, batch.noisy.view())?;
    Ok(weighted_mean(&(pred - &batch.clean), &batch.weights))
}

/// Loss and its gradient with respect to the denoiser parameters.
pub(crate) fn batch_loss_and_grad(net: &DenoiserNetwork, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    let (cache, pred) = net.forward_cached(&batch.steps, &batch.conditions, batch.noisy.view())?;
    let residual = pred - &batch.clean;
    let loss = weighted_mean(&residual, &batch.weights);
    let scale = 2.0 / batch.weights.len() as f64;
    let mut upstream = residual;
    for (mut row, w) in upstream.rows_mut().into_iter().zip(&batch.weights) {
        row *= scale * w;
    }
    Ok((loss, net.backward(&cache, upstream.view())))
}

/// Mean over the batch of `w(condition, seen) * |U(step, condition, M_t) - M_0|^2`.
pub fn spatial_loss<D: Denoise + ?Sized>(
    net: &D,
    batch: &[LossPair],
    kernel: &VicinityKernel,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    batch_loss(net, &Batch::from_pairs(batch, kernel, schedule)?)
}

pub fn spatial_loss_and_grad(
    net: &DenoiserNetwork,
    batch: &[LossPair],
    kernel: &VicinityKernel,
    schedule: &NoiseSchedule,
) -> Result<(f64, Vec<f64>)> {
    batch_loss_and_grad(net, &Batch::from_pairs(batch, kernel, schedule)?)
}

/// Exhaustive double sum over every (unseen, seen) pair, normalized by the
/// number of seen samples. Each seen sample keeps its own `(step, noise)`
/// draw; the `condition` field of `seen` entries is ignored.
///
/// This is the quantity the importance-sampled training estimator targets
/// in expectation; it is quadratic in the number of locations and meant for
/// tests and diagnostics.
pub fn full_sum_loss<D: Denoise + ?Sized>(
    net: &D,
    seen: &[LossPair],
    unseen: &[Coordinate],
    kernel: &VicinityKernel,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    if seen.is_empty() || unseen.is_empty() {
        return Err(Error::Size("full-sum loss needs seen samples and unseen locations".into()));
    }
    let mut total = 0.0;
    for cond in unseen {
        let pairs: Vec<LossPair> = seen
            .iter()
            .map(|p| LossPair { condition: *cond, ..p.clone() })
            .collect();
        total += spatial_loss(net, &pairs, kernel, schedule)? * pairs.len() as f64;
    }
    Ok(total / seen.len() as f64)
}

/// Denoiser returning a fixed vector whatever its input.
#[cfg(test)]
pub(crate) struct ConstantDenoiser(pub Vec<f64>);

#[cfg(test)]
impl Denoise for ConstantDenoiser {
    fn ap_count(&self) -> usize {
        self.0.len()
    }

    fn predict_clean(&self, _: &[usize], _: &[Coordinate], noisy: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(noisy.raw_dim());
        for mut row in out.rows_mut() {
            row.assign(&ndarray::ArrayView1::from(&self.0));
        }
        Ok(out)
    }
}
