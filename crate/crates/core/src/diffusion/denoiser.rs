use ndarray::{s, Array2, ArrayView1, ArrayView2};

use super::embedding::{embed_condition, embed_time, ConditionEmbedding};
use super::schedule::NoiseSchedule;
use crate::dataset::{Bounds, Coordinate};
use crate::error::{Error, Result};
use crate::nn::{Activation, ForwardCache, Mlp, MlpShape};

/// Anything that maps noisy fingerprints to clean-fingerprint predictions.
/// Row `r` of `noisy` is denoised at step `steps[r]` under `conditions[r]`.
pub trait Denoise: Sync {
    fn ap_count(&self) -> usize;

    /// Number of diffusion steps the denoiser was built for, if fixed.
    fn diffusion_steps(&self) -> Option<usize> {
        None
    }

    fn predict_clean(
        &self,
        steps: &[usize],
        conditions: &[Coordinate],
        noisy: ArrayView2<f64>,
    ) -> Result<Array2<f64>>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiserArch {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Octaves in the location embedding.
    pub cond_frequencies: usize,
    /// Entries in the timestep embedding (even).
    pub time_dim: usize,
    pub skips: bool,
    /// Blend the rescaled noisy input into the prediction with the Gaussian
    /// posterior gate (see [`DenoiserNetwork::with_blend`]).
    pub input_blend: bool,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        DenoiserArch {
            hidden: vec![256, 128, 256],
            activation: Activation::Silu,
            cond_frequencies: 4,
            time_dim: 16,
            skips: true,
            input_blend: true,
        }
    }
}

impl DenoiserArch {
    pub fn cond_dim(&self) -> usize {
        ConditionEmbedding::len_for(self.cond_frequencies)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct OutputBlend {
    data_sigma: f64,
    alpha_bars: Vec<f64>,
}

impl OutputBlend {
    /// Weight `c` of the rescaled input `M_t / sqrt(abar_t)`: the posterior
    /// mean of a Gaussian with spread `data_sigma` observed through noise of
    /// variance `(1 - abar_t) / abar_t`.
    fn gate(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bars[t - 1];
        let s2 = self.data_sigma * self.data_sigma;
        let c = s2 * ab / (s2 * ab + 1.0 - ab);
        (c / ab.sqrt(), 1.0 - c)
    }
}

pub(crate) struct DenoiserCache {
    mlp: ForwardCache,
    /// Weight of the network output in each row.
    gates: Vec<f64>,
}

/// Fully connected encoder/decoder denoiser. Input rows are
/// `[noisy fingerprint | location embedding | timestep embedding]`; output
/// is the predicted clean fingerprint.
///
/// With an output blend the prediction is `c * M_t / sqrt(abar_t) + (1 - c) * G`
/// where `G` is the network output. For Gaussian data this is exact with a
/// constant `G`, so sample spread survives even before the network learns to
/// use its noisy input. Without a blend the prediction is `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNetwork {
    arch: DenoiserArch,
    ap_count: usize,
    bounds: Bounds,
    steps: usize,
    mlp: Mlp,
    blend: Option<OutputBlend>,
}

impl DenoiserNetwork {
    fn shape(arch: &DenoiserArch, ap_count: usize) -> MlpShape {
        MlpShape {
            input: ap_count + arch.cond_dim() + arch.time_dim,
            hidden: arch.hidden.clone(),
            output: ap_count,
            activation: arch.activation,
            skips: arch.skips,
        }
    }

    fn validate(arch: &DenoiserArch, ap_count: usize, bounds: &Bounds, steps: usize) -> Result<()> {
        if ap_count == 0 || steps == 0 {
            return Err(Error::Config("AP count and step count must be positive".into()));
        }
        if arch.time_dim == 0 || arch.time_dim % 2 != 0 {
            return Err(Error::Config(format!("time_dim must be positive and even, got {}", arch.time_dim)));
        }
        Bounds::new(bounds.min, bounds.max)?;
        Ok(())
    }

    pub fn random(arch: DenoiserArch, ap_count: usize, bounds: Bounds, steps: usize, seed: u64) -> Result<Self> {
        Self::validate(&arch, ap_count, &bounds, steps)?;
        let mlp = Mlp::random(Self::shape(&arch, ap_count), seed)?;
        Ok(DenoiserNetwork { arch, ap_count, bounds, steps, mlp, blend: None })
    }

    pub fn zeros(arch: DenoiserArch, ap_count: usize, bounds: Bounds, steps: usize) -> Result<Self> {
        Self::validate(&arch, ap_count, &bounds, steps)?;
        let mlp = Mlp::zeros(Self::shape(&arch, ap_count))?;
        Ok(DenoiserNetwork { arch, ap_count, bounds, steps, mlp, blend: None })
    }

    pub fn from_params(
        arch: DenoiserArch,
        ap_count: usize,
        bounds: Bounds,
        steps: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        Self::validate(&arch, ap_count, &bounds, steps)?;
        let mlp = Mlp::from_parts(Self::shape(&arch, ap_count), params)?;
        Ok(DenoiserNetwork { arch, ap_count, bounds, steps, mlp, blend: None })
    }

    /// Enables the output blend with spread `data_sigma` (normalized units)
    /// under `schedule`. A zero spread disables it.
    pub fn with_blend(mut self, data_sigma: f64, schedule: &NoiseSchedule) -> Result<Self> {
        if !(data_sigma >= 0.0) || !data_sigma.is_finite() {
            return Err(Error::Config(format!("data_sigma must be finite and >= 0, got {data_sigma}")));
        }
        if schedule.steps() != self.steps {
            return Err(Error::Shape(format!(
                "denoiser built for {} steps, schedule has {}",
                self.steps,
                schedule.steps()
            )));
        }
        self.blend = (data_sigma > 0.0).then(|| OutputBlend {
            data_sigma,
            alpha_bars: schedule.alpha_bars().to_vec(),
        });
        Ok(self)
    }

    /// Spread used by the output blend, zero when disabled.
    pub fn data_sigma(&self) -> f64 {
        self.blend.as_ref().map_or(0.0, |b| b.data_sigma)
    }

    pub fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn params(&self) -> &[f64] {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.mlp.params_mut()
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn input_width(&self) -> usize {
        self.mlp.shape().input
    }

    pub fn embed(&self, loc: &Coordinate) -> Result<ConditionEmbedding> {
        embed_condition(loc, &self.bounds, self.arch.cond_frequencies)
    }

    fn assemble(&self, steps: &[usize], conds: &[ConditionEmbedding], noisy: ArrayView2<f64>) -> Result<Array2<f64>> {
        let rows = noisy.nrows();
        if noisy.ncols() != self.ap_count || steps.len() != rows || conds.len() != rows {
            return Err(Error::Shape(format!(
                "denoiser batch: {rows}x{} fingerprints, {} steps, {} conditions (expected width {})",
                noisy.ncols(),
                steps.len(),
                conds.len(),
                self.ap_count
            )));
        }
        let (a, e) = (self.ap_count, self.arch.cond_dim());
        let mut x = Array2::zeros((rows, self.input_width()));
        for r in 0..rows {
            if conds[r].0.len() != e {
                return Err(Error::Shape(format!("condition embedding has {} entries, expected {e}", conds[r].0.len())));
            }
            let time = embed_time(steps[r], self.steps, self.arch.time_dim)?;
            let mut row = x.row_mut(r);
            row.slice_mut(s![..a]).assign(&noisy.row(r));
            row.slice_mut(s![a..a + e]).assign(&ArrayView1::from(&conds[r].0));
            row.slice_mut(s![a + e..]).assign(&ArrayView1::from(&time));
        }
        Ok(x)
    }

    /// Single-sample forward pass with a precomputed condition embedding.
    pub fn forward_embedded(&self, step: usize, cond: &ConditionEmbedding, noisy: &[f64]) -> Result<Vec<f64>> {
        let noisy = ArrayView2::from_shape((1, noisy.len()), noisy)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let x = self.assemble(&[step], std::slice::from_ref(cond), noisy)?;
        let mut out = self.mlp.forward(x.view())?;
        self.blend_rows(&[step], noisy, &mut out);
        Ok(out.row(0).to_vec())
    }

    /// Applies the output blend in place and returns the per-row weight of
    /// the network output.
    fn blend_rows(&self, steps: &[usize], noisy: ArrayView2<f64>, out: &mut Array2<f64>) -> Vec<f64> {
        let Some(blend) = &self.blend else {
            return vec![1.0; steps.len()];
        };
        steps
            .iter()
            .enumerate()
            .map(|(r, &t)| {
                let (input_weight, gate) = blend.gate(t);
                let mut row = out.row_mut(r);
                row.zip_mut_with(&noisy.row(r), |o, &m| *o = gate * *o + input_weight * m);
                gate
            })
            .collect()
    }

    pub(crate) fn forward_cached(
        &self,
        steps: &[usize],
        conditions: &[Coordinate],
        noisy: ArrayView2<f64>,
    ) -> Result<(DenoiserCache, Array2<f64>)> {
        let conds = conditions.iter().map(|c| self.embed(c)).collect::<Result<Vec<_>>>()?;
        let x = self.assemble(steps, &conds, noisy)?;
        let (mlp, mut out) = self.mlp.forward_cached(x.view())?;
        let gates = self.blend_rows(steps, noisy, &mut out);
        Ok((DenoiserCache { mlp, gates }, out))
    }

    pub(crate) fn backward(&self, cache: &DenoiserCache, d_out: ArrayView2<f64>) -> Vec<f64> {
        let mut d = d_out.to_owned();
        for (mut row, &g) in d.rows_mut().into_iter().zip(&cache.gates) {
            row *= g;
        }
        self.mlp.backward(&cache.mlp, d.view())
    }
}

impl Denoise for DenoiserNetwork {
    fn ap_count(&self) -> usize {
        self.ap_count
    }

    fn diffusion_steps(&self) -> Option<usize> {
        Some(self.steps)
    }

    fn predict_clean(&self, steps: &[usize], conditions: &[Coordinate], noisy: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(steps, conditions, noisy)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> Bounds {
        Bounds::new(Coordinate { x: 0.0, y: 0.0 }, Coordinate { x: 10.0, y: 10.0 }).unwrap()
    }

    fn small() -> DenoiserArch {
        DenoiserArch { hidden: vec![8, 4, 8], cond_frequencies: 1, time_dim: 4, ..Default::default() }
    }

    #[test]
    fn zero_network_predicts_zero() {
        let net = DenoiserNetwork::zeros(small(), 3, bounds(), 10).unwrap();
        let cond = net.embed(&Coordinate { x: 2.0, y: 3.0 }).unwrap();
        assert_eq!(net.forward_embedded(4, &cond, &[0.3, 0.9, -1.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn output_width_and_determinism() {
        let net = DenoiserNetwork::random(small(), 5, bounds(), 10, 1).unwrap();
        let cond = net.embed(&Coordinate { x: 2.0, y: 3.0 }).unwrap();
        let a = net.forward_embedded(4, &cond, &[0.1; 5]).unwrap();
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, net.forward_embedded(4, &cond, &[0.1; 5]).unwrap());
    }

    #[test]
    fn shape_errors() {
        let net = DenoiserNetwork::random(small(), 5, bounds(), 10, 1).unwrap();
        let cond = net.embed(&Coordinate { x: 2.0, y: 3.0 }).unwrap();
        assert!(matches!(net.forward_embedded(4, &cond, &[0.1; 4]), Err(Error::Shape(_))));
        let short = ConditionEmbedding(vec![0.0; 2]);
        assert!(matches!(net.forward_embedded(4, &short, &[0.1; 5]), Err(Error::Shape(_))));
        assert!(net.forward_embedded(11, &cond, &[0.1; 5]).is_err());
    }

    #[test]
    fn blend_gate_limits() {
        let schedule = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        let net = DenoiserNetwork::zeros(small(), 2, bounds(), 10)
            .unwrap()
            .with_blend(0.05, &schedule)
            .unwrap();
        let cond = net.embed(&Coordinate { x: 2.0, y: 3.0 }).unwrap();
        // A zero network leaves only the input term c * M_t / sqrt(abar_t).
        let out = net.forward_embedded(1, &cond, &[0.5, 0.2]).unwrap();
        let ab = schedule.alpha_bar(1);
        let c = 0.0025 * ab / (0.0025 * ab + 1.0 - ab);
        assert!((out[0] - c * 0.5 / ab.sqrt()).abs() < 1e-15);
        assert!(c > 0.9);
        assert_eq!(net.data_sigma(), 0.05);
        let off = net.clone().with_blend(0.0, &schedule).unwrap();
        assert_eq!(off.forward_embedded(1, &cond, &[0.5, 0.2]).unwrap(), vec![0.0; 2]);
        let other = NoiseSchedule::linear(11, 1e-4, 0.02).unwrap();
        assert!(net.with_blend(0.05, &other).is_err());
    }

    #[test]
    fn default_architecture_width() {
        let net = DenoiserNetwork::zeros(DenoiserArch::default(), 520, bounds(), 200).unwrap();
        assert_eq!(net.input_width(), 520 + 18 + 16);
    }
}
