//! Fully connected networks with hand-written backpropagation.
//!
//! Parameters live in one flat `Vec<f64>` so they can be checkpointed and
//! perturbed (finite differences) directly. Layer `l` occupies a row-major
//! `[fan_out][fan_in]` weight block followed by its `fan_out` biases, layers
//! in input-to-output order.
//!
//! With `skips` enabled, hidden layer `l` adds the activation of its mirror
//! layer `H - 1 - l` (when that layer comes earlier and has the same width)
//! to its pre-activation, giving an encoder/decoder with U-Net style skips.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Silu => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Silu),
            1 => Ok(Activation::Relu),
            c => Err(Error::Config(format!("unknown activation code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    pub skips: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    offset: usize,
    fan_in: usize,
    fan_out: usize,
    skip_from: Option<usize>,
}

impl Layer {
    fn weights<'a>(&self, theta: &'a [f64]) -> ArrayView2<'a, f64> {
        let n = self.fan_in * self.fan_out;
        ArrayView2::from_shape((self.fan_out, self.fan_in), &theta[self.offset..self.offset + n])
            .expect("layout matches parameter vector")
    }

    fn bias<'a>(&self, theta: &'a [f64]) -> ArrayView1<'a, f64> {
        let start = self.offset + self.fan_in * self.fan_out;
        ArrayView1::from(&theta[start..start + self.fan_out])
    }

    fn grads_mut<'a>(&self, grad: &'a mut [f64]) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let n = self.fan_in * self.fan_out;
        let (w, rest) = grad[self.offset..self.offset + n + self.fan_out].split_at_mut(n);
        (
            ArrayViewMut2::from_shape((self.fan_out, self.fan_in), w).expect("layout"),
            ArrayViewMut1::from(rest),
        )
    }

    fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

fn plan(shape: &MlpShape) -> Vec<Layer> {
    let h = shape.hidden.len();
    let mut widths = vec![shape.input];
    widths.extend(&shape.hidden);
    widths.push(shape.output);
    let mut offset = 0;
    (0..=h)
        .map(|l| {
            let skip_from = if shape.skips && l < h {
                let partner = h - 1 - l;
                (partner < l && shape.hidden[partner] == shape.hidden[l]).then_some(partner)
            } else {
                None
            };
            let layer = Layer {
                offset,
                fan_in: widths[l],
                fan_out: widths[l + 1],
                skip_from,
            };
            offset += layer.len();
            layer
        })
        .collect()
}

/// Intermediate values kept by [`Mlp::forward_cached`] for backpropagation.
pub struct ForwardCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    shape: MlpShape,
    layers: Vec<Layer>,
    theta: Vec<f64>,
}

impl Mlp {
    pub fn zeros(shape: MlpShape) -> Result<Self> {
        if shape.input == 0 || shape.output == 0 || shape.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let layers = plan(&shape);
        let n = layers.iter().map(Layer::len).sum();
        Ok(Mlp {
            shape,
            layers,
            theta: vec![0.0; n],
        })
    }

    /// Weights drawn from `N(0, 1/fan_in)` (`2/fan_in` for ReLU), biases zero.
    /// The output layer is scaled down so an untrained network starts near 0.
    pub fn random(shape: MlpShape, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(shape)?;
        let mut rng = seed::rng(seed);
        let gain = match net.shape.activation {
            Activation::Silu => 1.0,
            Activation::Relu => 2.0,
        };
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.clone().iter().enumerate() {
            let scale = (gain / layer.fan_in as f64).sqrt() * if l == last { 0.1 } else { 1.0 };
            for w in &mut net.theta[layer.offset..layer.offset + layer.fan_in * layer.fan_out] {
                *w = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(net)
    }

    pub fn from_parts(shape: MlpShape, theta: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(shape)?;
        if theta.len() != net.theta.len() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, architecture needs {}",
                theta.len(),
                net.theta.len()
            )));
        }
        net.theta = theta;
        Ok(net)
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.shape.input {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.shape.input,
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Row-wise forward pass of a batch.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.1)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(ForwardCache, Array2<f64>)> {
        self.check_input(&x)?;
        let act = self.shape.activation;
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() - 1);
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() - 1);
        let mut out = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = if l == 0 { x.view() } else { post[l - 1].view() };
            let mut z = prev.dot(&layer.weights(&self.theta).t());
            z += &layer.bias(&self.theta);
            if let Some(p) = layer.skip_from {
                z += &post[p];
            }
            if l + 1 == self.layers.len() {
                out = Some(z);
            } else {
                post.push(z.mapv(|v| act.apply(v)));
                pre.push(z);
            }
        }
        let cache = ForwardCache {
            input: x.to_owned(),
            pre,
            post,
        };
        Ok((cache, out.expect("at least one layer")))
    }

    /// Gradient of `sum(d_out * output)` with respect to the parameters,
    /// i.e. backpropagation of an upstream gradient `d_out`.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.theta.len()];
        let act = self.shape.activation;
        let h = self.layers.len() - 1;
        let mut upstream: Vec<Option<Array2<f64>>> = vec![None; h];
        let mut dz = d_out.to_owned();
        for l in (0..=h).rev() {
            let layer = &self.layers[l];
            let prev = if l == 0 { cache.input.view() } else { cache.post[l - 1].view() };
            {
                let (mut gw, mut gb) = layer.grads_mut(&mut grad);
                gw.assign(&dz.t().dot(&prev));
                gb.assign(&dz.sum_axis(Axis(0)));
            }
            if l == 0 {
                break;
            }
            let mut add = |slot: usize, g: Array2<f64>| match &mut upstream[slot] {
                Some(acc) => *acc += &g,
                None => upstream[slot] = Some(g),
            };
            add(l - 1, dz.dot(&layer.weights(&self.theta)));
            if let Some(p) = layer.skip_from {
                add(p, dz.clone());
            }
            let mut da = upstream[l - 1].take().expect("filled by layer above");
            ndarray::Zip::from(&mut da)
                .and(&cache.pre[l - 1])
                .for_each(|g, &z| *g *= act.derivative(z));
            dz = da;
        }
        grad
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl Adam {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

pub(crate) fn rows_to_array(rows: &[&[f64]], width: usize) -> Array2<f64> {
    let mut a = Array2::zeros((rows.len(), width));
    for (mut dst, src) in a.rows_mut().into_iter().zip(rows) {
        dst.assign(&ArrayView1::from(*src));
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn shape(skips: bool, activation: Activation) -> MlpShape {
        MlpShape {
            input: 3,
            hidden: vec![5, 4, 5],
            output: 2,
            activation,
            skips,
        }
    }

    #[test]
    fn skip_plan_is_symmetric() {
        let layers = plan(&shape(true, Activation::Silu));
        assert_eq!(layers[2].skip_from, Some(0));
        assert_eq!(layers[1].skip_from, None);
        assert_eq!(layers[3].skip_from, None);
        let layers = plan(&shape(false, Activation::Silu));
        assert!(layers.iter().all(|l| l.skip_from.is_none()));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(shape(true, Activation::Silu)).unwrap();
        let y = net.forward(array![[1.0, -2.0, 3.0]].view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_width_is_a_shape_error() {
        let net = Mlp::zeros(shape(true, Activation::Silu)).unwrap();
        assert!(matches!(net.forward(array![[1.0, 2.0]].view()), Err(Error::Shape(_))));
    }

    fn check_gradient(activation: Activation, skips: bool) {
        let net = Mlp::random(shape(skips, activation), 5).unwrap();
        let x = array![[0.3, -0.7, 1.1], [0.9, 0.2, -0.4]];
        let target = array![[0.5, -0.5], [1.0, 0.25]];
        let loss = |n: &Mlp| {
            let y = n.forward(x.view()).unwrap();
            (&y - &target).mapv(|v| v * v).sum()
        };
        let (cache, y) = net.forward_cached(x.view()).unwrap();
        let d = (&y - &target) * 2.0;
        let analytic = net.backward(&cache, d.view());
        let h = 1e-6;
        for i in 0..net.param_count() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let err = (numeric - analytic[i]).abs();
            assert!(err < 1e-6 * (1.0 + numeric.abs()), "param {i}: {numeric} vs {}", analytic[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_silu_with_skips() {
        check_gradient(Activation::Silu, true);
    }

    #[test]
    fn gradient_matches_finite_differences_relu() {
        check_gradient(Activation::Relu, false);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2), "{p:?}");
    }
}
