use crate::error::{Error, Result};

/// Linear variance schedule. Steps are 1-based throughout: `beta(t)` for
/// `t in 1..=T`, with the convention `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule {
            beta_start,
            beta_end,
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Range(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Closed-form sample of `M_t` given `M_0` and standard normal `eps`.
    pub fn forward_diffuse(&self, m0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check(t)?;
        if m0.len() != eps.len() {
            return Err(Error::Shape(format!(
                "signal has {} entries but noise has {}",
                m0.len(),
                eps.len()
            )));
        }
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(m0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// Coefficients `(c_clean, c_noisy, variance)` of the Gaussian posterior
    /// `q(M_{t-1} | M_t, M_0) = N(c_clean M_0 + c_noisy M_t, variance I)`.
    pub fn posterior(&self, t: usize) -> Result<(f64, f64, f64)> {
        self.check(t)?;
        if t == 1 {
            return Ok((1.0, 0.0, 0.0));
        }
        let (ab, ab_prev, beta) = (self.alpha_bar(t), self.alpha_bar(t - 1), self.beta(t));
        let c_clean = ab_prev.sqrt() * beta / (1.0 - ab);
        let c_noisy = self.alphas[t - 1].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let variance = beta * (1.0 - ab_prev) / (1.0 - ab);
        Ok((c_clean, c_noisy, variance))
    }
}
