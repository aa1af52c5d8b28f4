//! One-dimensional Gaussian problem with exact noise predictions.
//!
//! The unconditional law is `N(0, σ₀²)`; condition `[μ, σ]` has law
//! `N(μ, σ²)`. Under the forward process the condition's marginal at step
//! `t` is `N(√ᾱ μ, ᾱσ² + 1 − ᾱ)`, so the optimal predictor is
//! `ε = √(1 − ᾱ) (x − √ᾱ μ) / (ᾱσ² + 1 − ᾱ)`.

use stylepad::diffusion::{Denoiser, NoiseSchedule};
use stylepad::numerics::Tensor;
use stylepad::Result;

pub struct GaussianToy {
    pub sigma0: f64,
    pub schedule: NoiseSchedule,
}

impl GaussianToy {
    pub fn epsilon(&self, x: f64, t: usize, mu: f64, sigma: f64) -> f64 {
        let ab = self.schedule.alpha_bar(t);
        (1.0 - ab).sqrt() * (x - ab.sqrt() * mu) / (ab * sigma * sigma + 1.0 - ab)
    }
}

impl Denoiser<f64> for GaussianToy {
    fn predict(&self, x: &Tensor<f64>, t: &[usize], conds: &[Option<&[f64]>]) -> Result<Tensor<f64>> {
        let data = x
            .data()
            .iter()
            .zip(t)
            .zip(conds)
            .map(|((&xi, &ti), c)| match c {
                Some(s) => self.epsilon(xi, ti, s[0], s[1]),
                None => self.epsilon(xi, ti, 0.0, self.sigma0),
            })
            .collect();
        Tensor::new(x.shape(), data)
    }
}

/// Mean and variance of `N(0, σ₀²) · Π_i N(μ_i, σ_i²) / N(0, σ₀²)`.
pub fn product_of_experts(sigma0: f64, experts: &[[f64; 2]]) -> (f64, f64) {
    let base = 1.0 / (sigma0 * sigma0);
    let mut precision = base;
    let mut linear = 0.0;
    for &[mu, s] in experts {
        precision += 1.0 / (s * s) - base;
        linear += mu / (s * s);
    }
    (linear / precision, 1.0 / precision)
}

pub fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
