use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};
use crate::scalar::Scalar;

/// Linear variance schedule with derived products. Index `t` runs `1..=T`;
/// position 0 of `alpha_bar` holds `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub t_max: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(t_max: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::invalid("schedule needs T >= 1"));
        }
        if !(beta_1 > 0.0 && beta_1 <= beta_t && beta_t < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_t}"
            )));
        }
        let mut betas = vec![0.0];
        for i in 0..t_max {
            let frac = if t_max == 1 { 0.0 } else { i as f64 / (t_max - 1) as f64 };
            betas.push(beta_1 + (beta_t - beta_1) * frac);
        }
        let mut alpha_bars = vec![1.0];
        for t in 1..=t_max {
            alpha_bars.push(alpha_bars[t - 1] * (1.0 - betas[t]));
        }
        Ok(Self {
            t_max,
            betas,
            alpha_bars,
        })
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max {
            return Err(Error::invalid(format!("timestep {t} outside [1, {}]", self.t_max)));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t]
    }

    /// `ᾱ_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Posterior variance `β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.betas[t] * (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t])
    }

    /// `x_t = √ᾱ_t x_0 + √(1 − ᾱ_t) ε`.
    pub fn forward_diffuse<T: Scalar>(&self, x0: &Tensor<T>, t: usize, eps: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(t)?;
        if x0.shape() != eps.shape() {
            return Err(Error::shape(
                "forward_diffuse",
                format!("x0 {:?} vs noise {:?}", x0.shape(), eps.shape()),
            ));
        }
        let a = T::c(self.alpha_bar(t).sqrt());
        let s = T::c((1.0 - self.alpha_bar(t)).sqrt());
        let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| a * x + s * e).collect();
        Tensor::new(x0.shape(), data)
    }

    /// Posterior mean `(x_t − β_t / √(1 − ᾱ_t) · ε̂) / √α_t`.
    pub fn reverse_mean<T: Scalar>(&self, x_t: &[T], t: usize, eps_hat: &[T]) -> Result<Vec<T>> {
        self.check(t)?;
        if x_t.len() != eps_hat.len() {
            return Err(Error::shape("reverse_step", format!("{} vs {} values", x_t.len(), eps_hat.len())));
        }
        let coef = self.beta(t) / (1.0 - self.alpha_bar(t)).sqrt();
        let inv = 1.0 / self.alpha(t).sqrt();
        Ok(x_t
            .iter()
            .zip(eps_hat)
            .map(|(&x, &e)| T::c(inv * (x.f64() - coef * e.f64())))
            .collect())
    }

    /// One ancestral step `x_t → x_{t−1}`; no noise is added at `t = 1`.
    pub fn reverse_step<T: Scalar>(
        &self,
        x_t: &[T],
        t: usize,
        eps_hat: &[T],
        rng: &mut RngStream,
    ) -> Result<Vec<T>> {
        let mut mean = self.reverse_mean(x_t, t, eps_hat)?;
        if t > 1 {
            let sigma = self.posterior_variance(t).sqrt();
            for v in &mut mean {
                *v += T::c(sigma * rng.normal::<f64>());
            }
        }
        Ok(mean)
    }
}
