use crate::error::{Error, Result};
use crate::numerics::params::{ParamId, ParameterSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction over a fixed subset of a [`ParameterSet`].
///
/// Gradients are read, never cleared; callers zero them between steps.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    ids: Vec<ParamId>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(ps: &ParameterSet<T>, ids: Vec<ParamId>, config: AdamConfig) -> Self {
        let first = ids.iter().map(|&id| vec![T::zero(); ps.value(id).numel()]).collect();
        let second = ids.iter().map(|&id| vec![T::zero(); ps.value(id).numel()]).collect();
        Self {
            config,
            ids,
            first,
            second,
            step: 0,
        }
    }

    /// Optimizer over every trainable parameter.
    pub fn for_all(ps: &ParameterSet<T>, config: AdamConfig) -> Self {
        Self::new(ps, ps.trainable_ids(), config)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn step(&mut self, ps: &mut ParameterSet<T>) -> Result<()> {
        for &id in &self.ids {
            if ps.grad(id).is_none() {
                return Err(Error::MissingGradient(ps.get(id).name.clone()));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        let (lr, eps) = (T::c(c.lr), T::c(c.eps));
        for (slot, &id) in self.ids.iter().enumerate() {
            let p = ps.get_mut(id);
            let grad = p.grad.as_ref().expect("checked above").data();
            let value = p.value.data_mut();
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut ps = ParameterSet::<f64>::new();
        let id = ps.add("w", Tensor::from_f64(&[3], &[1.0, -2.0, 3.0]).unwrap()).unwrap();
        let mut opt = Adam::for_all(&ps, AdamConfig::with_lr(0.1));
        for _ in 0..5 {
            opt.step(&mut ps).unwrap();
        }
        assert_eq!(ps.value(id).data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut ps = ParameterSet::<f64>::new();
        let id = ps.add("w", Tensor::scalar(0.0)).unwrap();
        ps.get_mut(id).grad.as_mut().unwrap().data_mut()[0] = 1.0;
        let cfg = AdamConfig::with_lr(0.1);
        let mut opt = Adam::for_all(&ps, cfg);
        opt.step(&mut ps).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction.
        let expected = -0.1 * (1.0 / (1.0 + cfg.eps));
        assert!((ps.value(id).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let mut ps = ParameterSet::<f64>::new();
        let a = ps.add("a", Tensor::from_f64(&[2], &[0.5, 0.25]).unwrap()).unwrap();
        let b = ps.add("b", Tensor::from_f64(&[2], &[0.5, 0.25]).unwrap()).unwrap();
        for id in [a, b] {
            ps.get_mut(id).grad.as_mut().unwrap().data_mut().copy_from_slice(&[0.3, -0.7]);
        }
        let mut opt = Adam::for_all(&ps, AdamConfig::default());
        for _ in 0..3 {
            opt.step(&mut ps).unwrap();
        }
        assert_eq!(ps.value(a), ps.value(b));
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut ps = ParameterSet::<f64>::new();
        let id = ps.add_buffer("running_mean", Tensor::zeros(&[2])).unwrap();
        let mut opt = Adam::new(&ps, vec![id], AdamConfig::default());
        let err = opt.step(&mut ps).unwrap_err().to_string();
        assert!(err.contains("running_mean"), "{err}");
    }

    #[test]
    fn step_counter_increases() {
        let mut ps = ParameterSet::<f64>::new();
        ps.add("w", Tensor::zeros(&[1])).unwrap();
        let mut opt = Adam::for_all(&ps, AdamConfig::default());
        opt.step(&mut ps).unwrap();
        opt.step(&mut ps).unwrap();
        assert_eq!(opt.steps_taken(), 2);
    }
}
