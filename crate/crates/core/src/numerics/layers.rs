//! Parameterized layers. Each layer registers its tensors in a
//! [`ParameterSet`] under `{name}.{field}` and keeps only the handles.

use crate::error::Result;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{ParamId, ParameterSet};
use crate::numerics::rng::RngStream;
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Kaiming-uniform (fan-in, ReLU gain) initialization.
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::c(rng.uniform(-bound, bound)))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        ps: &mut ParameterSet<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let weight = ps.add(&format!("{name}.weight"), kaiming_uniform(&[d_out, d_in], d_in, rng))?;
        let bias = Some(ps.add(&format!("{name}.bias"), Tensor::zeros(&[d_out]))?);
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    /// Multiplies the initial weights by `factor` (e.g. for heads whose
    /// outputs should start near zero).
    pub fn shrink_init<T: Scalar>(&self, ps: &mut ParameterSet<T>, factor: f64) {
        let f = T::c(factor);
        ps.value_mut(self.weight).data_mut().iter_mut().for_each(|w| *w *= f);
    }

    /// `x: [N, d_in]` → `[N, d_out]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.weight);
        let b = self.bias.map(|b| g.param(ps, b));
        g.linear(x, w, b)
    }

    /// Applies the layer to every position of `x: [B, n, d_in]`.
    pub fn forward_tokens<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParameterSet<T>,
        x: Var,
    ) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let flat = g.reshape(x, &[s[0] * s[1], s[2]])?;
        let y = self.forward(g, ps, flat)?;
        g.reshape(y, &[s[0], s[1], self.d_out])
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        ps: &mut ParameterSet<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let weight = ps.add(
            &format!("{name}.weight"),
            kaiming_uniform(&[c_out, c_in, k], c_in * k, rng),
        )?;
        let bias = ps.add(&format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Self {
            weight,
            bias,
            c_in,
            c_out,
            k,
            stride,
            padding,
        })
    }

    /// Stride-1 convolution that preserves length for odd `k`.
    pub fn same<T: Scalar>(
        ps: &mut ParameterSet<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Self::new(ps, name, c_in, c_out, k, 1, k / 2, rng)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.weight);
        let b = g.param(ps, self.bias);
        g.conv1d(x, w, Some(b), self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        ps: &mut ParameterSet<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        // Each output position receives about c_in * k / stride contributions.
        let fan_in = (c_in * k / stride.max(1)).max(1);
        let weight = ps.add(
            &format!("{name}.weight"),
            kaiming_uniform(&[c_in, c_out, k], fan_in, rng),
        )?;
        let bias = ps.add(&format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.weight);
        let b = g.param(ps, self.bias);
        g.conv_transpose1d(x, w, Some(b), self.stride, self.padding, self.output_padding)
    }
}

fn affine_pair<T: Scalar>(
    ps: &mut ParameterSet<T>,
    name: &str,
    channels: usize,
) -> Result<(ParamId, ParamId)> {
    let gamma = ps.add(&format!("{name}.gamma"), Tensor::ones(&[channels]))?;
    let beta = ps.add(&format!("{name}.beta"), Tensor::zeros(&[channels]))?;
    Ok((gamma, beta))
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    /// Uses `min(8, channels)` groups, reduced until it divides `channels`.
    pub fn new<T: Scalar>(ps: &mut ParameterSet<T>, name: &str, channels: usize) -> Result<Self> {
        let mut groups = channels.clamp(1, 8);
        while !channels.is_multiple_of(groups) {
            groups -= 1;
        }
        let (gamma, beta) = affine_pair(ps, name, channels)?;
        Ok(Self { gamma, beta, groups })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>, x: Var) -> Result<Var> {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        g.group_norm(x, gamma, beta, self.groups)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(ps: &mut ParameterSet<T>, name: &str, dim: usize) -> Result<Self> {
        let (gamma, beta) = affine_pair(ps, name, dim)?;
        Ok(Self { gamma, beta })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>, x: Var) -> Result<Var> {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Batch normalization over `[B, C]` or `[B, C, L]`.
///
/// Training mode normalizes with batch statistics and queues running-stat
/// updates on the graph; evaluation mode uses the running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
}

impl BatchNorm1d {
    pub fn new<T: Scalar>(ps: &mut ParameterSet<T>, name: &str, channels: usize) -> Result<Self> {
        let (gamma, beta) = affine_pair(ps, name, channels)?;
        let running_mean = ps.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]))?;
        let running_var = ps.add_buffer(&format!("{name}.running_var"), Tensor::ones(&[channels]))?;
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
            momentum: 0.1,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParameterSet<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        match mode {
            Mode::Train => {
                let gamma = g.param(ps, self.gamma);
                let beta = g.param(ps, self.beta);
                let s = g.shape(x);
                let n = s[0] * s[2..].iter().product::<usize>();
                let (out, mean, var) = g.batch_norm_train(x, gamma, beta)?;
                let m = T::c(self.momentum);
                let unbias = if n > 1 { T::c(n as f64 / (n as f64 - 1.0)) } else { T::one() };
                let rm = ps.value(self.running_mean).data();
                let rv = ps.value(self.running_var).data();
                let new_mean: Vec<T> = rm.iter().zip(&mean).map(|(&r, &b)| (T::one() - m) * r + m * b).collect();
                let new_var: Vec<T> = rv
                    .iter()
                    .zip(&var)
                    .map(|(&r, &b)| (T::one() - m) * r + m * b * unbias)
                    .collect();
                let c = new_mean.len();
                g.record_buffer_update(self.running_mean, Tensor::new(&[c], new_mean)?);
                g.record_buffer_update(self.running_var, Tensor::new(&[c], new_var)?);
                Ok(out)
            }
            Mode::Eval => {
                let gamma = ps.value(self.gamma).data();
                let beta = ps.value(self.beta).data();
                let rm = ps.value(self.running_mean).data();
                let rv = ps.value(self.running_var).data();
                let eps = T::c(1e-5);
                let scale: Vec<T> = gamma.iter().zip(rv).map(|(&gm, &v)| gm / (v + eps).sqrt()).collect();
                let shift: Vec<T> = beta
                    .iter()
                    .zip(rm)
                    .zip(&scale)
                    .map(|((&b, &m), &s)| b - m * s)
                    .collect();
                g.channel_affine(x, scale, &shift)
            }
        }
    }
}
