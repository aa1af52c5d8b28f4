use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::unet::Denoiser;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub omega: f64,
    /// Probability of replacing the style by `∅` during training.
    pub p_drop: f64,
    /// Divide the summed guidance terms by `|D|`.
    pub fuse_normalize: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            omega: 1.2,
            p_drop: 0.5,
            fuse_normalize: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::Config(format!("p_drop must lie in [0, 1], got {}", self.p_drop)));
        }
        if !self.omega.is_finite() {
            return Err(Error::Config(format!("omega must be finite, got {}", self.omega)));
        }
        Ok(())
    }
}

/// Guided noise estimates for several chains in one denoiser call.
///
/// `x` is `[M, K, L]` and `combos[j]` lists the styles fused for chain `j`.
/// The batch sent to the denoiser holds, per chain, the unconditional row
/// followed by one row per style, so chain `j` costs `|combos[j]| + 1`
/// evaluations. Returns `ε_∅ + ω Σ_s (ε_s − ε_∅)` per chain.
pub fn fused_epsilon_batch<T: Scalar, D: Denoiser<T> + ?Sized>(
    denoiser: &D,
    x: &Tensor<T>,
    t: usize,
    combos: &[Vec<&[T]>],
    omega: f64,
    normalize: bool,
) -> Result<Tensor<T>> {
    let m = combos.len();
    if x.rank() != 3 || x.dim(0) != m {
        return Err(Error::shape(
            "fused_epsilon",
            format!("{m} combinations for inputs {:?}", x.shape()),
        ));
    }
    if let Some(j) = combos.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("style combination for chain {j} is empty")));
    }
    let row = x.dim(1) * x.dim(2);
    let rows: usize = combos.iter().map(|c| c.len() + 1).sum();
    let mut xs = Vec::with_capacity(rows * row);
    let mut conds: Vec<Option<&[T]>> = Vec::with_capacity(rows);
    for (j, combo) in combos.iter().enumerate() {
        let xj = &x.data()[j * row..(j + 1) * row];
        xs.extend_from_slice(xj);
        conds.push(None);
        for &s in combo {
            xs.extend_from_slice(xj);
            conds.push(Some(s));
        }
    }
    let batch = Tensor::new(&[rows, x.dim(1), x.dim(2)], xs)?;
    let eps = denoiser.predict(&batch, &vec![t; rows], &conds)?;
    if eps.shape() != batch.shape() {
        return Err(Error::shape(
            "fused_epsilon",
            format!("denoiser returned {:?} for {:?}", eps.shape(), batch.shape()),
        ));
    }
    let e = eps.data();
    let mut out = Vec::with_capacity(m * row);
    let mut r = 0;
    for combo in combos {
        let w = if normalize {
            T::c(omega / combo.len() as f64)
        } else {
            T::c(omega)
        };
        let uncond = &e[r * row..(r + 1) * row];
        let mut acc = uncond.to_vec();
        for i in 1..=combo.len() {
            let cond = &e[(r + i) * row..(r + i + 1) * row];
            for ((a, &c), &u) in acc.iter_mut().zip(cond).zip(uncond) {
                *a += w * (c - u);
            }
        }
        out.extend_from_slice(&acc);
        r += combo.len() + 1;
    }
    Tensor::new(x.shape(), out)
}

/// Guided noise estimate for one input `[K, L]` and a fused style set.
pub fn fused_epsilon<T: Scalar, D: Denoiser<T> + ?Sized>(
    denoiser: &D,
    x_t: &Tensor<T>,
    t: usize,
    styles: &[&[T]],
    omega: f64,
    normalize: bool,
) -> Result<Tensor<T>> {
    let shape = x_t.shape().to_vec();
    let x = x_t.clone().reshape(&[1, shape[0], shape[1]])?;
    let out = fused_epsilon_batch(denoiser, &x, t, &[styles.to_vec()], omega, normalize)?;
    out.reshape(&shape)
}

/// Single-style classifier-free guidance, `ε_∅ + ω (ε_s − ε_∅)`.
pub fn cfg_epsilon<T: Scalar, D: Denoiser<T> + ?Sized>(
    denoiser: &D,
    x_t: &Tensor<T>,
    t: usize,
    style: &[T],
    omega: f64,
) -> Result<Tensor<T>> {
    fused_epsilon(denoiser, x_t, t, &[style], omega, false)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub omega: f64,
    pub fuse_normalize: bool,
    /// Clamp every `x_t` to `[-c, c]`.
    pub clip: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            omega: 1.2,
            fuse_normalize: false,
            clip: Some(6.0),
        }
    }
}

/// Runs one reverse chain per entry of `combos` from `x_T ~ N(0, I)` down to
/// `x_0`. Chain `j` draws all of its noise from `rngs[j]`, so its output does
/// not depend on which other chains share the batch.
pub fn sample_chains<T: Scalar, D: Denoiser<T> + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    k: usize,
    l: usize,
    combos: &[Vec<&[T]>],
    rngs: &mut [RngStream],
    config: &SamplerConfig,
) -> Result<Vec<Tensor<T>>> {
    let m = combos.len();
    if rngs.len() != m {
        return Err(Error::invalid(format!("{m} chains but {} rng streams", rngs.len())));
    }
    let row = k * l;
    let mut x = Vec::with_capacity(m * row);
    for rng in rngs.iter_mut() {
        x.extend(rng.normals::<T>(row));
    }
    let mut x = Tensor::new(&[m, k, l], x)?;
    for t in (1..=schedule.t_max).rev() {
        let eps = fused_epsilon_batch(denoiser, &x, t, combos, config.omega, config.fuse_normalize)?;
        let mut next = Vec::with_capacity(m * row);
        for (j, rng) in rngs.iter_mut().enumerate() {
            let span = j * row..(j + 1) * row;
            let mut xj = schedule.reverse_step(&x.data()[span.clone()], t, &eps.data()[span], rng)?;
            if let Some(i) = xj.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "reverse chain {j} at step t={t} (element {i})"
                )));
            }
            if let Some(c) = config.clip {
                let c = T::c(c);
                for v in &mut xj {
                    *v = v.max(-c).min(c);
                }
            }
            next.extend(xj);
        }
        x = Tensor::new(&[m, k, l], next)?;
    }
    Ok((0..m).map(|j| {
        Tensor::new(&[k, l], x.data()[j * row..(j + 1) * row].to_vec()).expect("row length")
    })
    .collect())
}
