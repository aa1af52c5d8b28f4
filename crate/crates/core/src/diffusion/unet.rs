//! 1-D UNet noise predictor conditioned on timestep and style.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::embedding::timestep_embedding_batch;
use crate::numerics::layers::{Conv1d, ConvTranspose1d, GroupNorm, Linear};
use crate::numerics::{Graph, ParameterSet, RngStream, Tensor, Var};
use crate::scalar::Scalar;

/// Anything that predicts noise for a batch of `[K, L]` inputs.
///
/// `conds[i] == None` requests the unconditional prediction for row `i`.
pub trait Denoiser<T: Scalar> {
    fn predict(&self, x: &Tensor<T>, t: &[usize], conds: &[Option<&[T]>]) -> Result<Tensor<T>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    /// Width after the initial convolution.
    pub base: usize,
    /// Level widths are `base * mult`; every level but the last halves `L`.
    pub mults: Vec<usize>,
    pub time_freq_dim: usize,
    pub time_dim: usize,
    pub style_hidden: usize,
    pub style_out: usize,
    /// Self-attention over positions in the middle block.
    pub attention: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            base: 16,
            mults: vec![1, 2],
            time_freq_dim: 64,
            time_dim: 256,
            style_hidden: 100,
            style_out: 64,
            attention: false,
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv1d,
    gn1: GroupNorm,
    cond: Linear,
    conv2: Conv1d,
    gn2: GroupNorm,
    skip: Option<Conv1d>,
    c_out: usize,
}

impl ResBlock {
    fn new<T: Scalar>(
        ps: &mut ParameterSet<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        cond_dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv1d::same(ps, &format!("{name}.conv1"), c_in, c_out, 3, rng)?,
            gn1: GroupNorm::new(ps, &format!("{name}.gn1"), c_out)?,
            cond: Linear::new(ps, &format!("{name}.cond"), cond_dim, 2 * c_out, rng)?,
            conv2: Conv1d::same(ps, &format!("{name}.conv2"), c_out, c_out, 3, rng)?,
            gn2: GroupNorm::new(ps, &format!("{name}.gn2"), c_out)?,
            skip: if c_in != c_out {
                Some(Conv1d::same(ps, &format!("{name}.skip"), c_in, c_out, 1, rng)?)
            } else {
                None
            },
            c_out,
        })
    }

    /// `cond` is the activated conditioning vector `[N, cond_dim]`.
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>, x: Var, cond: Var) -> Result<Var> {
        let l = g.shape(x)[2];
        let c = self.c_out;
        let ss = self.cond.forward(g, ps, cond)?;
        let scale = g.slice(ss, 1, 0, c)?;
        let shift = g.slice(ss, 1, c, 2 * c)?;
        let scale = g.broadcast_last(scale, l);
        let shift = g.broadcast_last(shift, l);

        let h = self.conv1.forward(g, ps, x)?;
        let h = self.gn1.forward(g, ps, h)?;
        let hs = g.mul(h, scale)?;
        let h = g.add(h, hs)?;
        let h = g.add(h, shift)?;
        let h = g.silu(h);
        let h = self.conv2.forward(g, ps, h)?;
        let h = self.gn2.forward(g, ps, h)?;
        let h = g.silu(h);
        let res = match &self.skip {
            Some(s) => s.forward(g, ps, x)?,
            None => x,
        };
        g.add(h, res)
    }
}

/// Single-head self-attention over positions of `[N, C, l]`.
#[derive(Debug, Clone)]
struct Attention {
    gn: GroupNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    fn new<T: Scalar>(ps: &mut ParameterSet<T>, name: &str, c: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            gn: GroupNorm::new(ps, &format!("{name}.gn"), c)?,
            q: Linear::new(ps, &format!("{name}.q"), c, c, rng)?,
            k: Linear::new(ps, &format!("{name}.k"), c, c, rng)?,
            v: Linear::new(ps, &format!("{name}.v"), c, c, rng)?,
            o: Linear::new(ps, &format!("{name}.o"), c, c, rng)?,
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>, x: Var) -> Result<Var> {
        let c = g.shape(x)[1];
        let h = self.gn.forward(g, ps, x)?;
        let tokens = g.permute(h, &[0, 2, 1])?;
        let q = self.q.forward_tokens(g, ps, tokens)?;
        let k = self.k.forward_tokens(g, ps, tokens)?;
        let v = self.v.forward_tokens(g, ps, tokens)?;
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, T::c(1.0 / (c as f64).sqrt()));
        let attn = g.softmax_last(scores)?;
        let out = g.bmm(attn, v, false)?;
        let out = self.o.forward_tokens(g, ps, out)?;
        let out = g.permute(out, &[0, 2, 1])?;
        g.add(x, out)
    }
}

#[derive(Debug, Clone)]
enum Resample {
    Conv(Conv1d),
    Transpose(ConvTranspose1d),
}

impl Resample {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>, x: Var) -> Result<Var> {
        match self {
            Resample::Conv(c) => c.forward(g, ps, x),
            Resample::Transpose(c) => c.forward(g, ps, x),
        }
    }
}

#[derive(Debug, Clone)]
struct Level {
    blocks: [ResBlock; 2],
    resample: Resample,
}

/// Noise predictor `ε_θ(x_t, t, s)`.
///
/// Downsampling levels hold two residual blocks (their outputs are kept as
/// skips) and a stride-2 conv; upsampling levels mirror them with skip
/// concatenation and stride-2 transposed convs. Every residual block
/// receives a scale/shift from the concatenated timestep and style
/// embeddings.
#[derive(Debug, Clone)]
pub struct UNet<T> {
    pub config: UNetConfig,
    pub k: usize,
    pub l: usize,
    pub style_dim: usize,
    pub params: ParameterSet<T>,
    init_conv: Conv1d,
    time1: Linear,
    time2: Linear,
    style1: Linear,
    style2: Linear,
    downs: Vec<Level>,
    mid: ResBlock,
    mid_attn: Option<Attention>,
    ups: Vec<Level>,
    final_block: ResBlock,
    final_conv: Conv1d,
}

impl<T: Scalar> UNet<T> {
    pub fn new(config: &UNetConfig, k: usize, l: usize, style_dim: usize, rng: &mut RngStream) -> Result<Self> {
        if config.mults.is_empty() || config.base == 0 {
            return Err(Error::Config("unet needs base > 0 and at least one level".into()));
        }
        let halvings = config.mults.len() - 1;
        if !l.is_multiple_of(1 << halvings) {
            return Err(Error::Config(format!(
                "L={l} must be divisible by 2^{halvings} for {} levels",
                config.mults.len()
            )));
        }
        if !config.time_freq_dim.is_multiple_of(2) {
            return Err(Error::Config("time_freq_dim must be even".into()));
        }
        let mut ps = ParameterSet::new();
        let cond_dim = config.time_dim + config.style_out;
        let init_conv = Conv1d::same(&mut ps, "unet.init", k, config.base, 3, rng)?;
        let time1 = Linear::new(&mut ps, "unet.time1", config.time_freq_dim, config.time_dim, rng)?;
        let time2 = Linear::new(&mut ps, "unet.time2", config.time_dim, config.time_dim, rng)?;
        let style1 = Linear::new(&mut ps, "unet.style1", style_dim, config.style_hidden, rng)?;
        let style2 = Linear::new(&mut ps, "unet.style2", config.style_hidden, config.style_out, rng)?;

        let mut dims = vec![config.base];
        dims.extend(config.mults.iter().map(|m| m * config.base));
        let pairs: Vec<(usize, usize)> = dims.windows(2).map(|w| (w[0], w[1])).collect();
        let n = pairs.len();
        let mut downs = Vec::new();
        for (i, &(din, dout)) in pairs.iter().enumerate() {
            let name = format!("unet.down{i}");
            let last = i + 1 == n;
            downs.push(Level {
                blocks: [
                    ResBlock::new(&mut ps, &format!("{name}.block0"), din, din, cond_dim, rng)?,
                    ResBlock::new(&mut ps, &format!("{name}.block1"), din, din, cond_dim, rng)?,
                ],
                resample: if last {
                    Resample::Conv(Conv1d::same(&mut ps, &format!("{name}.out"), din, dout, 3, rng)?)
                } else {
                    Resample::Conv(Conv1d::new(&mut ps, &format!("{name}.down"), din, dout, 3, 2, 1, rng)?)
                },
            });
        }
        let mid_dim = *dims.last().unwrap();
        let mid = ResBlock::new(&mut ps, "unet.mid", mid_dim, mid_dim, cond_dim, rng)?;
        let mid_attn = if config.attention {
            Some(Attention::new(&mut ps, "unet.mid_attn", mid_dim, rng)?)
        } else {
            None
        };
        let mut ups = Vec::new();
        for (j, &(din, dout)) in pairs.iter().rev().enumerate() {
            let name = format!("unet.up{j}");
            let last = j + 1 == n;
            ups.push(Level {
                blocks: [
                    ResBlock::new(&mut ps, &format!("{name}.block0"), dout + din, dout, cond_dim, rng)?,
                    ResBlock::new(&mut ps, &format!("{name}.block1"), dout + din, dout, cond_dim, rng)?,
                ],
                resample: if last {
                    Resample::Conv(Conv1d::same(&mut ps, &format!("{name}.out"), dout, din, 3, rng)?)
                } else {
                    Resample::Transpose(ConvTranspose1d::new(
                        &mut ps,
                        &format!("{name}.up"),
                        dout,
                        din,
                        3,
                        2,
                        1,
                        1,
                        rng,
                    )?)
                },
            });
        }
        let final_block = ResBlock::new(&mut ps, "unet.final", 2 * config.base, config.base, cond_dim, rng)?;
        let final_conv = Conv1d::same(&mut ps, "unet.final_conv", config.base, k, 1, rng)?;
        // Start from ε̂ ≡ 0 so the initial loss is E[ε²] = 1.
        ps.value_mut(final_conv.weight).fill(T::zero());
        Ok(Self {
            config: config.clone(),
            k,
            l,
            style_dim,
            params: ps,
            init_conv,
            time1,
            time2,
            style1,
            style2,
            downs,
            mid,
            mid_attn,
            ups,
            final_block,
            final_conv,
        })
    }

    /// Records `ε_θ(x, t, s)` on `g`. `styles` is `[N, H]`; dropped
    /// conditions are passed as zero rows.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, t: &[usize], styles: &Tensor<T>) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[1] != self.k || s[2] != self.l {
            return Err(Error::shape(
                "unet",
                format!("input {s:?}, expected [N, {}, {}]", self.k, self.l),
            ));
        }
        let n = s[0];
        if t.len() != n || styles.shape() != [n, self.style_dim] {
            return Err(Error::shape(
                "unet",
                format!(
                    "{n} inputs with {} timesteps and styles {:?} (style length must be {})",
                    t.len(),
                    styles.shape(),
                    self.style_dim
                ),
            ));
        }
        let ps = &self.params;
        let temb = g.constant(timestep_embedding_batch(t, self.config.time_freq_dim)?);
        let temb = self.time1.forward(g, ps, temb)?;
        let temb = g.silu(temb);
        let temb = self.time2.forward(g, ps, temb)?;
        let semb = g.constant(styles.clone());
        let semb = self.style1.forward(g, ps, semb)?;
        let semb = g.silu(semb);
        let semb = self.style2.forward(g, ps, semb)?;
        let cond = g.concat(&[temb, semb], 1)?;
        let cond = g.silu(cond);

        let mut h = self.init_conv.forward(g, ps, x)?;
        let init = h;
        let mut skips = Vec::new();
        for level in &self.downs {
            for block in &level.blocks {
                h = block.forward(g, ps, h, cond)?;
                skips.push(h);
            }
            h = level.resample.forward(g, ps, h)?;
        }
        h = self.mid.forward(g, ps, h, cond)?;
        if let Some(attn) = &self.mid_attn {
            h = attn.forward(g, ps, h)?;
        }
        for level in &self.ups {
            for block in &level.blocks {
                let skip = skips.pop().expect("one skip per down block");
                h = g.concat(&[h, skip], 1)?;
                h = block.forward(g, ps, h, cond)?;
            }
            h = level.resample.forward(g, ps, h)?;
        }
        h = g.concat(&[h, init], 1)?;
        h = self.final_block.forward(g, ps, h, cond)?;
        self.final_conv.forward(g, ps, h)
    }
}

impl<T: Scalar> Denoiser<T> for UNet<T> {
    fn predict(&self, x: &Tensor<T>, t: &[usize], conds: &[Option<&[T]>]) -> Result<Tensor<T>> {
        let n = conds.len();
        let mut styles = Vec::with_capacity(n * self.style_dim);
        for c in conds {
            match c {
                Some(s) if s.len() == self.style_dim => styles.extend_from_slice(s),
                Some(s) => {
                    return Err(Error::shape(
                        "unet",
                        format!("style of length {}, expected {}", s.len(), self.style_dim),
                    ))
                }
                None => styles.extend(std::iter::repeat_n(T::zero(), self.style_dim)),
            }
        }
        let styles = Tensor::new(&[n, self.style_dim], styles)?;
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, xv, t, &styles)?;
        Ok(g.value(out).clone())
    }
}
