//! Convolutional feature encoder plus a small attention summarizer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::checkpoint;
use crate::numerics::layers::{BatchNorm1d, Conv1d, LayerNorm, Linear, Mode};
use crate::numerics::{Graph, ParamId, ParameterSet, RngStream, Tensor, Var};
use crate::scalar::Scalar;
use crate::style::StyleConfig;

/// Pre-norm transformer layer over `[B, n, H]` tokens.
#[derive(Debug, Clone)]
struct TransformerLayer {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    heads: usize,
}

impl TransformerLayer {
    fn new<T: Scalar>(ps: &mut ParameterSet<T>, name: &str, h: usize, heads: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), h)?,
            q: Linear::new(ps, &format!("{name}.q"), h, h, rng)?,
            k: Linear::new(ps, &format!("{name}.k"), h, h, rng)?,
            v: Linear::new(ps, &format!("{name}.v"), h, h, rng)?,
            o: Linear::new(ps, &format!("{name}.o"), h, h, rng)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), h)?,
            ff1: Linear::new(ps, &format!("{name}.ff1"), h, 2 * h, rng)?,
            ff2: Linear::new(ps, &format!("{name}.ff2"), 2 * h, h, rng)?,
            heads,
        })
    }

    fn split_heads<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, n, h) = (s[0], s[1], s[2]);
        let dh = h / self.heads;
        let x = g.reshape(x, &[b, n, self.heads, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[b * self.heads, n, dh])
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, n, h) = (s[0], s[1], s[2]);
        let dh = h / self.heads;
        let y = self.ln1.forward(g, ps, x)?;
        let q = self.q.forward_tokens(g, ps, y)?;
        let k = self.k.forward_tokens(g, ps, y)?;
        let v = self.v.forward_tokens(g, ps, y)?;
        let (q, k, v) = (self.split_heads(g, q)?, self.split_heads(g, k)?, self.split_heads(g, v)?);
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, T::c(1.0 / (dh as f64).sqrt()));
        let attn = g.softmax_last(scores)?;
        let ctx = g.bmm(attn, v, false)?;
        let ctx = g.reshape(ctx, &[b, self.heads, n, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, n, h])?;
        let out = self.o.forward_tokens(g, ps, ctx)?;
        let x = g.add(x, out)?;
        let y = self.ln2.forward(g, ps, x)?;
        let y = self.ff1.forward_tokens(g, ps, y)?;
        let y = g.relu(y);
        let y = self.ff2.forward_tokens(g, ps, y)?;
        g.add(x, y)
    }
}

/// Predictor weights start at this fraction of the Kaiming bound so that
/// initial scores are near-uniform across the batch.
const PREDICTOR_INIT_SCALE: f64 = 0.25;

/// Style conditioner `f_style`.
///
/// Three conv blocks (conv, batch norm, ReLU, max-pool by 2) turn a
/// `[K, L]` window into `n = L / 8` feature tokens of width `d`. Tokens are
/// projected to `H`, passed through optional transformer layers and pooled
/// by a learned query into the `H`-dimensional context.
#[derive(Debug, Clone)]
pub struct StyleEncoder<T> {
    pub config: StyleConfig,
    pub k: usize,
    pub l: usize,
    pub params: ParameterSet<T>,
    blocks: Vec<(Conv1d, BatchNorm1d)>,
    token_proj: Linear,
    layers: Vec<TransformerLayer>,
    pool_query: ParamId,
    pub(crate) predictors: Vec<Linear>,
    proj1: Linear,
    proj2: Linear,
}

const MODEL_KIND: &str = "style_encoder";

#[derive(Serialize, Deserialize)]
struct EncoderMeta {
    config: StyleConfig,
    k: usize,
    l: usize,
}

impl<T: Scalar> StyleEncoder<T> {
    pub fn new(config: &StyleConfig, k: usize, l: usize, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        if l < 16 {
            return Err(Error::invalid(format!(
                "style encoder needs L >= 16 (three halvings leave at least 2 tokens), got {l}"
            )));
        }
        let mut ps = ParameterSet::new();
        let mut blocks = Vec::new();
        let mut c_in = k;
        for (i, &c_out) in config.channels.iter().enumerate() {
            let conv = Conv1d::same(&mut ps, &format!("enc.block{i}.conv"), c_in, c_out, config.kernel, rng)?;
            let bn = BatchNorm1d::new(&mut ps, &format!("enc.block{i}.bn"), c_out)?;
            blocks.push((conv, bn));
            c_in = c_out;
        }
        let d = c_in;
        let h = config.h;
        let token_proj = Linear::new(&mut ps, "sum.token_proj", d, h, rng)?;
        let layers = (0..config.layers)
            .map(|i| TransformerLayer::new(&mut ps, &format!("sum.layer{i}"), h, config.heads, rng))
            .collect::<Result<Vec<_>>>()?;
        let bound = 1.0 / (h as f64).sqrt();
        let pool_query = ps.add(
            "sum.pool_query",
            Tensor::from_fn(&[h], |_| T::c(rng.uniform(-bound, bound))),
        )?;
        let n = l / 8;
        let steps = n - Self::prefix_len_for(config, n)?;
        let predictors = (0..steps)
            .map(|s| Linear::new(&mut ps, &format!("pre.predict{s}"), h, d, rng))
            .collect::<Result<Vec<_>>>()?;
        for p in &predictors {
            p.shrink_init(&mut ps, PREDICTOR_INIT_SCALE);
        }
        let proj1 = Linear::new(&mut ps, "pre.proj1", h, h / 2, rng)?;
        let proj2 = Linear::new(&mut ps, "pre.proj2", h / 2, h / 4, rng)?;
        Ok(Self {
            config: config.clone(),
            k,
            l,
            params: ps,
            blocks,
            token_proj,
            layers,
            pool_query,
            predictors,
            proj1,
            proj2,
        })
    }

    fn prefix_len_for(config: &StyleConfig, n: usize) -> Result<usize> {
        let p = (config.prefix_fraction * n as f64).round() as usize;
        if p == 0 || p >= n {
            return Err(Error::invalid(format!(
                "prefix of {p} tokens out of {n} leaves nothing to predict or no context"
            )));
        }
        Ok(p)
    }

    pub fn n_tokens(&self) -> usize {
        self.l / 8
    }

    pub fn prefix_len(&self) -> usize {
        Self::prefix_len_for(&self.config, self.n_tokens()).expect("validated at construction")
    }

    /// Encoder features `[B, d, n]` for `x: [B, K, L]`.
    pub fn features(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 3 || s[1] != self.k || s[2] != self.l {
            return Err(Error::shape(
                "style encoder",
                format!("input {s:?}, expected [B, {}, {}]", self.k, self.l),
            ));
        }
        let ps = &self.params;
        let mut h = x;
        for (conv, bn) in &self.blocks {
            h = conv.forward(g, ps, h)?;
            h = bn.forward(g, ps, h, mode)?;
            h = g.relu(h);
            h = g.max_pool1d(h, 2, 2)?;
        }
        Ok(h)
    }

    /// Context `[B, H]` summarizing feature tokens `[B, d, t]`.
    pub fn summarize(&self, g: &mut Graph<T>, feats: Var) -> Result<Var> {
        let ps = &self.params;
        let tokens = g.permute(feats, &[0, 2, 1])?;
        let mut z = self.token_proj.forward_tokens(g, ps, tokens)?;
        for layer in &self.layers {
            z = layer.forward(g, ps, z)?;
        }
        let s = g.shape(z).to_vec();
        let (b, n, h) = (s[0], s[1], s[2]);
        let q = g.param(ps, self.pool_query);
        let q = g.reshape(q, &[1, h])?;
        let flat = g.reshape(z, &[b * n, h])?;
        let scores = g.matmul(flat, q, true)?;
        let scores = g.scale(scores, T::c(1.0 / (h as f64).sqrt()));
        let scores = g.reshape(scores, &[b, 1, n])?;
        let w = g.softmax_last(scores)?;
        let ctx = g.bmm(w, z, false)?;
        g.reshape(ctx, &[b, h])
    }

    /// Projection head used by the contextual loss during pretraining.
    pub(crate) fn project(&self, g: &mut Graph<T>, ctx: Var) -> Result<Var> {
        let y = self.proj1.forward(g, &self.params, ctx)?;
        let y = g.relu(y);
        self.proj2.forward(g, &self.params, y)
    }

    /// Style vectors `[B, H]` for a batch (evaluation mode).
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let f = self.features(&mut g, xv, Mode::Eval)?;
        let ctx = self.summarize(&mut g, f)?;
        Ok(g.value(ctx).clone())
    }
}

impl<T: Scalar> StyleEncoder<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = EncoderMeta {
            config: self.config.clone(),
            k: self.k,
            l: self.l,
        };
        checkpoint::save_model(path, MODEL_KIND, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: EncoderMeta = checkpoint::load_model_meta(path, MODEL_KIND)?;
        let mut enc = Self::new(&meta.config, meta.k, meta.l, &mut RngStream::new("style/load", 0))?;
        checkpoint::load_model_params(path, &mut enc.params)?;
        Ok(enc)
    }
}
