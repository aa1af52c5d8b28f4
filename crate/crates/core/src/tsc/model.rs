use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{stack_values, Instance};
use crate::error::{Error, Result};
use crate::numerics::checkpoint;
use crate::numerics::layers::{BatchNorm1d, Conv1d, Linear, Mode};
use crate::numerics::{Graph, ParameterSet, RngStream, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TscConfig {
    /// Conv blocks in the feature extractor: 2 (kernel 9) or 3 (kernel 6).
    pub blocks: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Multiply the learning rate by `lr_gamma` every `lr_step` epochs.
    pub lr_step: usize,
    pub lr_gamma: f64,
}

impl Default for TscConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            epochs: 30,
            batch: 32,
            lr: 1e-3,
            lr_step: 10,
            lr_gamma: 0.5,
        }
    }
}

impl TscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks != 2 && self.blocks != 3 {
            return Err(Error::Config(format!("tsc blocks must be 2 or 3, got {}", self.blocks)));
        }
        if self.batch < 2 {
            return Err(Error::Config("tsc batch must be at least 2".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_gamma > 0.0) || self.lr_step == 0 {
            return Err(Error::Config("tsc lr, lr_gamma and lr_step must be positive".into()));
        }
        Ok(())
    }

    pub fn kernel(&self) -> usize {
        if self.blocks == 2 {
            9
        } else {
            6
        }
    }

    pub fn channels(&self) -> Vec<usize> {
        if self.blocks == 2 {
            vec![16, 32]
        } else {
            vec![16, 32, 64]
        }
    }

    /// Projection width `Z`.
    pub fn z(&self) -> usize {
        if self.blocks == 2 {
            64
        } else {
            128
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_gamma.powi((epoch / self.lr_step) as i32)
    }
}

/// Projection and classifier pair used by one training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// `2C` joint class-origin labels.
    ClassOrigin,
    /// Binary origin labels.
    Origin,
    /// `C` class labels; the only head used at inference.
    Class,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::ClassOrigin, Head::Origin, Head::Class];

    pub fn prefix(self) -> &'static str {
        match self {
            Head::ClassOrigin => "tsc.co.",
            Head::Origin => "tsc.o.",
            Head::Class => "tsc.c.",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Scale applied to the initial classifier weights so untrained logits are
/// close to uniform.
const HEAD_INIT_SCALE: f64 = 0.1;

/// Prefix of the shared feature extractor's parameters.
pub const FEATURE_PREFIX: &str = "tsc.f.";

#[derive(Debug, Clone)]
struct Block {
    conv: Conv1d,
    bn: BatchNorm1d,
}

/// `G_f` (conv → ReLU → maxpool → batchnorm blocks) shared by three
/// projection/classifier heads.
#[derive(Debug, Clone)]
pub struct Classifier<T> {
    pub config: TscConfig,
    pub k: usize,
    pub l: usize,
    pub n_classes: usize,
    pub params: ParameterSet<T>,
    blocks: Vec<Block>,
    feature_dim: usize,
    projections: Vec<Linear>,
    heads: Vec<Linear>,
}

const MODEL_KIND: &str = "classifier";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierMeta {
    config: TscConfig,
    k: usize,
    l: usize,
    n_classes: usize,
}

impl<T: Scalar> Classifier<T> {
    pub fn new(config: &TscConfig, k: usize, l: usize, n_classes: usize, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        if n_classes < 2 {
            return Err(Error::Config(format!("classifier needs at least 2 classes, got {n_classes}")));
        }
        let mut ps = ParameterSet::new();
        let kernel = config.kernel();
        let mut c_in = k;
        let mut len = l;
        let mut blocks = Vec::new();
        for (i, &c_out) in config.channels().iter().enumerate() {
            let name = format!("{FEATURE_PREFIX}block{i}");
            let conv = Conv1d::same(&mut ps, &format!("{name}.conv"), c_in, c_out, kernel, rng)?;
            let bn = BatchNorm1d::new(&mut ps, &format!("{name}.bn"), c_out)?;
            len = (len + 2 * (kernel / 2) - kernel).div_ceil(2);
            if len == 0 {
                return Err(Error::Config(format!("series length {l} too short for {} blocks", config.blocks)));
            }
            blocks.push(Block { conv, bn });
            c_in = c_out;
        }
        let feature_dim = c_in * len;
        let z = config.z();
        let mut projections = Vec::new();
        let mut heads = Vec::new();
        for (head, width) in Head::ALL.iter().zip([2 * n_classes, 2, n_classes]) {
            let p = head.prefix();
            projections.push(Linear::new(&mut ps, &format!("{p}proj"), feature_dim, z, rng)?);
            let out = Linear::new(&mut ps, &format!("{p}out"), z, width, rng)?;
            out.shrink_init(&mut ps, HEAD_INIT_SCALE);
            heads.push(out);
        }
        Ok(Self {
            config: config.clone(),
            k,
            l,
            n_classes,
            params: ps,
            blocks,
            feature_dim,
            projections,
            heads,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Flattened `G_f` output, `[N, feature_dim]`.
    pub fn features(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[1] != self.k || s[2] != self.l {
            return Err(Error::shape(
                "classifier",
                format!("input {s:?}, expected [N, {}, {}]", self.k, self.l),
            ));
        }
        let ps = &self.params;
        let mut h = x;
        for b in &self.blocks {
            h = b.conv.forward(g, ps, h)?;
            h = g.relu(h);
            h = g.max_pool1d(h, 2, 2)?;
            h = b.bn.forward(g, ps, h, mode)?;
        }
        g.reshape(h, &[s[0], self.feature_dim])
    }

    /// `G_proj` output for `head`, `[N, Z]`.
    pub fn project(&self, g: &mut Graph<T>, features: Var, head: Head) -> Result<Var> {
        let p = self.projections[head.index()].forward(g, &self.params, features)?;
        Ok(g.relu(p))
    }

    pub fn logits(&self, g: &mut Graph<T>, x: Var, head: Head, mode: Mode) -> Result<Var> {
        let f = self.features(g, x, mode)?;
        let z = self.project(g, f, head)?;
        self.heads[head.index()].forward(g, &self.params, z)
    }

    /// Class logits `[N, C]` through `G_f`, `G_proj^c`, `G_y^c` in eval mode.
    pub fn class_logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let out = self.logits(&mut g, xv, Head::Class, Mode::Eval)?;
        Ok(g.value(out).clone())
    }

    /// Predicted classes by argmax of the class logits.
    pub fn infer(&self, instances: &[Instance<T>]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(instances.len());
        for chunk in instances.chunks(256) {
            let refs: Vec<&Instance<T>> = chunk.iter().collect();
            let logits = self.class_logits(&stack_values(&refs)?)?;
            for row in logits.data().chunks(self.n_classes) {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }

    /// Eval-mode projection vectors `[N, Z]` for `head`.
    pub fn embed(&self, instances: &[Instance<T>], head: Head) -> Result<Tensor<T>> {
        let mut parts = Vec::new();
        for chunk in instances.chunks(256) {
            let refs: Vec<&Instance<T>> = chunk.iter().collect();
            let mut g = Graph::inference();
            let x = g.constant(stack_values(&refs)?);
            let f = self.features(&mut g, x, Mode::Eval)?;
            let z = self.project(&mut g, f, head)?;
            parts.push(g.value(z).clone());
        }
        if parts.is_empty() {
            return Ok(Tensor::zeros(&[0, self.config.z()]));
        }
        Tensor::stack_rows(&parts.iter().collect::<Vec<_>>())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ClassifierMeta {
            config: self.config.clone(),
            k: self.k,
            l: self.l,
            n_classes: self.n_classes,
        };
        checkpoint::save_model(path, MODEL_KIND, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: ClassifierMeta = checkpoint::load_model_meta(path, MODEL_KIND)?;
        let mut model = Self::new(
            &meta.config,
            meta.k,
            meta.l,
            meta.n_classes,
            &mut RngStream::new("tsc/load", 0),
        )?;
        checkpoint::load_model_params(path, &mut model.params)?;
        Ok(model)
    }
}
