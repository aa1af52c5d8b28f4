use std::collections::HashMap;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::dataio::Instance;
use crate::diffusion::guidance::{GuidanceConfig, SamplerConfig};
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::unet::{UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::numerics::checkpoint;
use crate::numerics::{Adam, AdamConfig, Graph, RngStream, Tensor};
use crate::scalar::Scalar;
use crate::style::StyleStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub t_max: usize,
    pub beta_1: f64,
    pub beta_t: f64,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub p_drop: f64,
    pub omega: f64,
    pub fuse_normalize: bool,
    pub clip: Option<f64>,
    pub unet: UNetConfig,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            t_max: 100,
            beta_1: 1e-3,
            beta_t: 0.2,
            lr: 2e-4,
            batch: 64,
            steps: 2000,
            p_drop: 0.5,
            omega: 1.2,
            fuse_normalize: false,
            clip: Some(6.0),
            unet: UNetConfig::default(),
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        self.guidance().validate()?;
        if self.batch == 0 {
            return Err(Error::Config("diffusion batch must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("diffusion lr must be positive, got {}", self.lr)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip must be positive, got {c}")));
            }
        }
        self.schedule().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_max, self.beta_1, self.beta_t)
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            omega: self.omega,
            p_drop: self.p_drop,
            fuse_normalize: self.fuse_normalize,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            omega: self.omega,
            fuse_normalize: self.fuse_normalize,
            clip: self.clip,
        }
    }
}

/// Trained denoiser together with the schedule it was trained under.
#[derive(Debug, Clone)]
pub struct DiffusionModel<T> {
    pub config: DiffusionConfig,
    pub unet: UNet<T>,
    pub schedule: NoiseSchedule,
}

const MODEL_KIND: &str = "diffusion";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    config: DiffusionConfig,
    k: usize,
    l: usize,
    style_dim: usize,
}

impl<T: Scalar> DiffusionModel<T> {
    pub fn new(config: &DiffusionConfig, k: usize, l: usize, style_dim: usize, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            unet: UNet::new(&config.unet, k, l, style_dim, rng)?,
            schedule: config.schedule()?,
        })
    }

    /// Parameters go to `path`; architecture and schedule to its JSON
    /// sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ModelMeta {
            config: self.config.clone(),
            k: self.unet.k,
            l: self.unet.l,
            style_dim: self.unet.style_dim,
        };
        checkpoint::save_model(path, MODEL_KIND, &self.unet.params, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: ModelMeta = checkpoint::load_model_meta(path, MODEL_KIND)?;
        let mut model = Self::new(
            &meta.config,
            meta.k,
            meta.l,
            meta.style_dim,
            &mut RngStream::new("diffusion/load", 0),
        )?;
        checkpoint::load_model_params(path, &mut model.unet.params)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DiffusionReport {
    pub step_losses: Vec<f64>,
}

/// Pairs each instance with the style extracted from itself.
pub fn pair_with_styles<'a, T: Scalar>(
    instances: &'a [Instance<T>],
    store: &'a StyleStore<T>,
) -> Result<Vec<(&'a Instance<T>, &'a [T])>> {
    let by_id: HashMap<&str, &[T]> = store
        .iter()
        .map(|v| (v.instance_id.as_str(), v.values.as_slice()))
        .collect();
    instances
        .iter()
        .map(|inst| {
            by_id
                .get(inst.id.as_str())
                .map(|&s| (inst, s))
                .ok_or_else(|| Error::invalid(format!("no style extracted for instance {}", inst.id)))
        })
        .collect()
}

/// One noise-prediction step: random `t` and `ε` per row, styles dropped to
/// `∅` with probability `p_drop`, mean squared error, one Adam update.
pub fn training_step<T: Scalar>(
    unet: &mut UNet<T>,
    opt: &mut Adam<T>,
    schedule: &NoiseSchedule,
    x0: &Tensor<T>,
    styles: &Tensor<T>,
    p_drop: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    let n = x0.dim(0);
    if styles.rank() != 2 || styles.dim(0) != n || styles.dim(1) != unet.style_dim {
        return Err(Error::shape(
            "training_step",
            format!(
                "styles {:?} for {n} inputs, style length must be {}",
                styles.shape(),
                unet.style_dim
            ),
        ));
    }
    let row = x0.numel() / n.max(1);
    let h = unet.style_dim;
    let mut ts = Vec::with_capacity(n);
    let mut xt = Vec::with_capacity(x0.numel());
    let mut eps_all = Vec::with_capacity(x0.numel());
    let mut s = styles.clone();
    for i in 0..n {
        let t = 1 + rng.below(schedule.t_max);
        let eps = rng.normals::<T>(row);
        let a = T::c(schedule.alpha_bar(t).sqrt());
        let b = T::c((1.0 - schedule.alpha_bar(t)).sqrt());
        for (&x, &e) in x0.data()[i * row..(i + 1) * row].iter().zip(&eps) {
            xt.push(a * x + b * e);
        }
        eps_all.extend(eps);
        ts.push(t);
        if rng.uniform(0.0, 1.0) < p_drop {
            s.data_mut()[i * h..(i + 1) * h].fill(T::zero());
        }
    }
    let xt = Tensor::new(x0.shape(), xt)?;
    let eps = Tensor::new(x0.shape(), eps_all)?;
    unet.params.zero_grads();
    let mut g = Graph::new();
    let xv = g.constant(xt);
    let pred = unet.forward(&mut g, xv, &ts, &s)?;
    let loss = g.mse(pred, &eps)?;
    let value = g.value(loss).item().f64();
    if !value.is_finite() {
        return Err(Error::Diverged(format!("diffusion loss {value}")));
    }
    g.backward(loss, &mut unet.params)?;
    opt.step(&mut unet.params)?;
    Ok(value)
}

/// Trains a fresh denoiser on `(instance, own style)` pairs for
/// `config.steps` Adam steps. Deterministic given `seed`.
pub fn train_diffusion<T: Scalar>(
    train: &[Instance<T>],
    store: &StyleStore<T>,
    config: &DiffusionConfig,
    seed: u64,
) -> Result<(DiffusionModel<T>, DiffusionReport)> {
    let pairs = pair_with_styles(train, store)?;
    let first = pairs
        .first()
        .ok_or_else(|| Error::invalid("diffusion training needs a nonempty train split"))?;
    let (k, l) = (first.0.values.dim(0), first.0.values.dim(1));
    let root = RngStream::new("diffusion", seed);
    let mut model = DiffusionModel::new(config, k, l, store.h, &mut root.derive("init"))?;
    let mut opt = Adam::for_all(&model.unet.params, AdamConfig::with_lr(config.lr));
    let mut rng = root.derive("steps");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let mut report = DiffusionReport::default();
    let h = store.h;
    for step in 0..config.steps {
        let mut x = Vec::with_capacity(config.batch * k * l);
        let mut s = Vec::with_capacity(config.batch * h);
        for _ in 0..config.batch.min(pairs.len()) {
            if cursor == order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let (inst, style) = pairs[order[cursor]];
            cursor += 1;
            x.extend_from_slice(inst.values.data());
            s.extend_from_slice(style);
        }
        let b = s.len() / h;
        let x = Tensor::new(&[b, k, l], x)?;
        let s = Tensor::new(&[b, h], s)?;
        let loss = training_step(&mut model.unet, &mut opt, &model.schedule, &x, &s, config.p_drop, &mut rng)
            .map_err(|e| match e {
                Error::Diverged(msg) => Error::Diverged(format!("{msg} at step {step}")),
                other => other,
            })?;
        if step % 50 == 0 || step + 1 == config.steps {
            info!(target: "train", "stage=diffusion step={step} loss={loss:.6} lr={}", config.lr);
        }
        report.step_losses.push(loss);
    }
    Ok((model, report))
}
