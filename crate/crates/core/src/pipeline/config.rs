use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::combinator::{FuseCountDistribution, GenerationBudget};
use crate::diffusion::{DiffusionConfig, UNetConfig};
use crate::error::{Error, Result};
use crate::style::StyleConfig;
use crate::tsc::TscConfig;

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "STYLEPAD_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Style pretraining, diffusion, fused generation and diversity learning.
    Di2sdiff,
    /// Class loss on originals only.
    Erm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Di2sdiff => "di2sdiff",
            Method::Erm => "erm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

// Desk-scale overrides of the library defaults: a smaller denoiser trained
// with a larger step size fits the synthetic benchmark on one CPU core in
// under a minute.
const DESK_STYLE_H: usize = 32;
const DESK_STYLE_EPOCHS: usize = 20;
const DESK_DIFFUSION_LR: f64 = 1e-3;
const DESK_DIFFUSION_BATCH: usize = 32;
const DESK_DIFFUSION_STEPS: usize = 3000;
const DESK_UNET_BASE: usize = 8;

/// Flat experiment description; every key is optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset manifest.
    pub dataset: PathBuf,
    pub target: String,
    pub fraction: f64,
    pub seed: u64,
    pub method: Method,
    pub precision: Precision,
    pub out_dir: PathBuf,

    pub style_h: usize,
    pub style_epochs: usize,
    pub style_lr: f64,
    pub style_batch: usize,

    pub diffusion_t: usize,
    pub diffusion_beta_1: f64,
    pub diffusion_beta_t: f64,
    pub diffusion_lr: f64,
    pub diffusion_batch: usize,
    pub diffusion_steps: usize,
    pub diffusion_p_drop: f64,
    pub diffusion_omega: f64,
    pub diffusion_fuse_normalize: bool,
    /// Sampling clamp; 0 disables it.
    pub diffusion_clip: f64,
    pub diffusion_base: usize,
    pub diffusion_attention: bool,

    pub kappa: f64,
    pub o: usize,
    /// Probabilities of fusing `1..=o` styles; empty means uniform.
    pub fuse_dist: Vec<f64>,

    pub tsc_epochs: usize,
    pub tsc_lr: f64,
    pub tsc_batch: usize,
    pub tsc_blocks: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let style = StyleConfig::default();
        let diffusion = DiffusionConfig::default();
        let tsc = TscConfig::default();
        Self {
            dataset: PathBuf::from("data/manifest.json"),
            target: "D0".into(),
            fraction: 1.0,
            seed: 0,
            method: Method::Di2sdiff,
            precision: Precision::F32,
            out_dir: PathBuf::from("runs/default"),
            style_h: DESK_STYLE_H,
            style_epochs: DESK_STYLE_EPOCHS,
            style_lr: style.lr,
            style_batch: style.batch,
            diffusion_t: diffusion.t_max,
            diffusion_beta_1: diffusion.beta_1,
            diffusion_beta_t: diffusion.beta_t,
            diffusion_lr: DESK_DIFFUSION_LR,
            diffusion_batch: DESK_DIFFUSION_BATCH,
            diffusion_steps: DESK_DIFFUSION_STEPS,
            diffusion_p_drop: diffusion.p_drop,
            diffusion_omega: diffusion.omega,
            diffusion_fuse_normalize: diffusion.fuse_normalize,
            diffusion_clip: diffusion.clip.unwrap_or(0.0),
            diffusion_base: DESK_UNET_BASE,
            diffusion_attention: diffusion.unet.attention,
            kappa: 1.0,
            o: 5,
            fuse_dist: Vec::new(),
            tsc_epochs: tsc.epochs,
            tsc_lr: tsc.lr,
            tsc_batch: tsc.batch,
            tsc_blocks: tsc.blocks,
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML file. Relative `dataset` and `out_dir` paths are
    /// resolved against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if config.dataset.is_relative() {
            config.dataset = base.join(&config.dataset);
        }
        if config.out_dir.is_relative() {
            config.out_dir = base.join(&config.out_dir);
        }
        Ok(config)
    }

    /// Applies `STYLEPAD_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset.is_file() {
            return Err(Error::Config(format!("dataset manifest {} does not exist", self.dataset.display())));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {} outside (0, 1]", self.fraction)));
        }
        if self.target.is_empty() {
            return Err(Error::Config("target must name a domain".into()));
        }
        self.style_config().validate()?;
        self.tsc_config().validate()?;
        if self.method == Method::Di2sdiff {
            self.diffusion_config().validate()?;
            self.budget()?;
        }
        Ok(())
    }

    pub fn style_config(&self) -> StyleConfig {
        StyleConfig {
            h: self.style_h,
            epochs: self.style_epochs,
            lr: self.style_lr,
            batch: self.style_batch,
            ..StyleConfig::default()
        }
    }

    pub fn diffusion_config(&self) -> DiffusionConfig {
        DiffusionConfig {
            t_max: self.diffusion_t,
            beta_1: self.diffusion_beta_1,
            beta_t: self.diffusion_beta_t,
            lr: self.diffusion_lr,
            batch: self.diffusion_batch,
            steps: self.diffusion_steps,
            p_drop: self.diffusion_p_drop,
            omega: self.diffusion_omega,
            fuse_normalize: self.diffusion_fuse_normalize,
            clip: (self.diffusion_clip > 0.0).then_some(self.diffusion_clip),
            unet: UNetConfig {
                base: self.diffusion_base,
                attention: self.diffusion_attention,
                ..UNetConfig::default()
            },
        }
    }

    pub fn budget(&self) -> Result<GenerationBudget> {
        let dist = if self.fuse_dist.is_empty() {
            FuseCountDistribution::uniform(self.o)
        } else {
            FuseCountDistribution::new(self.fuse_dist.clone())?
        };
        GenerationBudget::new(self.kappa, self.o, dist).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn tsc_config(&self) -> TscConfig {
        TscConfig {
            blocks: self.tsc_blocks,
            epochs: self.tsc_epochs,
            lr: self.tsc_lr,
            batch: self.tsc_batch,
            ..TscConfig::default()
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring `out_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        hash_json(&c)
    }

    /// Like [`hash`](Self::hash) but also ignoring the seed.
    pub fn sweep_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.hash()
    }
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn hash_json<V: Serialize>(value: &V) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
