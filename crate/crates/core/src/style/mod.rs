//! Contrastive style conditioner and the class-partitioned style store.

mod augment;
mod encoder;
mod loss;
mod store;
mod train;

pub use augment::{augment_strong, augment_weak};
pub use encoder::StyleEncoder;
pub use loss::{contextual_contrast_loss, temporal_contrast_loss};
pub use store::{StyleStore, StyleVector};
pub use train::{contrastive_losses, extract_styles, pretrain_style_encoder, PretrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleConfig {
    /// Style vector length.
    pub h: usize,
    /// Output channels of the three conv blocks.
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Transformer layers before pooling (0 = attention pooling only).
    pub layers: usize,
    pub heads: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub temperature: f64,
    /// Fraction of tokens summarized into the context that predicts the rest.
    pub prefix_fraction: f64,
    pub weak_sigma: f64,
    pub weak_scale_sd: f64,
    pub strong_sigma: f64,
    pub strong_segments: usize,
    pub temporal_weight: f64,
    pub contextual_weight: f64,
    /// L2-normalize extracted style vectors.
    pub normalize: bool,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            h: 64,
            channels: vec![16, 32, 32],
            kernel: 9,
            layers: 1,
            heads: 4,
            epochs: 40,
            batch: 32,
            lr: 3e-4,
            temperature: 0.2,
            prefix_fraction: 0.5,
            weak_sigma: 0.05,
            weak_scale_sd: 0.1,
            strong_sigma: 0.1,
            strong_segments: 8,
            temporal_weight: 1.0,
            contextual_weight: 0.7,
            normalize: false,
        }
    }
}

impl StyleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels.len() != 3 {
            return bad(format!("style encoder needs 3 conv blocks, got {}", self.channels.len()));
        }
        if self.h < 4 || self.heads == 0 || !self.h.is_multiple_of(self.heads) {
            return bad(format!("H={} must be >= 4 and divisible by heads={}", self.h, self.heads));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("style kernel {} must be odd", self.kernel));
        }
        if self.batch < 2 {
            return bad("style batch must be at least 2".into());
        }
        if !(self.lr > 0.0 && self.temperature > 0.0) {
            return bad("style lr and temperature must be positive".into());
        }
        if !(self.prefix_fraction > 0.0 && self.prefix_fraction < 1.0) {
            return bad(format!("prefix fraction {} outside (0, 1)", self.prefix_fraction));
        }
        Ok(())
    }
}
