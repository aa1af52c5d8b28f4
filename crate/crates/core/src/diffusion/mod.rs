//! Conditional denoising diffusion over `[K, L]` series with classifier-free
//! and style-fused guidance.

pub mod generate;
pub mod guidance;
pub mod schedule;
pub mod train;
pub mod unet;

pub use generate::{generate_dataset, DiffusionGenerator, PregeneratedPool, SyntheticSource, SYNTHETIC_DOMAIN};
pub use guidance::{cfg_epsilon, fused_epsilon, fused_epsilon_batch, sample_chains, GuidanceConfig, SamplerConfig};
pub use schedule::NoiseSchedule;
pub use train::{pair_with_styles, train_diffusion, training_step, DiffusionConfig, DiffusionModel, DiffusionReport};
pub use unet::{Denoiser, UNet, UNetConfig};
