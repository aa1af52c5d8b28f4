//! Windowed multichannel time series: ingestion, normalization,
//! leave-one-domain-out splits and a synthetic multi-domain benchmark.

mod io;
mod normalize;
mod split;
mod synth;
mod window;

pub use io::{load_dataset, read_instances, save_dataset, write_instances, Manifest, MANIFEST_VERSION};
pub use normalize::NormStats;
pub use split::{identity_groups, leave_one_out_split, subsample_fraction, DatasetSplit};
pub use synth::{synth_benchmark_generate, SynthBenchSpec, WAVEFORMS};
pub use window::{segment_series, segment_windows};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const ORIGINAL: u8 = 1;
pub const SYNTHETIC: u8 = 0;

/// One windowed sample: `values` is `[K, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance<T> {
    pub id: String,
    pub values: Tensor<T>,
    pub class: usize,
    pub domain: String,
    /// 1 for original data, 0 for generated samples.
    pub origin: u8,
}

/// A labelled collection of windows sharing `K`, `L` and the class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    pub n_classes: usize,
    pub k: usize,
    pub l: usize,
    pub window_overlap: f64,
    pub channels: Vec<String>,
    pub domains: Vec<String>,
    pub instances: Vec<Instance<T>>,
}

impl<T: Scalar> Dataset<T> {
    /// Checks every instance against the declared `C`, `K`, `L` and domains.
    pub fn validate(&self) -> Result<()> {
        for inst in &self.instances {
            validate_instance(inst, self.n_classes, self.k, self.l)?;
            if !self.domains.contains(&inst.domain) {
                return Err(Error::invalid(format!(
                    "instance {} has undeclared domain `{}`",
                    inst.id, inst.domain
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_instance<T: Scalar>(inst: &Instance<T>, c: usize, k: usize, l: usize) -> Result<()> {
    if inst.values.shape() != [k, l] {
        return Err(Error::shape(
            "instance",
            format!("{}: {:?}, expected [{k}, {l}]", inst.id, inst.values.shape()),
        ));
    }
    if inst.class >= c {
        return Err(Error::invalid(format!(
            "instance {}: class {} out of range [0, {c})",
            inst.id, inst.class
        )));
    }
    inst.values.validate_finite(&format!("instance {}", inst.id))
}

/// Stacks instance values into `[N, K, L]`.
pub fn stack_values<T: Scalar>(instances: &[&Instance<T>]) -> Result<Tensor<T>> {
    let first = instances
        .first()
        .ok_or_else(|| Error::invalid("stack_values: no instances"))?;
    let (k, l) = (first.values.dim(0), first.values.dim(1));
    let mut data = Vec::with_capacity(instances.len() * k * l);
    for inst in instances {
        if inst.values.shape() != [k, l] {
            return Err(Error::shape(
                "stack_values",
                format!("{}: {:?} vs [{k}, {l}]", inst.id, inst.values.shape()),
            ));
        }
        data.extend_from_slice(inst.values.data());
    }
    Tensor::new(&[instances.len(), k, l], data)
}

/// Per-class instance counts.
pub fn class_counts<T>(instances: &[Instance<T>], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for inst in instances {
        counts[inst.class] += 1;
    }
    counts
}
