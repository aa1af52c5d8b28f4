use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataio::{DatasetSplit, Instance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MIN_STD: f64 = 1e-8;

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fits channel means and (population) standard deviations on
    /// `instances`. Zero-variance channels get std `1e-8`.
    pub fn fit<T: Scalar>(instances: &[Instance<T>]) -> Result<Self> {
        let first = instances
            .first()
            .ok_or_else(|| Error::invalid("cannot fit normalization on an empty set"))?;
        let (k, l) = (first.values.dim(0), first.values.dim(1));
        let n = (instances.len() * l) as f64;
        let mut mean = vec![0.0; k];
        for inst in instances {
            for (c, row) in inst.values.data().chunks(l).enumerate() {
                mean[c] += row.iter().map(|v| v.f64()).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; k];
        for inst in instances {
            for (c, row) in inst.values.data().chunks(l).enumerate() {
                var[c] += row.iter().map(|v| (v.f64() - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let std = var
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let s = (v / n).sqrt();
                if s < MIN_STD {
                    warn!("channel {c} has zero variance; clamping std to {MIN_STD}");
                    MIN_STD
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    fn map<T: Scalar>(&self, inst: &mut Instance<T>, f: impl Fn(f64, f64, f64) -> f64) {
        let l = inst.values.dim(1);
        for (c, row) in inst.values.data_mut().chunks_mut(l).enumerate() {
            for v in row {
                *v = T::c(f(v.f64(), self.mean[c], self.std[c]));
            }
        }
    }

    pub fn apply<T: Scalar>(&self, inst: &mut Instance<T>) {
        self.map(inst, |v, m, s| (v - m) / s);
    }

    pub fn invert<T: Scalar>(&self, inst: &mut Instance<T>) {
        self.map(inst, |v, m, s| v * s + m);
    }

    /// Fits on the training part of `split` and applies to every part.
    pub fn normalize<T: Scalar>(split: &mut DatasetSplit<T>) -> Result<Self> {
        let stats = Self::fit(&split.train)?;
        for inst in split.all_mut() {
            stats.apply(inst);
        }
        Ok(stats)
    }

    pub fn denormalize<T: Scalar>(&self, split: &mut DatasetSplit<T>) {
        for inst in split.all_mut() {
            self.invert(inst);
        }
    }
}
