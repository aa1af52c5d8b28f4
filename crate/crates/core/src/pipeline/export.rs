use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::dataio::{stack_values, Instance};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pipeline::config::Precision;
use crate::pipeline::run::Run;
use crate::scalar::Scalar;
use crate::tsc::{Classifier, Head};

const EMBEDDING_HEADER: &str = "#stylepad-embeddings v1";

/// Latent space to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Class-specific projection of the classifier (width Z).
    Class,
    /// Origin-specific projection of the classifier (width Z).
    Domain,
    /// Style encoder output (width H).
    Style,
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class" => Ok(Space::Class),
            "domain" => Ok(Space::Domain),
            "style" => Ok(Space::Style),
            other => Err(Error::Config(format!("unknown embedding space `{other}` (expected class, domain or style)"))),
        }
    }
}

/// CSV with one row `instance_id,origin_flag,class,domain,v_1..v_D` per
/// instance; `vectors` is `[N, D]`.
pub fn embeddings_csv<T: Scalar>(instances: &[Instance<T>], vectors: &Tensor<T>) -> Result<String> {
    if vectors.rank() != 2 || vectors.dim(0) != instances.len() {
        return Err(Error::shape(
            "embeddings_csv",
            format!("{:?} vectors for {} instances", vectors.shape(), instances.len()),
        ));
    }
    let d = vectors.dim(1);
    let mut out = format!("{EMBEDDING_HEADER}\ninstance_id,origin_flag,class,domain");
    for j in 1..=d {
        let _ = write!(out, ",v_{j}");
    }
    out.push('\n');
    for (inst, row) in instances.iter().zip(vectors.data().chunks(d.max(1))) {
        let _ = write!(out, "{},{},{},{}", inst.id, inst.origin, inst.class, inst.domain);
        for v in row {
            let _ = write!(out, ",{}", v.f64());
        }
        out.push('\n');
    }
    Ok(out)
}

/// Embeds `instances` in `space` using the run's trained models.
pub fn embed_instances<T: Scalar>(run: &Run, instances: &[Instance<T>], space: Space) -> Result<Tensor<T>> {
    match space {
        Space::Class | Space::Domain => {
            let model = Classifier::<T>::load(&run.layout.tsc_ckpt())?;
            let head = if space == Space::Class { Head::Class } else { Head::Origin };
            model.embed(instances, head)
        }
        Space::Style => {
            let encoder = run.load_style_encoder::<T>()?;
            let mut parts = Vec::new();
            for chunk in instances.chunks(256) {
                let refs: Vec<&Instance<T>> = chunk.iter().collect();
                parts.push(encoder.encode(&stack_values(&refs)?)?);
            }
            if parts.is_empty() {
                return Ok(Tensor::zeros(&[0, encoder.config.h]));
            }
            Tensor::stack_rows(&parts.iter().collect::<Vec<_>>())
        }
    }
}

fn export_typed<T: Scalar>(run: &Run, space: Space, out: &Path) -> Result<usize> {
    let (_, split) = run.load_split::<T>()?;
    let mut instances = split.train;
    if run.layout.synthetic().0.is_file() {
        instances.extend(run.load_synthetic::<T>()?);
    }
    instances.extend(split.target_test);
    let vectors = embed_instances(run, &instances, space)?;
    let text = embeddings_csv(&instances, &vectors)?;
    fs::write(out, text).map_err(|e| Error::io(out, e))?;
    Ok(instances.len())
}

/// Writes embeddings of the run's source train, synthetic and target
/// instances to `out`. Returns the row count.
pub fn export_embeddings(run: &Run, space: Space, out: &Path) -> Result<usize> {
    match run.config.precision {
        Precision::F32 => export_typed::<f32>(run, space, out),
        Precision::F64 => export_typed::<f64>(run, space, out),
    }
}
