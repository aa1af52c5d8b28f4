use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Interleaved sinusoidal embedding: `emb[2i] = sin(t·ωᵢ)`,
/// `emb[2i+1] = cos(t·ωᵢ)` with `ωᵢ = 10000^(-2i/dim)`.
pub fn sinusoidal_timestep_embedding<T: Scalar>(t: usize, dim: usize) -> Result<Tensor<T>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "timestep embedding dim must be even and positive, got {dim}"
        )));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let omega = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let arg = t as f64 * omega;
        out.push(T::c(arg.sin()));
        out.push(T::c(arg.cos()));
    }
    Tensor::new(&[dim], out)
}

/// Embeddings for a batch of timesteps, `[B, dim]`.
pub fn timestep_embedding_batch<T: Scalar>(ts: &[usize], dim: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        data.extend_from_slice(sinusoidal_timestep_embedding::<T>(t, dim)?.data());
    }
    Tensor::new(&[ts.len(), dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_timestep_alternates() {
        let e = sinusoidal_timestep_embedding::<f64>(0, 8).unwrap();
        assert_eq!(e.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn reference_values_for_t5_dim4() {
        let e = sinusoidal_timestep_embedding::<f64>(5, 4).unwrap();
        let w1 = 10000f64.powf(-0.5);
        let expected = [5f64.sin(), 5f64.cos(), (5.0 * w1).sin(), (5.0 * w1).cos()];
        for (a, b) in e.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn values_bounded() {
        for t in [0, 1, 17, 99, 100] {
            let e = sinusoidal_timestep_embedding::<f64>(t, 32).unwrap();
            assert!(e.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn odd_dim_rejected() {
        assert!(sinusoidal_timestep_embedding::<f64>(3, 5).is_err());
    }
}
