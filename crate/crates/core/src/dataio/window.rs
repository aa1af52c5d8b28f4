use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Start offsets of full windows over a series of length `len`.
///
/// The stride is `round(window_len * (1 - overlap))`; a trailing remainder
/// shorter than one window is dropped.
pub fn segment_windows(len: usize, window_len: usize, overlap: f64) -> Result<Vec<usize>> {
    if window_len == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!("overlap {overlap} outside [0, 1)")));
    }
    let stride = ((window_len as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    if len < window_len {
        return Ok(Vec::new());
    }
    Ok((0..=len - window_len).step_by(stride).collect())
}

/// Cuts a channel-major series (`channels[k][t]`) into `[K, window_len]`
/// windows.
pub fn segment_series<T: Scalar>(
    channels: &[Vec<T>],
    window_len: usize,
    overlap: f64,
) -> Result<Vec<Tensor<T>>> {
    let len = channels.first().map_or(0, Vec::len);
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::shape("segment_series", "channels differ in length"));
    }
    let starts = segment_windows(len, window_len, overlap)?;
    starts
        .into_iter()
        .map(|s| {
            let mut data = Vec::with_capacity(channels.len() * window_len);
            for c in channels {
                data.extend_from_slice(&c[s..s + window_len]);
            }
            Tensor::new(&[channels.len(), window_len], data)
        })
        .collect()
}
