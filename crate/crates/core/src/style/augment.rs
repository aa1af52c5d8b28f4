//! Weak and strong views for contrastive pretraining.

use crate::dataio::Instance;
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::scalar::Scalar;

/// Channelwise scaling by `N(1, scale_sd)` followed by additive jitter
/// `N(0, sigma)`.
pub fn augment_weak<T: Scalar>(x: &Instance<T>, sigma: f64, scale_sd: f64, rng: &mut RngStream) -> Instance<T> {
    let mut out = x.clone();
    let l = x.values.dim(1);
    for row in out.values.data_mut().chunks_mut(l) {
        let s = 1.0 + scale_sd * rng.normal::<f64>();
        for v in row {
            *v = T::c(v.f64() * s + sigma * rng.normal::<f64>());
        }
    }
    out
}

/// Splits the time axis into between 2 and `max_segments` random-length
/// segments, reorders them with a non-identity permutation (shared across
/// channels), then adds jitter `N(0, sigma)`. `max_segments == 1` leaves
/// the order unchanged.
pub fn augment_strong<T: Scalar>(
    x: &Instance<T>,
    max_segments: usize,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<Instance<T>> {
    let (k, l) = (x.values.dim(0), x.values.dim(1));
    if max_segments == 0 || max_segments > l {
        return Err(Error::invalid(format!(
            "segment count {max_segments} must be in [1, L={l}]"
        )));
    }
    let order = segment_order(l, max_segments, rng);
    let mut out = x.clone();
    let src = x.values.data();
    let dst = out.values.data_mut();
    for c in 0..k {
        for (t, &s) in order.iter().enumerate() {
            dst[c * l + t] = T::c(src[c * l + s].f64() + sigma * rng.normal::<f64>());
        }
    }
    Ok(out)
}

/// Source time index for every output position.
fn segment_order(l: usize, max_segments: usize, rng: &mut RngStream) -> Vec<usize> {
    if max_segments < 2 || l < 2 {
        return (0..l).collect();
    }
    let n_seg = 2 + rng.below(max_segments - 1);
    // Distinct cut points in 1..l.
    let mut cuts: Vec<usize> = (1..l).collect();
    rng.shuffle(&mut cuts);
    let mut cuts = cuts[..n_seg - 1].to_vec();
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(l);
    let segments: Vec<(usize, usize)> = bounds.windows(2).map(|w| (w[0], w[1])).collect();
    let mut perm: Vec<usize> = (0..segments.len()).collect();
    while perm.iter().enumerate().all(|(i, &p)| i == p) {
        rng.shuffle(&mut perm);
    }
    perm.iter()
        .flat_map(|&p| segments[p].0..segments[p].1)
        .collect()
}
