//! Temporal and contextual contrastive losses.

use crate::error::{Error, Result};
use crate::numerics::layers::Linear;
use crate::numerics::{Graph, ParameterSet, Tensor, Var};
use crate::scalar::Scalar;

/// Cross-view predictive loss.
///
/// For each future step `k`, `heads[k]` maps a context `[B, H]` to a
/// prediction `[B, d]` of the other view's encoder feature at that step.
/// Scores `pred_i · z_j / sqrt(d)` against every sample `j` of the batch
/// form a `B`-way classification whose target is `i`. The result averages
/// both directions (strong → weak, weak → strong) and all steps.
pub fn temporal_contrast_loss<T: Scalar>(
    g: &mut Graph<T>,
    ps: &ParameterSet<T>,
    heads: &[Linear],
    ctx_strong: Var,
    ctx_weak: Var,
    futures_weak: &[Var],
    futures_strong: &[Var],
) -> Result<Var> {
    let b = g.shape(ctx_strong)[0];
    if b < 2 {
        return Err(Error::invalid(
            "temporal contrast needs a batch of at least 2 (negatives come from the batch)",
        ));
    }
    if futures_weak.len() != futures_strong.len() || futures_weak.len() > heads.len() || futures_weak.is_empty() {
        return Err(Error::invalid(format!(
            "temporal contrast: {} / {} future steps for {} heads",
            futures_weak.len(),
            futures_strong.len(),
            heads.len()
        )));
    }
    let labels: Vec<usize> = (0..b).collect();
    let mut total: Option<Var> = None;
    let mut terms = 0;
    for (step, head) in heads.iter().enumerate().take(futures_weak.len()) {
        for (ctx, fut) in [(ctx_strong, futures_weak[step]), (ctx_weak, futures_strong[step])] {
            let pred = head.forward(g, ps, ctx)?;
            let d = g.shape(fut)[1];
            let scores = g.matmul(pred, fut, true)?;
            let scores = g.scale(scores, T::c(1.0 / (d as f64).sqrt()));
            let l = g.softmax_cross_entropy(scores, &labels)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
            terms += 1;
        }
    }
    let total = total.expect("at least one term");
    Ok(g.scale(total, T::c(1.0 / terms as f64)))
}

/// NT-Xent over the `2B` contexts: cosine similarities divided by
/// `temperature`, self-similarity excluded, the other view of the same
/// instance as the positive.
pub fn contextual_contrast_loss<T: Scalar>(
    g: &mut Graph<T>,
    ctx_strong: Var,
    ctx_weak: Var,
    temperature: f64,
) -> Result<Var> {
    let b = g.shape(ctx_strong)[0];
    if b < 2 {
        return Err(Error::invalid("contextual contrast needs a batch of at least 2"));
    }
    if temperature <= 0.0 {
        return Err(Error::invalid(format!("temperature {temperature} must be positive")));
    }
    let all = g.concat(&[ctx_strong, ctx_weak], 0)?;
    let z = g.normalize_rows(all)?;
    let sim = g.matmul(z, z, true)?;
    let sim = g.scale(sim, T::c(1.0 / temperature));
    let n = 2 * b;
    // Large negative on the diagonal removes self-pairs from the softmax.
    let mask = Tensor::from_fn(&[n, n], |i| if i / n == i % n { T::c(-1e9) } else { T::zero() });
    let mask = g.constant(mask);
    let logits = g.add(sim, mask)?;
    let labels: Vec<usize> = (0..n).map(|i| (i + b) % n).collect();
    g.softmax_cross_entropy(logits, &labels)
}
