use log::info;

use crate::dataio::{stack_values, Instance};
use crate::error::{Error, Result};
use crate::numerics::layers::Mode;
use crate::numerics::{Adam, AdamConfig, Graph, RngStream, Var};
use crate::scalar::Scalar;
use crate::style::{
    augment_strong, augment_weak, contextual_contrast_loss, temporal_contrast_loss, StyleConfig,
    StyleEncoder, StyleStore, StyleVector,
};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainReport {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Augments `batch` into weak and strong views and returns the
/// (temporal, contextual) losses, both unweighted.
pub fn contrastive_losses<T: Scalar>(
    enc: &StyleEncoder<T>,
    g: &mut Graph<T>,
    batch: &[&Instance<T>],
    rng: &mut RngStream,
) -> Result<(Var, Var)> {
    let cfg = &enc.config;
    let weak: Vec<Instance<T>> = batch
        .iter()
        .map(|x| augment_weak(x, cfg.weak_sigma, cfg.weak_scale_sd, rng))
        .collect();
    let strong: Vec<Instance<T>> = batch
        .iter()
        .map(|x| augment_strong(x, cfg.strong_segments, cfg.strong_sigma, rng))
        .collect::<Result<_>>()?;
    let views: Vec<&Instance<T>> = weak.iter().chain(strong.iter()).collect();
    let x = g.constant(stack_values(&views)?);
    let b = batch.len();
    let feats = enc.features(g, x, Mode::Train)?;
    let (n, np) = (enc.n_tokens(), enc.prefix_len());

    let prefix = g.slice(feats, 2, 0, np)?;
    let ctx_prefix = enc.summarize(g, prefix)?;
    let ctx_w = g.slice(ctx_prefix, 0, 0, b)?;
    let ctx_s = g.slice(ctx_prefix, 0, b, 2 * b)?;
    let d = g.shape(feats)[1];
    let (mut fut_w, mut fut_s) = (Vec::new(), Vec::new());
    for t in np..n {
        let z = g.slice(feats, 2, t, t + 1)?;
        let z = g.reshape(z, &[2 * b, d])?;
        fut_w.push(g.slice(z, 0, 0, b)?);
        fut_s.push(g.slice(z, 0, b, 2 * b)?);
    }
    let temporal = temporal_contrast_loss(g, &enc.params, &enc.predictors, ctx_s, ctx_w, &fut_w, &fut_s)?;

    let ctx_full = enc.summarize(g, feats)?;
    let proj = enc.project(g, ctx_full)?;
    let pw = g.slice(proj, 0, 0, b)?;
    let psg = g.slice(proj, 0, b, 2 * b)?;
    let contextual = contextual_contrast_loss(g, psg, pw, cfg.temperature)?;
    Ok((temporal, contextual))
}

fn batch_loss<T: Scalar>(
    enc: &StyleEncoder<T>,
    g: &mut Graph<T>,
    batch: &[&Instance<T>],
    rng: &mut RngStream,
) -> Result<Var> {
    let cfg = &enc.config;
    let (temporal, contextual) = contrastive_losses(enc, g, batch, rng)?;
    let t = g.scale(temporal, T::c(cfg.temporal_weight));
    let c = g.scale(contextual, T::c(cfg.contextual_weight));
    g.add(t, c)
}

/// Minimizes the weighted temporal + contextual loss over `train` for
/// `config.epochs` epochs. Deterministic given `seed`.
pub fn pretrain_style_encoder<T: Scalar>(
    train: &[Instance<T>],
    config: &StyleConfig,
    seed: u64,
) -> Result<(StyleEncoder<T>, PretrainReport)> {
    let first = train
        .first()
        .ok_or_else(|| Error::invalid("style pretraining needs a nonempty train split"))?;
    let (k, l) = (first.values.dim(0), first.values.dim(1));
    let root = RngStream::new("style", seed);
    let mut enc = StyleEncoder::new(config, k, l, &mut root.derive("init"))?;
    let mut opt = Adam::for_all(&enc.params, AdamConfig::with_lr(config.lr));
    let mut report = PretrainReport::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut rng = root.derive(&format!("epoch{epoch}"));
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(config.batch) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&Instance<T>> = chunk.iter().map(|&i| &train[i]).collect();
            enc.params.zero_grads();
            let mut g = Graph::new();
            let loss = batch_loss(&enc, &mut g, &batch, &mut rng)?;
            let value = g.value(loss).item().f64();
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "style pretraining loss {value} at epoch {epoch}, step {step}"
                )));
            }
            g.backward(loss, &mut enc.params)?;
            let updates = g.take_buffer_updates();
            opt.step(&mut enc.params)?;
            enc.params.apply_buffer_updates(updates);
            info!(target: "train", "stage=style step={step} epoch={epoch} loss={value:.6} lr={}", config.lr);
            report.step_losses.push(value);
            sum += value;
            count += 1;
            step += 1;
        }
        report.epoch_losses.push(if count > 0 { sum / count as f64 } else { f64::NAN });
    }
    Ok((enc, report))
}

/// One style vector per instance, bucketed by the instance's class.
pub fn extract_styles<T: Scalar>(
    enc: &StyleEncoder<T>,
    instances: &[Instance<T>],
    n_classes: usize,
) -> Result<StyleStore<T>> {
    let mut store = StyleStore::new(n_classes, enc.config.h);
    for chunk in instances.chunks(64) {
        for inst in chunk {
            if inst.class >= n_classes {
                return Err(Error::invalid(format!(
                    "instance {}: class {} out of range [0, {n_classes})",
                    inst.id, inst.class
                )));
            }
        }
        let refs: Vec<&Instance<T>> = chunk.iter().collect();
        let styles = enc.encode(&stack_values(&refs)?)?;
        let h = enc.config.h;
        for (inst, row) in chunk.iter().zip(styles.data().chunks(h)) {
            let mut values = row.to_vec();
            if enc.config.normalize {
                let norm = values.iter().map(|&v| v * v).sum::<T>().sqrt();
                if norm > T::zero() {
                    values.iter_mut().for_each(|v| *v /= norm);
                }
            }
            store.insert(StyleVector {
                values,
                class: inst.class,
                instance_id: inst.id.clone(),
                domain: inst.domain.clone(),
            })?;
        }
    }
    Ok(store)
}
