use log::info;

use crate::combinator::synthetic_total;
use crate::dataio::{class_counts, stack_values, Instance};
use crate::diffusion::SyntheticSource;
use crate::error::{Error, Result};
use crate::numerics::layers::Mode;
use crate::numerics::{Adam, AdamConfig, Graph, RngStream, Tensor};
use crate::scalar::Scalar;
use crate::tsc::encode_labels;
use crate::tsc::model::{Classifier, Head, TscConfig, FEATURE_PREFIX};

/// One Adam per head group plus one for the shared feature extractor.
pub struct Optimizers<T> {
    pub features: Adam<T>,
    pub heads: [Adam<T>; 3],
}

impl<T: Scalar> Optimizers<T> {
    pub fn new(model: &Classifier<T>, lr: f64) -> Self {
        let ps = &model.params;
        let cfg = AdamConfig::with_lr(lr);
        Self {
            features: Adam::new(ps, ps.trainable_with_prefix(FEATURE_PREFIX), cfg),
            heads: Head::ALL.map(|h| Adam::new(ps, ps.trainable_with_prefix(h.prefix()), cfg)),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.features.config.lr = lr;
        for h in &mut self.heads {
            h.config.lr = lr;
        }
    }
}

/// Cross-entropy on `head`, then an update of `G_f` and that head only.
fn head_step<T: Scalar>(
    model: &mut Classifier<T>,
    opts: &mut Optimizers<T>,
    head: Head,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<f64> {
    model.params.zero_grads();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let logits = model.logits(&mut g, xv, head, Mode::Train)?;
    let loss = g.softmax_cross_entropy(logits, labels)?;
    let value = g.value(loss).item().f64();
    if !value.is_finite() {
        return Err(Error::Diverged(format!("classifier loss {value} on {head:?} head")));
    }
    g.backward(loss, &mut model.params)?;
    let updates = g.take_buffer_updates();
    opts.features.step(&mut model.params)?;
    opts.heads[head as usize].step(&mut model.params)?;
    model.params.apply_buffer_updates(updates);
    Ok(value)
}

/// Step (i): `2C`-way joint class-origin labels.
pub fn step_class_origin<T: Scalar>(
    model: &mut Classifier<T>,
    opts: &mut Optimizers<T>,
    x: &Tensor<T>,
    classes: &[usize],
    origins: &[u8],
) -> Result<f64> {
    if classes.len() != origins.len() {
        return Err(Error::shape("step_class_origin", format!("{} classes vs {} origins", classes.len(), origins.len())));
    }
    let labels = classes
        .iter()
        .zip(origins)
        .map(|(&c, &o)| encode_labels(c, o, model.n_classes))
        .collect::<Result<Vec<_>>>()?;
    head_step(model, opts, Head::ClassOrigin, x, &labels)
}

/// Step (ii): synthetic (0) versus original (1).
pub fn step_origin_specific<T: Scalar>(
    model: &mut Classifier<T>,
    opts: &mut Optimizers<T>,
    x: &Tensor<T>,
    origins: &[u8],
) -> Result<f64> {
    if let Some(o) = origins.iter().find(|&&o| o > 1) {
        return Err(Error::invalid(format!("origin label {o} is not 0 or 1")));
    }
    let labels: Vec<usize> = origins.iter().map(|&o| o as usize).collect();
    head_step(model, opts, Head::Origin, x, &labels)
}

/// Step (iii): `C`-way class labels.
pub fn step_class_specific<T: Scalar>(
    model: &mut Classifier<T>,
    opts: &mut Optimizers<T>,
    x: &Tensor<T>,
    classes: &[usize],
) -> Result<f64> {
    if let Some(c) = classes.iter().find(|&&c| c >= model.n_classes) {
        return Err(Error::invalid(format!("class label {c} out of range for C={}", model.n_classes)));
    }
    head_step(model, opts, Head::Class, x, classes)
}

#[derive(Debug, Clone, Default)]
pub struct TscReport {
    /// Mean `[class-origin, origin, class]` losses per epoch. ERM runs fill
    /// only the last slot and leave the others NaN.
    pub epoch_losses: Vec<[f64; 3]>,
    pub generator_calls: usize,
    pub n_original: usize,
    pub n_synthetic: usize,
}

impl TscReport {
    pub fn n_train(&self) -> usize {
        self.n_original + self.n_synthetic
    }
}

fn first_shape<T: Scalar>(train: &[Instance<T>]) -> Result<(usize, usize)> {
    let first = train
        .first()
        .ok_or_else(|| Error::invalid("classifier training needs a nonempty train split"))?;
    Ok((first.values.dim(0), first.values.dim(1)))
}

fn run_three_steps<T: Scalar>(
    model: &mut Classifier<T>,
    opts: &mut Optimizers<T>,
    batch: &[&Instance<T>],
) -> Result<[f64; 3]> {
    let x = stack_values(batch)?;
    let classes: Vec<usize> = batch.iter().map(|i| i.class).collect();
    let origins: Vec<u8> = batch.iter().map(|i| i.origin).collect();
    Ok([
        step_class_origin(model, opts, &x, &classes, &origins)?,
        step_origin_specific(model, opts, &x, &origins)?,
        step_class_specific(model, opts, &x, &classes)?,
    ])
}

/// Diversity learning over originals and synthetic expansions.
///
/// In epoch 0 each batch of `B` originals asks `source` for `round(κ·B)`
/// class-matched synthetic instances; those are kept, so later epochs
/// iterate the expanded set without generating again. Every batch runs the
/// class-origin, origin and class steps in that order. With `κ = 0` no
/// source is needed and all origin labels are 1.
pub fn train_diversity<T: Scalar>(
    train: &[Instance<T>],
    n_classes: usize,
    mut source: Option<&mut dyn SyntheticSource<T>>,
    kappa: f64,
    config: &TscConfig,
    seed: u64,
) -> Result<(Classifier<T>, TscReport)> {
    let (k, l) = first_shape(train)?;
    if kappa < 0.0 || !kappa.is_finite() {
        return Err(Error::Config(format!("kappa must be finite and non-negative, got {kappa}")));
    }
    if kappa > 0.0 && source.is_none() {
        return Err(Error::invalid(format!("kappa={kappa} needs a synthetic source")));
    }
    let root = RngStream::new("tsc", seed);
    let mut model = Classifier::new(config, k, l, n_classes, &mut root.derive("init"))?;
    let mut opts = Optimizers::new(&model, config.lr);
    let mut report = TscReport {
        n_original: train.len(),
        ..Default::default()
    };
    let mut synthetic: Vec<Instance<T>> = Vec::new();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        opts.set_lr(lr);
        let mut rng = root.derive(&format!("epoch{epoch}"));
        let mut sums = [0.0; 3];
        let mut count = 0usize;
        let log_batch = |losses: [f64; 3], step: &mut usize| {
            info!(
                target: "train",
                "stage=tsc step={step} epoch={epoch} loss={:.6} loss_cls_ori={:.6} loss_ori={:.6} lr={lr}",
                losses[2], losses[0], losses[1]
            );
            *step += 1;
        };
        if epoch == 0 {
            let mut order: Vec<usize> = (0..train.len()).collect();
            rng.shuffle(&mut order);
            for chunk in order.chunks(config.batch) {
                let mut batch: Vec<&Instance<T>> = chunk.iter().map(|&i| &train[i]).collect();
                let start = synthetic.len();
                if kappa > 0.0 {
                    let counts = class_counts_of(&batch, n_classes);
                    let generated = source.as_mut().expect("checked above").generate(&counts)?;
                    report.generator_calls += 1;
                    synthetic.extend(generated);
                }
                batch.extend(synthetic[start..].iter());
                rng.shuffle(&mut batch);
                if batch.len() < 2 {
                    continue;
                }
                let losses = run_three_steps(&mut model, &mut opts, &batch)?;
                for i in 0..3 {
                    sums[i] += losses[i];
                }
                count += 1;
                log_batch(losses, &mut step);
            }
        } else {
            let pool: Vec<&Instance<T>> = train.iter().chain(&synthetic).collect();
            let mut order: Vec<usize> = (0..pool.len()).collect();
            rng.shuffle(&mut order);
            let width = config.batch + if kappa > 0.0 { synthetic_total(kappa, config.batch) } else { 0 };
            for chunk in order.chunks(width) {
                if chunk.len() < 2 {
                    continue;
                }
                let batch: Vec<&Instance<T>> = chunk.iter().map(|&i| pool[i]).collect();
                let losses = run_three_steps(&mut model, &mut opts, &batch)?;
                for i in 0..3 {
                    sums[i] += losses[i];
                }
                count += 1;
                log_batch(losses, &mut step);
            }
        }
        report.epoch_losses.push(sums.map(|s| s / count.max(1) as f64));
    }
    report.n_synthetic = synthetic.len();
    Ok((model, report))
}

fn class_counts_of<T>(batch: &[&Instance<T>], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for inst in batch {
        if inst.class < n_classes {
            counts[inst.class] += 1;
        }
    }
    counts
}

/// Class-specific step only, on originals only.
pub fn erm_train<T: Scalar>(
    train: &[Instance<T>],
    n_classes: usize,
    config: &TscConfig,
    seed: u64,
) -> Result<(Classifier<T>, TscReport)> {
    let (k, l) = first_shape(train)?;
    let root = RngStream::new("tsc", seed);
    let mut model = Classifier::new(config, k, l, n_classes, &mut root.derive("init"))?;
    let mut opts = Optimizers::new(&model, config.lr);
    let mut report = TscReport {
        n_original: train.len(),
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        opts.set_lr(lr);
        let mut rng = root.derive(&format!("epoch{epoch}"));
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(config.batch) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&Instance<T>> = chunk.iter().map(|&i| &train[i]).collect();
            let x = stack_values(&batch)?;
            let classes: Vec<usize> = batch.iter().map(|i| i.class).collect();
            let loss = step_class_specific(&mut model, &mut opts, &x, &classes)?;
            info!(target: "train", "stage=erm step={step} epoch={epoch} loss={loss:.6} lr={lr}");
            sum += loss;
            count += 1;
            step += 1;
        }
        report.epoch_losses.push([f64::NAN, f64::NAN, sum / count.max(1) as f64]);
    }
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// NaN for classes absent from the evaluated set.
    pub per_class_accuracy: Vec<f64>,
    pub n: usize,
}

pub fn accuracy<T: Scalar>(model: &Classifier<T>, instances: &[Instance<T>]) -> Result<Evaluation> {
    let pred = model.infer(instances)?;
    let totals = class_counts(instances, model.n_classes);
    let mut hits = vec![0usize; model.n_classes];
    for (p, inst) in pred.iter().zip(instances) {
        if *p == inst.class {
            hits[inst.class] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    Ok(Evaluation {
        accuracy: if instances.is_empty() { f64::NAN } else { correct as f64 / instances.len() as f64 },
        per_class_accuracy: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &n)| if n == 0 { f64::NAN } else { h as f64 / n as f64 })
            .collect(),
        n: instances.len(),
    })
}
