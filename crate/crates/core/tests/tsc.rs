use proptest::prelude::*;
use stylepad::combinator::class_allocation;
use stylepad::dataio::{
    class_counts, identity_groups, leave_one_out_split, stack_values, synth_benchmark_generate, DatasetSplit, Instance,
    NormStats, SynthBenchSpec, ORIGINAL, SYNTHETIC,
};
use stylepad::diffusion::SyntheticSource;
use stylepad::numerics::layers::Mode;
use stylepad::numerics::{Graph, RngStream, Tensor};
use stylepad::tsc::*;
use stylepad::Result;

fn split(per_cell: usize, seed: u64) -> DatasetSplit<f64> {
    let ds = synth_benchmark_generate::<f64>(&SynthBenchSpec {
        samples_per_class_per_domain: per_cell,
        ..Default::default()
    })
    .unwrap();
    let mut s = leave_one_out_split(&ds, &identity_groups(&ds), "D3", seed).unwrap();
    NormStats::normalize(&mut s).unwrap();
    s
}

fn config(epochs: usize) -> TscConfig {
    TscConfig {
        epochs,
        batch: 16,
        ..Default::default()
    }
}

/// Class-matched "synthetic" instances: originals reversed in time with
/// added noise, labeled with origin 0.
struct Reversed<'a> {
    originals: &'a [Instance<f64>],
    kappa: f64,
    calls: usize,
    rng: RngStream,
}

impl SyntheticSource<f64> for Reversed<'_> {
    fn generate(&mut self, counts: &[usize]) -> Result<Vec<Instance<f64>>> {
        self.calls += 1;
        let mut out = Vec::new();
        for (c, &n) in class_allocation(self.kappa, counts).iter().enumerate() {
            let pool: Vec<&Instance<f64>> = self.originals.iter().filter(|i| i.class == c).collect();
            for j in 0..n {
                let src = pool[self.rng.below(pool.len())];
                let (k, l) = (src.values.dim(0), src.values.dim(1));
                let noise: Vec<f64> = self.rng.normals(k * l);
                let values = Tensor::from_fn(&[k, l], |i| {
                    let (ch, t) = (i / l, i % l);
                    src.values.data()[ch * l + (l - 1 - t)] + 0.3 * noise[i]
                });
                out.push(Instance {
                    id: format!("fake-{}-{c}-{j}", self.calls),
                    values,
                    class: c,
                    domain: "synthetic".into(),
                    origin: SYNTHETIC,
                });
            }
        }
        Ok(out)
    }

    fn calls(&self) -> usize {
        self.calls
    }
}

fn reversed(originals: &[Instance<f64>], kappa: f64) -> Reversed<'_> {
    Reversed {
        originals,
        kappa,
        calls: 0,
        rng: RngStream::new("reversed", 0),
    }
}

fn batch_tensors(batch: &[Instance<f64>]) -> (Tensor<f64>, Vec<usize>, Vec<u8>) {
    let refs: Vec<&Instance<f64>> = batch.iter().collect();
    (
        stack_values(&refs).unwrap(),
        batch.iter().map(|i| i.class).collect(),
        batch.iter().map(|i| i.origin).collect(),
    )
}

fn snapshot(model: &Classifier<f64>) -> Vec<(String, Tensor<f64>)> {
    model.params.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect()
}

fn changed(before: &[(String, Tensor<f64>)], model: &Classifier<f64>) -> Vec<String> {
    before
        .iter()
        .zip(model.params.iter())
        .filter(|((_, a), (_, p))| *a != p.value)
        .map(|((n, _), _)| n.clone())
        .collect()
}

#[test]
fn label_examples() {
    assert_eq!(encode_labels(0, 0, 4).unwrap(), 0);
    assert_eq!(encode_labels(3, 1, 19).unwrap(), 22);
    assert_eq!(decode_labels(22, 19).unwrap(), (3, 1));
    assert!(encode_labels(4, 0, 4).is_err());
    assert!(encode_labels(0, 2, 4).is_err());
    assert!(decode_labels(8, 4).is_err());
}

proptest! {
    #[test]
    fn label_encoding_is_a_bijection(c in 1usize..=64) {
        let mut seen = vec![false; 2 * c];
        for y_c in 0..c {
            for y_o in 0..=1u8 {
                let y = encode_labels(y_c, y_o, c).unwrap();
                prop_assert!(!seen[y]);
                seen[y] = true;
                prop_assert_eq!(decode_labels(y, c).unwrap(), (y_c, y_o));
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }
}

#[test]
fn head_widths_and_config_variants() {
    let mut rng = RngStream::new("m", 0);
    for (blocks, z) in [(2, 64), (3, 128)] {
        let cfg = TscConfig { blocks, ..Default::default() };
        let model = Classifier::<f64>::new(&cfg, 3, 32, 5, &mut rng).unwrap();
        let mut g = Graph::inference();
        let x = g.constant(Tensor::zeros(&[2, 3, 32]));
        for (head, width) in [(Head::ClassOrigin, 10), (Head::Origin, 2), (Head::Class, 5)] {
            let out = model.logits(&mut g, x, head, Mode::Eval).unwrap();
            assert_eq!(g.shape(out), &[2, width]);
        }
        let f = model.features(&mut g, x, Mode::Eval).unwrap();
        let p = model.project(&mut g, f, Head::Class).unwrap();
        assert_eq!(g.shape(p), &[2, z]);
    }
    assert!(Classifier::<f64>::new(&TscConfig { blocks: 4, ..Default::default() }, 3, 32, 5, &mut rng).is_err());
    let model = Classifier::<f64>::new(&TscConfig::default(), 3, 32, 5, &mut rng).unwrap();
    assert!(model.class_logits(&Tensor::zeros(&[2, 3, 16])).is_err());
}

#[test]
fn untrained_losses_near_uniform_baseline() {
    let s = split(8, 0);
    let batch: Vec<Instance<f64>> = s.train.iter().take(32).cloned().collect();
    let (x, classes, origins) = batch_tensors(&batch);
    let c = s.n_classes as f64;
    let cases: [(&str, f64); 3] = [("co", (2.0 * c).ln()), ("o", 2f64.ln()), ("c", c.ln())];
    for (name, want) in cases {
        let mut model = Classifier::<f64>::new(&config(1), 3, 32, s.n_classes, &mut RngStream::new("init", 1)).unwrap();
        let mut opts = Optimizers::new(&model, 1e-3);
        let loss = match name {
            "co" => step_class_origin(&mut model, &mut opts, &x, &classes, &origins).unwrap(),
            "o" => step_origin_specific(&mut model, &mut opts, &x, &origins).unwrap(),
            _ => step_class_specific(&mut model, &mut opts, &x, &classes).unwrap(),
        };
        assert!((loss - want).abs() < 0.35, "{name}: {loss} vs {want}");
    }
}

#[test]
fn each_step_updates_only_its_parameters() {
    let s = split(8, 0);
    let mut source = reversed(&s.train, 1.0);
    let mut batch: Vec<Instance<f64>> = s.train.iter().take(16).cloned().collect();
    let counts = class_counts(&batch, s.n_classes);
    batch.extend(source.generate(&counts).unwrap());
    let (x, classes, origins) = batch_tensors(&batch);
    let mut model = Classifier::<f64>::new(&config(1), 3, 32, s.n_classes, &mut RngStream::new("init", 2)).unwrap();
    let mut opts = Optimizers::new(&model, 1e-3);
    for head in Head::ALL {
        let before = snapshot(&model);
        match head {
            Head::ClassOrigin => step_class_origin(&mut model, &mut opts, &x, &classes, &origins),
            Head::Origin => step_origin_specific(&mut model, &mut opts, &x, &origins),
            Head::Class => step_class_specific(&mut model, &mut opts, &x, &classes),
        }
        .unwrap();
        let moved = changed(&before, &model);
        assert!(moved.iter().any(|n| n.starts_with("tsc.f.")));
        assert!(moved.iter().any(|n| n.starts_with(head.prefix())));
        for n in &moved {
            assert!(
                n.starts_with("tsc.f.") || n.starts_with(head.prefix()),
                "{head:?} step changed {n}"
            );
        }
        for (_, p) in model.params.iter() {
            let own = p.name.starts_with("tsc.f.") || p.name.starts_with(head.prefix());
            if let (false, Some(g)) = (own, &p.grad) {
                assert!(g.data().iter().all(|&v| v == 0.0), "{} has gradient in {head:?} step", p.name);
            }
        }
    }
}

#[test]
fn class_origin_loss_decreases() {
    let s = split(8, 0);
    let mut source = reversed(&s.train, 1.0);
    let mut batch: Vec<Instance<f64>> = s.train.iter().take(24).cloned().collect();
    let counts = class_counts(&batch, s.n_classes);
    batch.extend(source.generate(&counts).unwrap());
    let (x, classes, origins) = batch_tensors(&batch);
    let mut model = Classifier::<f64>::new(&config(1), 3, 32, s.n_classes, &mut RngStream::new("init", 3)).unwrap();
    let mut opts = Optimizers::new(&model, 1e-3);
    let losses: Vec<f64> = (0..50)
        .map(|_| step_class_origin(&mut model, &mut opts, &x, &classes, &origins).unwrap())
        .collect();
    assert!(losses[49] < losses[0] * 0.5, "{} -> {}", losses[0], losses[49]);
}

fn origin_accuracy(model: &Classifier<f64>, instances: &[Instance<f64>]) -> f64 {
    let (x, _, origins) = batch_tensors(instances);
    let mut g = Graph::inference();
    let xv = g.constant(x);
    let out = model.logits(&mut g, xv, Head::Origin, Mode::Eval).unwrap();
    let hits = g
        .value(out)
        .data()
        .chunks(2)
        .zip(&origins)
        .filter(|(r, &o)| (r[1] > r[0]) == (o == ORIGINAL))
        .count();
    hits as f64 / instances.len() as f64
}

#[test]
fn diversity_training_contracts() {
    let s = split(10, 0);
    let mut source = reversed(&s.train, 1.0);
    let cfg = config(4);
    let (model, report) = train_diversity(&s.train, s.n_classes, Some(&mut source), 1.0, &cfg, 0).unwrap();
    let epoch0_batches = s.train.len().div_ceil(cfg.batch);
    assert_eq!(source.calls, epoch0_batches);
    assert_eq!(report.generator_calls, epoch0_batches);
    assert_eq!(report.n_original, s.train.len());
    assert_eq!(report.n_synthetic, s.train.len());
    assert_eq!(report.epoch_losses.len(), 4);

    // Origin head separates held-out originals from held-out fakes.
    let mut held = s.val.clone();
    let mut fakes = reversed(&s.val, 1.0);
    held.extend(fakes.generate(&class_counts(&s.val, s.n_classes)).unwrap());
    assert!(origin_accuracy(&model, &held) > 0.5);

    let again = train_diversity(&s.train, s.n_classes, Some(&mut reversed(&s.train, 1.0)), 1.0, &cfg, 0)
        .unwrap()
        .0;
    assert_eq!(snapshot(&again), snapshot(&model));

    assert!(train_diversity(&s.train, s.n_classes, None, 1.0, &cfg, 0).is_err());
}

#[test]
fn zero_kappa_runs_all_steps_on_originals() {
    let s = split(8, 0);
    let (_, report) = train_diversity(&s.train, s.n_classes, None, 0.0, &config(8), 0).unwrap();
    assert_eq!(report.generator_calls, 0);
    assert_eq!(report.n_synthetic, 0);
    let first = report.epoch_losses[0];
    let last = *report.epoch_losses.last().unwrap();
    assert!(first.iter().all(|v| v.is_finite()));
    // Constant origin labels make the binary task trivial.
    assert!(last[1] < 0.05, "origin loss {}", last[1]);
    assert!(last[1] < first[1]);
}

#[test]
fn class_accuracy_improves_with_epochs() {
    let s = split(10, 1);
    let mut src1 = reversed(&s.train, 1.0);
    let (short, _) = train_diversity(&s.train, s.n_classes, Some(&mut src1), 1.0, &config(1), 1).unwrap();
    let mut src2 = reversed(&s.train, 1.0);
    let (long, _) = train_diversity(&s.train, s.n_classes, Some(&mut src2), 1.0, &config(10), 1).unwrap();
    let a = accuracy(&short, &s.val).unwrap().accuracy;
    let b = accuracy(&long, &s.val).unwrap().accuracy;
    assert!(b > a, "1 epoch {a}, 10 epochs {b}");
    let test = accuracy(&long, &s.test).unwrap();
    assert!(test.accuracy > 1.0 / s.n_classes as f64);
    assert_eq!(test.per_class_accuracy.len(), s.n_classes);
}

#[test]
fn inference_contracts() {
    let s = split(8, 0);
    let (mut model, _) = erm_train(&s.train, s.n_classes, &config(3), 0).unwrap();
    let p1 = model.infer(&s.test).unwrap();
    assert_eq!(p1, model.infer(&s.test).unwrap());
    let (x, _, _) = batch_tensors(&s.test);
    let logits = model.class_logits(&x).unwrap();
    for row in logits.data().chunks(s.n_classes) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let total: f64 = row.iter().map(|v| (v - m).exp() / z).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    // Scrambling the class-origin and origin heads leaves inference unchanged.
    let ids: Vec<_> = model
        .params
        .iter()
        .filter(|(_, p)| p.name.starts_with("tsc.co.") || p.name.starts_with("tsc.o."))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        model.params.value_mut(id).fill(f64::NAN);
    }
    assert_eq!(model.class_logits(&x).unwrap(), logits);
}

#[test]
fn erm_contracts() {
    let s = split(8, 0);
    let (a, ra) = erm_train(&s.train, s.n_classes, &config(15), 7).unwrap();
    let (b, _) = erm_train(&s.train, s.n_classes, &config(15), 7).unwrap();
    assert_eq!(snapshot(&a), snapshot(&b));
    let first = ra.epoch_losses[0][2];
    assert!((first - (s.n_classes as f64).ln()).abs() < 0.5, "{first}");
    assert!(ra.epoch_losses[14][2] < first);
    assert!(accuracy(&a, &s.test).unwrap().accuracy > 0.5);
}

#[test]
fn checkpoint_round_trip() {
    let s = split(8, 0);
    let (model, _) = erm_train(&s.train, s.n_classes, &config(2), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tsc.ckpt");
    model.save(&path).unwrap();
    let back = Classifier::<f64>::load(&path).unwrap();
    assert_eq!(back.infer(&s.test).unwrap(), model.infer(&s.test).unwrap());
    assert_eq!(snapshot(&back), snapshot(&model));
}
