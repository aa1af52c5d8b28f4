use stylepad::dataio::{
    identity_groups, leave_one_out_split, synth_benchmark_generate, Instance, NormStats, SynthBenchSpec,
    ORIGINAL,
};
use stylepad::numerics::layers::Linear;
use stylepad::numerics::{Graph, ParameterSet, RngStream, Tensor};
use stylepad::style::{
    augment_strong, augment_weak, contextual_contrast_loss, contrastive_losses, extract_styles,
    pretrain_style_encoder, temporal_contrast_loss, StyleConfig, StyleEncoder, StyleStore,
};

fn ramp(l: usize) -> Instance<f64> {
    Instance {
        id: "ramp".into(),
        values: Tensor::from_fn(&[2, l], |i| (i % l) as f64),
        class: 2,
        domain: "d".into(),
        origin: ORIGINAL,
    }
}

fn lag1_autocorr(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    let cov: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    cov / var
}

#[test]
fn weak_augmentation_identity_and_shape() {
    let x = ramp(16);
    let mut rng = RngStream::new("aug", 0);
    assert_eq!(augment_weak(&x, 0.0, 0.0, &mut rng), x);
    let y = augment_weak(&x, 0.05, 0.1, &mut rng);
    assert_eq!(y.values.shape(), x.values.shape());
    assert_eq!((y.class, &y.domain), (x.class, &x.domain));
}

#[test]
fn weak_jitter_matches_folded_normal_mean() {
    let sigma = 0.05;
    let x = Instance {
        id: "z".into(),
        values: Tensor::<f64>::zeros(&[1, 10_000]),
        class: 0,
        domain: "d".into(),
        origin: ORIGINAL,
    };
    let mut rng = RngStream::new("folded", 1);
    let y = augment_weak(&x, sigma, 0.0, &mut rng);
    let mean_abs = y.values.data().iter().map(|v| v.abs()).sum::<f64>() / 10_000.0;
    let expect = sigma * (2.0 / std::f64::consts::PI).sqrt();
    assert!((mean_abs - expect).abs() / expect < 0.05, "{mean_abs} vs {expect}");
}

#[test]
fn strong_augmentation_contracts() {
    let x = ramp(32);
    let mut rng = RngStream::new("strong", 0);
    assert_eq!(augment_strong(&x, 1, 0.0, &mut rng).unwrap(), x);
    let y = augment_strong(&x, 8, 0.0, &mut rng).unwrap();
    let mut a = x.values.data()[..32].to_vec();
    let mut b = y.values.data()[..32].to_vec();
    assert_ne!(a, b);
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    assert_eq!(a, b);
    // Both channels are permuted identically.
    assert_eq!(y.values.data()[..32], y.values.data()[32..]);
    assert!(augment_strong(&x, 33, 0.0, &mut rng).is_err());
    assert_eq!((y.class, &y.domain), (x.class, &x.domain));
}

#[test]
fn permutation_lowers_lag_one_autocorrelation_of_a_ramp() {
    let x = ramp(64);
    let before = lag1_autocorr(&x.values.data()[..64]);
    for seed in 0..20 {
        let mut rng = RngStream::new("ramp", seed);
        let y = augment_strong(&x, 8, 0.0, &mut rng).unwrap();
        let after = lag1_autocorr(&y.values.data()[..64]);
        assert!(after < before, "seed {seed}: {after} >= {before}");
    }
}

#[test]
fn temporal_loss_needs_negatives() {
    let mut ps = ParameterSet::<f64>::new();
    let mut rng = RngStream::new("t", 0);
    let head = Linear::new(&mut ps, "h", 4, 4, &mut rng).unwrap();
    let mut g = Graph::new();
    let c = g.constant(Tensor::ones(&[1, 4]));
    let f = g.constant(Tensor::ones(&[1, 4]));
    assert!(temporal_contrast_loss(&mut g, &ps, &[head], c, c, &[f], &[f]).is_err());
}

#[test]
fn temporal_loss_of_perfect_predictor_is_near_zero() {
    let b = 4;
    let mut ps = ParameterSet::<f64>::new();
    let mut rng = RngStream::new("t", 0);
    let head = Linear::new(&mut ps, "h", b, b, &mut rng).unwrap();
    *ps.value_mut(head.weight) = Tensor::from_fn(&[b, b], |i| if i / b == i % b { 1.0 } else { 0.0 });
    ps.value_mut(head.bias.unwrap()).fill(0.0);
    let basis = Tensor::from_fn(&[b, b], |i| if i / b == i % b { 10.0 } else { 0.0 });
    let mut g = Graph::new();
    let c = g.constant(basis.clone());
    let f = g.constant(basis);
    let l = temporal_contrast_loss(&mut g, &ps, &[head], c, c, &[f], &[f]).unwrap();
    assert!(g.value(l).item() < 1e-6, "{}", g.value(l).item());
}

fn small_bench() -> Vec<Instance<f64>> {
    let ds = synth_benchmark_generate::<f64>(&SynthBenchSpec {
        samples_per_class_per_domain: 12,
        ..SynthBenchSpec::default()
    })
    .unwrap();
    let mut split = leave_one_out_split(&ds, &identity_groups(&ds), "D0", 0).unwrap();
    NormStats::normalize(&mut split).unwrap();
    split.train
}

#[test]
fn temporal_loss_at_init_is_near_log_batch() {
    let train = small_bench();
    let cfg = StyleConfig::default();
    let mut rng = RngStream::new("init", 3);
    let enc = StyleEncoder::<f64>::new(&cfg, 3, 32, &mut rng).unwrap();
    let b = 16;
    let batch: Vec<&Instance<f64>> = train.iter().take(b).collect();
    let mut g = Graph::new();
    let (t, _) = contrastive_losses(&enc, &mut g, &batch, &mut rng).unwrap();
    let v = g.value(t).item();
    let ln_b = (b as f64).ln();
    println!("temporal loss at init {v:.4}, ln B {ln_b:.4}");
    assert!((v - ln_b).abs() / ln_b < 0.2, "{v} vs ln B = {ln_b}");
}

#[test]
fn contextual_loss_fixtures() {
    let b = 4;
    let basis = Tensor::<f64>::from_fn(&[b, b], |i| if i / b == i % b { 1.0 } else { 0.0 });
    let mut g = Graph::new();
    let s = g.constant(basis.clone());
    let w = g.constant(basis);
    let l = contextual_contrast_loss(&mut g, s, w, 0.2).unwrap();
    assert!(g.value(l).item() < 0.05, "{}", g.value(l).item());

    let same = Tensor::<f64>::ones(&[b, 3]);
    let mut g = Graph::new();
    let s = g.constant(same.clone());
    let w = g.constant(same);
    let l = contextual_contrast_loss(&mut g, s, w, 0.2).unwrap();
    assert!((g.value(l).item() - ((2 * b - 1) as f64).ln()).abs() < 1e-12);

    let mut rng = RngStream::new("swap", 0);
    let a = Tensor::<f64>::from_fn(&[5, 6], |_| rng.normal());
    let c = Tensor::<f64>::from_fn(&[5, 6], |_| rng.normal());
    let mut g = Graph::new();
    let (av, cv) = (g.constant(a), g.constant(c));
    let l1 = contextual_contrast_loss(&mut g, av, cv, 0.2).unwrap();
    let l2 = contextual_contrast_loss(&mut g, cv, av, 0.2).unwrap();
    assert!((g.value(l1).item() - g.value(l2).item()).abs() < 1e-12);
    assert!(g.value(l1).item() >= 0.0);

    let mut g = Graph::new();
    // Zero rows are floored, so every similarity is 0 and the loss is uniform.
    let z = g.constant(Tensor::<f64>::zeros(&[2, 3]));
    let l = contextual_contrast_loss(&mut g, z, z, 0.2).unwrap();
    assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-12);
    let one = g.constant(Tensor::<f64>::ones(&[1, 3]));
    assert!(contextual_contrast_loss(&mut g, one, one, 0.2).is_err());
}

fn quick_config() -> StyleConfig {
    StyleConfig {
        epochs: 40,
        batch: 24,
        lr: 1e-3,
        ..StyleConfig::default()
    }
}

#[test]
fn pretraining_reduces_loss_and_is_deterministic() {
    let train = small_bench();
    let cfg = quick_config();
    let (enc, report) = pretrain_style_encoder(&train, &cfg, 5).unwrap();
    let e = &report.epoch_losses;
    assert_eq!(e.len(), 40);
    let tail = e[e.len() - 5..].iter().sum::<f64>() / 5.0;
    assert!(tail < e[0], "epoch-1 {} vs final moving average {tail}", e[0]);

    let cfg2 = StyleConfig { epochs: 2, ..cfg.clone() };
    let (a, _) = pretrain_style_encoder(&train, &cfg2, 9).unwrap();
    let (b, _) = pretrain_style_encoder(&train, &cfg2, 9).unwrap();
    for ((_, pa), (_, pb)) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(pa.value, pb.value, "{}", pa.name);
    }

    let store = extract_styles(&enc, &train, 4).unwrap();
    assert_eq!(store.len(), train.len());
    assert!(store.iter().all(|v| v.values.len() == cfg.h));
    for c in 0..4 {
        let n = train.iter().filter(|i| i.class == c).count();
        assert_eq!(store.bucket(c).unwrap().len(), n);
        assert!(store.bucket(c).unwrap().iter().all(|v| v.class == c));
    }
    // Extraction is deterministic.
    assert_eq!(extract_styles(&enc, &train, 4).unwrap(), store);

    // Nearest neighbour (cosine) shares the class most of the time.
    let all: Vec<_> = store.iter().collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut agree = 0;
    for (i, a) in all.iter().enumerate() {
        let best = all
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, b)| {
                let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
                (j, dot / (norm(&a.values) * norm(&b.values)))
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap()
            .0;
        if all[best].class == a.class {
            agree += 1;
        }
    }
    let rate = agree as f64 / all.len() as f64;
    assert!(rate >= 0.7, "kNN class agreement {rate}");

    let mut bad = train[0].clone();
    bad.class = 7;
    assert!(extract_styles(&enc, &[bad], 4).is_err());

    let dir = tempfile::tempdir().unwrap();
    let (bin, csv) = (dir.path().join("s.bin"), dir.path().join("s.csv"));
    store.save(&bin, &csv).unwrap();
    assert_eq!(StyleStore::<f64>::load(&bin, &csv).unwrap(), store);
}
