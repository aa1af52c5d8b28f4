use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use stylepad::dataio::{
    class_counts, identity_groups, leave_one_out_split, load_dataset, save_dataset, segment_series,
    segment_windows, subsample_fraction, synth_benchmark_generate, Dataset, Instance, NormStats,
    SynthBenchSpec, ORIGINAL,
};
use stylepad::numerics::layers::Linear;
use stylepad::numerics::{Adam, AdamConfig, Graph, ParameterSet, RngStream, Tensor};

fn bench(per: usize) -> Dataset<f64> {
    synth_benchmark_generate(&SynthBenchSpec {
        samples_per_class_per_domain: per,
        ..SynthBenchSpec::default()
    })
    .unwrap()
}

#[test]
fn window_examples() {
    assert_eq!(segment_windows(1000, 500, 0.5).unwrap(), vec![0, 250, 500]);
    assert_eq!(segment_windows(125, 125, 0.0).unwrap().len(), 1);
    assert_eq!(segment_windows(1024, 512, 0.0).unwrap().len(), 2);
    assert!(segment_windows(99, 100, 0.25).unwrap().is_empty());
}

proptest! {
    #[test]
    fn zero_overlap_windows_reconstruct_prefix(len in 0usize..200, w in 1usize..40) {
        let series: Vec<f64> = (0..len).map(|i| (i as f64).cos()).collect();
        let windows = segment_series(&[series.clone(), series.clone()], w, 0.0).unwrap();
        let joined: Vec<f64> = windows.iter().flat_map(|t| t.data()[..w].to_vec()).collect();
        prop_assert_eq!(windows.len(), len / w);
        prop_assert_eq!(&joined[..], &series[..joined.len()]);
    }

    #[test]
    fn normalization_round_trips(seed in 0u64..1000) {
        let mut rng = RngStream::new("norm", seed);
        let make = |rng: &mut RngStream, i: usize| Instance {
            id: format!("i{i}"),
            values: Tensor::from_fn(&[3, 7], |_| 5.0 * rng.normal::<f64>() + 2.0),
            class: 0,
            domain: "d".into(),
            origin: ORIGINAL,
        };
        let insts: Vec<_> = (0..5).map(|i| make(&mut rng, i)).collect();
        let stats = NormStats::fit(&insts).unwrap();
        for inst in &insts {
            let mut x = inst.clone();
            stats.apply(&mut x);
            stats.invert(&mut x);
            prop_assert!(x.values.max_abs_diff(&inst.values) < 1e-10);
        }
    }
}

#[test]
fn normalization_uses_train_statistics_only() {
    let ds = bench(10);
    let mut split = leave_one_out_split(&ds, &identity_groups(&ds), "D0", 1).unwrap();
    let held = split.target_test[0].clone();
    let stats = NormStats::normalize(&mut split).unwrap();
    // Train means are ~0 after normalization.
    let after = NormStats::fit(&split.train).unwrap();
    assert!(after.mean.iter().all(|m| m.abs() < 1e-10), "{:?}", after.mean);
    assert!(after.std.iter().all(|s| (s - 1.0).abs() < 1e-10));
    // A held-out instance is mapped with the train statistics.
    let mut expect = held.clone();
    stats.apply(&mut expect);
    assert_eq!(split.target_test[0], expect);
    let own = NormStats::fit(std::slice::from_ref(&held)).unwrap();
    assert_ne!(own, stats);
}

#[test]
fn constant_channel_normalizes_to_zero() {
    let inst = Instance {
        id: "c".into(),
        values: Tensor::<f64>::from_fn(&[2, 4], |i| if i < 4 { 3.0 } else { i as f64 }),
        class: 0,
        domain: "d".into(),
        origin: ORIGINAL,
    };
    let stats = NormStats::fit(std::slice::from_ref(&inst)).unwrap();
    let mut x = inst.clone();
    stats.apply(&mut x);
    assert!(x.values.data()[..4].iter().all(|&v| v == 0.0));
}

#[test]
fn leave_one_out_partitions_sources() {
    let ds = bench(20);
    let split = leave_one_out_split(&ds, &identity_groups(&ds), "D0", 7).unwrap();
    assert_eq!(split.source_domains, ["D1", "D2", "D3"]);
    assert_eq!(split.target_domain, "D0");
    assert!(split.target_test.iter().all(|i| i.domain == "D0"));
    assert!(split.train.iter().chain(&split.val).all(|i| i.domain != "D0"));
    let n_source = ds.instances.iter().filter(|i| i.domain != "D0").count();
    assert_eq!(split.train.len() + split.val.len() + split.test.len(), n_source);
    let mut seen = HashSet::new();
    for inst in split.all() {
        assert!(seen.insert(inst.id.clone()), "{} appears twice", inst.id);
    }
    // 60 source instances per class: exactly 36/12/12.
    for c in 0..ds.n_classes {
        let count = |v: &[Instance<f64>]| v.iter().filter(|i| i.class == c).count();
        assert_eq!((count(&split.train), count(&split.val), count(&split.test)), (36, 12, 12));
    }
}

#[test]
fn stratified_ratios_within_one_instance() {
    // Uneven class sizes: 7, 13, 23 instances.
    let mut instances = Vec::new();
    for (c, n) in [7usize, 13, 23].into_iter().enumerate() {
        for i in 0..n {
            for d in ["a", "b"] {
                instances.push(Instance {
                    id: format!("{d}{c}-{i}"),
                    values: Tensor::<f64>::zeros(&[1, 2]),
                    class: c,
                    domain: d.into(),
                    origin: ORIGINAL,
                });
            }
        }
    }
    let ds = Dataset {
        name: "t".into(),
        n_classes: 3,
        k: 1,
        l: 2,
        window_overlap: 0.0,
        channels: vec!["x".into()],
        domains: vec!["a".into(), "b".into()],
        instances,
    };
    let split = leave_one_out_split(&ds, &identity_groups(&ds), "b", 0).unwrap();
    for (c, n) in [7usize, 13, 23].into_iter().enumerate() {
        let count = |v: &[Instance<f64>]| v.iter().filter(|i| i.class == c).count() as f64;
        let n = n as f64;
        assert!((count(&split.train) - 0.6 * n).abs() <= 1.0);
        assert!((count(&split.val) - 0.2 * n).abs() <= 1.0);
        assert!((count(&split.test) - 0.2 * n).abs() <= 1.0);
    }
}

#[test]
fn unknown_or_single_group_is_rejected() {
    let ds = bench(2);
    assert!(leave_one_out_split(&ds, &identity_groups(&ds), "D9", 0).is_err());
    let one: BTreeMap<String, String> = ds.domains.iter().map(|d| (d.clone(), "g".into())).collect();
    assert!(leave_one_out_split(&ds, &one, "g", 0).is_err());
}

#[test]
fn grouped_domains_are_held_out_together() {
    let ds = bench(3);
    let groups: BTreeMap<String, String> = [("D0", "A"), ("D1", "A"), ("D2", "B"), ("D3", "B")]
        .into_iter()
        .map(|(d, g)| (d.to_string(), g.to_string()))
        .collect();
    let split = leave_one_out_split(&ds, &groups, "A", 0).unwrap();
    assert_eq!(split.target_test.len(), 2 * 4 * 3);
    assert_eq!(split.source_domains, ["D2", "D3"]);
}

#[test]
fn synthetic_benchmark_is_deterministic_and_exact() {
    let spec = SynthBenchSpec {
        samples_per_class_per_domain: 5,
        seed: 3,
        ..SynthBenchSpec::default()
    };
    let a: Dataset<f64> = synth_benchmark_generate(&spec).unwrap();
    let b: Dataset<f64> = synth_benchmark_generate(&spec).unwrap();
    assert_eq!(a, b);
    for d in &a.domains {
        for c in 0..a.n_classes {
            let n = a.instances.iter().filter(|i| &i.domain == d && i.class == c).count();
            assert_eq!(n, 5);
        }
    }
    let other: Dataset<f64> = synth_benchmark_generate(&SynthBenchSpec { seed: 4, ..spec.clone() }).unwrap();
    assert_ne!(a.instances[0].values, other.instances[0].values);
    assert!(synth_benchmark_generate::<f64>(&SynthBenchSpec { n_classes: 9, ..spec }).is_err());
}

#[test]
fn class_is_the_waveform_family_in_every_domain() {
    // Same family + same draw parameters → identical shape after removing
    // the per-domain affine distortion, so class identity is domain-free.
    let ds = bench(3);
    for inst in &ds.instances {
        let family: usize = inst.id.split("-c").nth(1).unwrap()[..1].parse().unwrap();
        assert_eq!(family, inst.class);
    }
}

#[test]
fn linear_classifier_separates_classes_within_one_domain() {
    let ds = bench(40);
    let inst: Vec<&Instance<f64>> = ds.instances.iter().filter(|i| i.domain == "D1").collect();
    let (n, d) = (inst.len(), ds.k * ds.l);
    let x = Tensor::new(&[n, d], inst.iter().flat_map(|i| i.values.data().to_vec()).collect()).unwrap();
    let y: Vec<usize> = inst.iter().map(|i| i.class).collect();
    let mut ps = ParameterSet::<f64>::new();
    let mut rng = RngStream::new("linprobe", 0);
    let lin = Linear::new(&mut ps, "lin", d, ds.n_classes, &mut rng).unwrap();
    let mut opt = Adam::for_all(&ps, AdamConfig::with_lr(1e-2));
    for _ in 0..1500 {
        ps.zero_grads();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let logits = lin.forward(&mut g, &ps, xv).unwrap();
        let loss = g.softmax_cross_entropy(logits, &y).unwrap();
        g.backward(loss, &mut ps).unwrap();
        opt.step(&mut ps).unwrap();
    }
    let mut g = Graph::inference();
    let xv = g.constant(x);
    let logits = lin.forward(&mut g, &ps, xv).unwrap();
    let pred: Vec<usize> = g
        .value(logits)
        .data()
        .chunks(ds.n_classes)
        .map(|r| (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap())
        .collect();
    let acc = pred.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / n as f64;
    assert!(acc > 0.9, "train accuracy {acc}");
}

#[test]
fn subsampling_is_stratified_and_seeded() {
    let ds = bench(100);
    let groups = identity_groups(&ds);
    let split = leave_one_out_split(&ds, &groups, "D0", 0).unwrap();
    assert_eq!(subsample_fraction(&split, 1.0, 5).unwrap(), split);
    // 180 train per class -> 36.
    let a = subsample_fraction(&split, 0.2, 1).unwrap();
    let b = subsample_fraction(&split, 0.2, 2).unwrap();
    assert_eq!(class_counts(&a.train, 4), vec![36; 4]);
    assert_eq!(class_counts(&a.train, 4), class_counts(&b.train, 4));
    assert_ne!(a.train, b.train);
    assert_eq!(subsample_fraction(&split, 0.2, 1).unwrap(), a);
    assert!(subsample_fraction(&split, 0.001, 1).is_err());
    assert!(subsample_fraction(&split, 0.0, 1).is_err());
}

#[test]
fn twenty_percent_of_one_hundred_per_class() {
    let mut instances = Vec::new();
    for c in 0..3 {
        for i in 0..100 {
            instances.push(Instance {
                id: format!("{c}-{i}"),
                values: Tensor::<f64>::zeros(&[1, 1]),
                class: c,
                domain: "s".into(),
                origin: ORIGINAL,
            });
        }
    }
    let split = stylepad::dataio::DatasetSplit {
        train: instances,
        val: vec![],
        test: vec![],
        target_test: vec![],
        source_domains: vec!["s".into()],
        target_domain: "t".into(),
        n_classes: 3,
        k: 1,
        l: 1,
    };
    let sub = subsample_fraction(&split, 0.2, 9).unwrap();
    assert_eq!(class_counts(&sub.train, 3), vec![20; 3]);
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = bench(2);
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_dataset(dir.path(), &ds).unwrap();
    let back: Dataset<f64> = load_dataset(&manifest).unwrap();
    assert_eq!(back, ds);
    let as_f32: Dataset<f32> = load_dataset(&manifest).unwrap();
    assert_eq!(as_f32.instances.len(), ds.instances.len());

    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("\"C\": 4"));
    std::fs::write(&manifest, text.replace("\"format_version\": 1", "\"format_version\": 7")).unwrap();
    let err = load_dataset::<f64>(&manifest).unwrap_err().to_string();
    assert!(err.contains("version 7"), "{err}");
}

#[test]
fn label_files_declare_their_version() {
    let ds = bench(1);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &ds).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("D0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("#stylepad-labels v1"));
    assert_eq!(lines.next(), Some("instance_id,class,domain,origin_flag"));
    std::fs::write(dir.path().join("D0.csv"), csv.replace("v1", "v2")).unwrap();
    assert!(load_dataset::<f64>(&dir.path().join("manifest.json")).is_err());
}
