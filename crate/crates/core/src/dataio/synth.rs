use std::f64::consts::TAU;

use crate::dataio::{Dataset, Instance, ORIGINAL};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};
use crate::scalar::Scalar;

/// Waveform families, one per class, in class order.
pub const WAVEFORMS: [&str; 8] = [
    "sine", "square", "sawtooth", "chirp", "triangle", "pulse", "damped", "am",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBenchSpec {
    pub n_classes: usize,
    pub n_domains: usize,
    pub samples_per_class_per_domain: usize,
    pub k: usize,
    pub l: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthBenchSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_domains: 4,
            samples_per_class_per_domain: 40,
            k: 3,
            l: 32,
            noise_level: 0.05,
            seed: 0,
        }
    }
}

/// Per-domain ranges. Domains move monotonically from slow, small, low
/// signals to fast, large, noisy ones.
struct DomainStyle {
    cycles: (f64, f64),
    amplitude: (f64, f64),
    offset: f64,
    noise: f64,
}

fn domain_style(d: usize, n_domains: usize, noise_level: f64) -> DomainStyle {
    let u = if n_domains > 1 {
        d as f64 / (n_domains - 1) as f64
    } else {
        0.5
    };
    let c = 1.5 + 2.5 * u;
    let a = 0.6 + 0.8 * u;
    DomainStyle {
        cycles: (c - 0.3, c + 0.3),
        amplitude: (a - 0.1, a + 0.1),
        offset: 0.4 * (u - 0.5),
        noise: noise_level * (1.0 + u),
    }
}

/// Waveform value at relative time `t ∈ [0, 1)` for a window containing
/// `cycles` periods starting at `phase` (in cycles).
fn waveform(family: usize, t: f64, cycles: f64, phase: f64) -> f64 {
    let p = cycles * t + phase;
    let frac = p - p.floor();
    match family {
        0 => (TAU * p).sin(),
        1 => {
            if frac < 0.5 {
                1.0
            } else {
                -1.0
            }
        }
        2 => 2.0 * frac - 1.0,
        // Instantaneous frequency sweeps from `cycles` to `2 * cycles`.
        3 => (TAU * (cycles * (t + 0.5 * t * t) + phase)).sin(),
        4 => 1.0 - 4.0 * (frac - 0.5).abs(),
        5 => {
            if frac < 0.15 {
                1.0
            } else {
                -0.2
            }
        }
        6 => (-3.0 * t).exp() * (TAU * p).sin(),
        _ => (TAU * p).sin() * (0.6 + 0.4 * (TAU * t).sin()),
    }
}

/// Generates `samples_per_class_per_domain` windows for every
/// (class, domain) pair. Classes are waveform families; domains differ in
/// frequency, amplitude, offset and noise floor; each instance draws its
/// own phase and parameters within the domain ranges.
pub fn synth_benchmark_generate<T: Scalar>(spec: &SynthBenchSpec) -> Result<Dataset<T>> {
    if spec.n_classes > WAVEFORMS.len() {
        return Err(Error::invalid(format!(
            "{} classes requested but only {} waveform families exist",
            spec.n_classes,
            WAVEFORMS.len()
        )));
    }
    if spec.n_classes == 0
        || spec.n_domains == 0
        || spec.samples_per_class_per_domain == 0
        || spec.k == 0
        || spec.l == 0
    {
        return Err(Error::invalid("synthetic benchmark counts must all be at least 1"));
    }
    let domains: Vec<String> = (0..spec.n_domains).map(|d| format!("D{d}")).collect();
    let mut instances = Vec::new();
    for (d, domain) in domains.iter().enumerate() {
        let style = domain_style(d, spec.n_domains, spec.noise_level);
        let mut rng = RngStream::new(&format!("synth/{domain}"), spec.seed);
        for class in 0..spec.n_classes {
            for i in 0..spec.samples_per_class_per_domain {
                let cycles = rng.uniform(style.cycles.0, style.cycles.1);
                let amp = rng.uniform(style.amplitude.0, style.amplitude.1);
                let phase = rng.uniform(0.0, 1.0);
                let mut data = Vec::with_capacity(spec.k * spec.l);
                for ch in 0..spec.k {
                    let gain = 1.0 / (1.0 + 0.4 * ch as f64);
                    let ch_phase = phase + 0.25 * ch as f64;
                    for step in 0..spec.l {
                        let t = step as f64 / spec.l as f64;
                        let v = amp * gain * waveform(class, t, cycles, ch_phase)
                            + style.offset
                            + style.noise * rng.normal::<f64>();
                        data.push(T::c(v));
                    }
                }
                instances.push(Instance {
                    id: format!("{domain}-c{class}-{i:04}"),
                    values: Tensor::new(&[spec.k, spec.l], data)?,
                    class,
                    domain: domain.clone(),
                    origin: ORIGINAL,
                });
            }
        }
    }
    Ok(Dataset {
        name: "synthetic".into(),
        n_classes: spec.n_classes,
        k: spec.k,
        l: spec.l,
        window_overlap: 0.0,
        channels: (0..spec.k).map(|c| format!("ch{c}")).collect(),
        domains,
        instances,
    })
}
