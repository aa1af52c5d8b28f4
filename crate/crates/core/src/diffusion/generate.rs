use crate::combinator::{assemble_batch_conditions, class_allocation, GenerationBudget};
use crate::dataio::{Instance, SYNTHETIC};
use crate::diffusion::guidance::{sample_chains, SamplerConfig};
use crate::diffusion::train::DiffusionModel;
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::scalar::Scalar;
use crate::style::StyleStore;

/// Domain label carried by generated instances.
pub const SYNTHETIC_DOMAIN: &str = "synthetic";

/// Supplies synthetic instances for a training batch.
pub trait SyntheticSource<T> {
    /// Returns `round(κ·B)` labeled instances for a batch whose class
    /// histogram is `batch_class_counts`.
    fn generate(&mut self, batch_class_counts: &[usize]) -> Result<Vec<Instance<T>>>;

    /// Number of `generate` calls served so far.
    fn calls(&self) -> usize;
}

/// Samples fresh instances from a trained denoiser through style fusion.
pub struct DiffusionGenerator<'a, T> {
    pub model: &'a DiffusionModel<T>,
    pub store: &'a StyleStore<T>,
    pub budget: GenerationBudget,
    pub sampler: SamplerConfig,
    pub seed: u64,
    /// Chains advanced together through one denoiser batch.
    pub chunk: usize,
    calls: usize,
    next_id: u64,
}

impl<'a, T: Scalar> DiffusionGenerator<'a, T> {
    pub fn new(
        model: &'a DiffusionModel<T>,
        store: &'a StyleStore<T>,
        budget: GenerationBudget,
        sampler: SamplerConfig,
        seed: u64,
    ) -> Result<Self> {
        if store.h != model.unet.style_dim {
            return Err(Error::invalid(format!(
                "style store has H={} but the denoiser expects {}",
                store.h, model.unet.style_dim
            )));
        }
        Ok(Self {
            model,
            store,
            budget,
            sampler,
            seed,
            chunk: 32,
            calls: 0,
            next_id: 0,
        })
    }
}

impl<T: Scalar> SyntheticSource<T> for DiffusionGenerator<'_, T> {
    fn generate(&mut self, batch_class_counts: &[usize]) -> Result<Vec<Instance<T>>> {
        let mut rng = RngStream::new(&format!("generate/call{}", self.calls), self.seed);
        self.calls += 1;
        let mut combos = assemble_batch_conditions(self.store, batch_class_counts, &self.budget, &mut rng)?;
        for c in &mut combos {
            c.combination_id += self.next_id;
        }
        self.next_id += combos.len() as u64;
        let (k, l) = (self.model.unet.k, self.model.unet.l);
        let mut out = Vec::with_capacity(combos.len());
        for chunk in combos.chunks(self.chunk.max(1)) {
            let styles = chunk
                .iter()
                .map(|c| Ok(c.vectors(self.store)?.iter().map(|v| v.values.as_slice()).collect()))
                .collect::<Result<Vec<Vec<&[T]>>>>()?;
            let mut rngs: Vec<RngStream> = chunk
                .iter()
                .map(|c| RngStream::new(&format!("sample/{}", c.combination_id), self.seed))
                .collect();
            let samples = sample_chains(
                &self.model.unet,
                &self.model.schedule,
                k,
                l,
                &styles,
                &mut rngs,
                &self.sampler,
            )?;
            for (c, values) in chunk.iter().zip(samples) {
                out.push(Instance {
                    id: format!("syn-{:06}", c.combination_id),
                    values,
                    class: c.class,
                    domain: SYNTHETIC_DOMAIN.to_string(),
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

/// Generates the whole synthetic split once: `round(κ·n^s)` instances,
/// class-balanced against `class_counts` of the originals.
pub fn generate_dataset<T: Scalar>(
    model: &DiffusionModel<T>,
    store: &StyleStore<T>,
    budget: &GenerationBudget,
    sampler: &SamplerConfig,
    class_counts: &[usize],
    seed: u64,
) -> Result<Vec<Instance<T>>> {
    let mut generator = DiffusionGenerator::new(model, store, budget.clone(), *sampler, seed)?;
    generator.generate(class_counts)
}

/// Serves stored synthetic instances per class, cycling through each
/// class in order.
#[derive(Debug, Clone)]
pub struct PregeneratedPool<T> {
    pub kappa: f64,
    by_class: Vec<Vec<Instance<T>>>,
    cursors: Vec<usize>,
    calls: usize,
}

impl<T: Scalar> PregeneratedPool<T> {
    pub fn new(instances: Vec<Instance<T>>, n_classes: usize, kappa: f64) -> Result<Self> {
        let mut by_class: Vec<Vec<Instance<T>>> = vec![Vec::new(); n_classes];
        for inst in instances {
            if inst.class >= n_classes {
                return Err(Error::invalid(format!(
                    "synthetic instance {} has class {} outside [0, {n_classes})",
                    inst.id, inst.class
                )));
            }
            by_class[inst.class].push(inst);
        }
        Ok(Self {
            kappa,
            by_class,
            cursors: vec![0; n_classes],
            calls: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.by_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Scalar> SyntheticSource<T> for PregeneratedPool<T> {
    fn generate(&mut self, batch_class_counts: &[usize]) -> Result<Vec<Instance<T>>> {
        self.calls += 1;
        let alloc = class_allocation(self.kappa, batch_class_counts);
        let mut out = Vec::new();
        for (c, &n) in alloc.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let pool = self.by_class.get(c).filter(|p| !p.is_empty()).ok_or_else(|| {
                Error::invalid(format!("synthetic pool has no instances of class {c}"))
            })?;
            for _ in 0..n {
                out.push(pool[self.cursors[c] % pool.len()].clone());
                self.cursors[c] += 1;
            }
        }
        Ok(out)
    }

    fn calls(&self) -> usize {
        self.calls
    }
}
