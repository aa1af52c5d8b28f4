//! Same-class style combinations: counting, enumeration and budgeted draws.

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::scalar::Scalar;
use crate::style::{StyleStore, StyleVector};

/// Nonempty subset of one class bucket, stored as ascending indices into
/// `S^c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StyleCombination {
    pub class: usize,
    pub members: Vec<usize>,
    pub combination_id: u64,
}

impl StyleCombination {
    /// Resolves member indices against the store.
    pub fn vectors<'a, T: Scalar>(&self, store: &'a StyleStore<T>) -> Result<Vec<&'a StyleVector<T>>> {
        let bucket = store.bucket(self.class)?;
        self.members
            .iter()
            .map(|&i| {
                bucket.get(i).ok_or_else(|| {
                    Error::invalid(format!("member {i} outside class {} bucket of {}", self.class, bucket.len()))
                })
            })
            .collect()
    }

    /// Checks non-emptiness, `|members| <= o` and that no member repeats.
    pub fn validate(&self, o: usize) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::invalid("empty style combination"));
        }
        if self.members.len() > o {
            return Err(Error::invalid(format!(
                "combination of {} styles exceeds o = {o}",
                self.members.len()
            )));
        }
        let mut sorted = self.members.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("combination repeats a member: {:?}", self.members)));
        }
        Ok(())
    }
}

/// Probabilities `p_1..p_o` of fusing `m` styles.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseCountDistribution {
    probs: Vec<f64>,
}

impl FuseCountDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid(format!("invalid fuse distribution {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("fuse distribution sums to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(o: usize) -> Self {
        Self {
            probs: vec![1.0 / o as f64; o],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationBudget {
    /// Synthetic samples per original sample.
    pub kappa: f64,
    /// Maximum number of fused styles.
    pub o: usize,
    pub fuse_dist: FuseCountDistribution,
}

impl GenerationBudget {
    pub fn new(kappa: f64, o: usize, fuse_dist: FuseCountDistribution) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::invalid(format!("kappa {kappa} must be positive")));
        }
        if o == 0 || fuse_dist.probs.len() != o {
            return Err(Error::invalid(format!(
                "o = {o} with a fuse distribution over {} counts",
                fuse_dist.probs.len()
            )));
        }
        Ok(Self { kappa, o, fuse_dist })
    }

    /// Uniform fuse distribution over `1..=o`.
    pub fn uniform(kappa: f64, o: usize) -> Result<Self> {
        Self::new(kappa, o, FuseCountDistribution::uniform(o.max(1)))
    }
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// `Σ_{m=1..min(o,k)} C(k, m)`: nonempty subsets of at most `o` styles.
pub fn count_combinations(k: usize, o: usize) -> u128 {
    (1..=o.min(k) as u64).map(|m| binomial(k as u64, m)).sum()
}

/// Subsets of `S^c` of size `1..=o`, ordered by size then
/// lexicographically, truncated to `limit`.
pub fn enumerate_combinations<T: Scalar>(
    store: &StyleStore<T>,
    class: usize,
    o: usize,
    limit: usize,
) -> Result<Vec<StyleCombination>> {
    let k = store.bucket(class)?.len();
    let mut out = Vec::new();
    'sizes: for m in 1..=o.min(k) {
        let mut idx: Vec<usize> = (0..m).collect();
        loop {
            if out.len() >= limit {
                break 'sizes;
            }
            out.push(StyleCombination {
                class,
                members: idx.clone(),
                combination_id: out.len() as u64,
            });
            // Advance to the next m-subset in lexicographic order.
            let Some(pos) = (0..m).rev().find(|&i| idx[i] < k - m + i) else {
                break;
            };
            idx[pos] += 1;
            for j in pos + 1..m {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

/// Draws `m` from the fuse distribution truncated to `min(o, |S^c|)` and
/// renormalized, then a uniform `m`-subset of `S^c`.
pub fn draw_combination<T: Scalar>(
    store: &StyleStore<T>,
    class: usize,
    budget: &GenerationBudget,
    rng: &mut RngStream,
) -> Result<StyleCombination> {
    let k = store.bucket(class)?.len();
    if k == 0 {
        return Err(Error::invalid(format!("class {class} has no styles to combine")));
    }
    let weights = &budget.fuse_dist.probs[..budget.o.min(k)];
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid(format!(
            "fuse distribution has no mass on counts 1..={} available for class {class}",
            weights.len()
        )));
    }
    let m = rng.weighted(weights) + 1;
    let mut pool: Vec<usize> = (0..k).collect();
    for i in 0..m {
        let j = i + rng.below(k - i);
        pool.swap(i, j);
    }
    let mut members = pool[..m].to_vec();
    members.sort_unstable();
    Ok(StyleCombination {
        class,
        members,
        combination_id: 0,
    })
}

/// `round(κ·B)` rounded half up, where `B = Σ counts`.
pub fn synthetic_total(kappa: f64, b: usize) -> usize {
    (kappa * b as f64 + 0.5).floor() as usize
}

/// Splits `round(κ·B)` over classes: class `c` receives `floor(κ·n_c)` and
/// the remainder is dealt round-robin over classes with `n_c > 0`.
pub fn class_allocation(kappa: f64, batch_class_counts: &[usize]) -> Vec<usize> {
    let b: usize = batch_class_counts.iter().sum();
    let total = synthetic_total(kappa, b);
    let mut per_class: Vec<usize> = batch_class_counts
        .iter()
        .map(|&n| (kappa * n as f64).floor() as usize)
        .collect();
    let present: Vec<usize> = (0..batch_class_counts.len())
        .filter(|&c| batch_class_counts[c] > 0)
        .collect();
    let mut remainder = total.saturating_sub(per_class.iter().sum());
    let mut turn = 0;
    while remainder > 0 && !present.is_empty() {
        per_class[present[turn % present.len()]] += 1;
        turn += 1;
        remainder -= 1;
    }
    per_class
}

/// Draws `round(κ·B)` combinations for a batch whose class histogram is
/// `batch_class_counts`, allocated by [`class_allocation`]. Combination
/// ids are `0..n` in output order.
pub fn assemble_batch_conditions<T: Scalar>(
    store: &StyleStore<T>,
    batch_class_counts: &[usize],
    budget: &GenerationBudget,
    rng: &mut RngStream,
) -> Result<Vec<StyleCombination>> {
    let per_class = class_allocation(budget.kappa, batch_class_counts);
    let total = per_class.iter().sum();
    let mut out = Vec::with_capacity(total);
    for (c, &n) in per_class.iter().enumerate() {
        if n > 0 && store.bucket(c)?.is_empty() {
            return Err(Error::invalid(format!(
                "class {c} requested {n} combinations but its style bucket is empty"
            )));
        }
        for _ in 0..n {
            let mut comb = draw_combination(store, c, budget, rng)?;
            comb.combination_id = out.len() as u64;
            out.push(comb);
        }
    }
    Ok(out)
}
