use std::collections::BTreeMap;

use crate::dataio::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Source train/val/test plus the held-out target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<Instance<T>>,
    pub val: Vec<Instance<T>>,
    pub test: Vec<Instance<T>>,
    pub target_test: Vec<Instance<T>>,
    pub source_domains: Vec<String>,
    pub target_domain: String,
    pub n_classes: usize,
    pub k: usize,
    pub l: usize,
}

impl<T> DatasetSplit<T> {
    pub fn all_mut(&mut self) -> impl Iterator<Item = &mut Instance<T>> {
        self.train
            .iter_mut()
            .chain(self.val.iter_mut())
            .chain(self.test.iter_mut())
            .chain(self.target_test.iter_mut())
    }

    pub fn all(&self) -> impl Iterator<Item = &Instance<T>> {
        self.train
            .iter()
            .chain(self.val.iter())
            .chain(self.test.iter())
            .chain(self.target_test.iter())
    }
}

/// Every domain forms its own group.
pub fn identity_groups<T>(dataset: &Dataset<T>) -> BTreeMap<String, String> {
    dataset.domains.iter().map(|d| (d.clone(), d.clone())).collect()
}

/// Holds out `target_group` entirely and splits the remaining source data
/// 6:2:2 into train/val/test, stratified by class.
pub fn leave_one_out_split<T: Clone>(
    dataset: &Dataset<T>,
    groups: &BTreeMap<String, String>,
    target_group: &str,
    seed: u64,
) -> Result<DatasetSplit<T>> {
    let mut names: Vec<&String> = groups.values().collect();
    names.sort();
    names.dedup();
    if names.len() < 2 {
        return Err(Error::invalid("leave-one-out needs at least two groups"));
    }
    if !names.iter().any(|g| g.as_str() == target_group) {
        return Err(Error::invalid(format!(
            "unknown target group `{target_group}` (known: {names:?})"
        )));
    }
    let group_of = |domain: &str| {
        groups
            .get(domain)
            .ok_or_else(|| Error::invalid(format!("domain `{domain}` has no group")))
    };
    let mut target_test = Vec::new();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes];
    for (i, inst) in dataset.instances.iter().enumerate() {
        if group_of(&inst.domain)? == target_group {
            target_test.push(inst.clone());
        } else {
            per_class[inst.class].push(i);
        }
    }
    let mut rng = RngStream::new("split", seed);
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for idx in &mut per_class {
        rng.shuffle(idx);
        let n = idx.len();
        let n_train = (0.6 * n as f64).round() as usize;
        let n_val = ((0.2 * n as f64).round() as usize).min(n - n_train);
        tr.extend_from_slice(&idx[..n_train]);
        va.extend_from_slice(&idx[n_train..n_train + n_val]);
        te.extend_from_slice(&idx[n_train + n_val..]);
    }
    let take = |mut ids: Vec<usize>| -> Vec<Instance<T>> {
        ids.sort_unstable();
        ids.into_iter().map(|i| dataset.instances[i].clone()).collect()
    };
    let source_domains = dataset
        .domains
        .iter()
        .filter(|d| groups.get(*d).map(String::as_str) != Some(target_group))
        .cloned()
        .collect();
    Ok(DatasetSplit {
        train: take(tr),
        val: take(va),
        test: take(te),
        target_test,
        source_domains,
        target_domain: target_group.to_string(),
        n_classes: dataset.n_classes,
        k: dataset.k,
        l: dataset.l,
    })
}

/// Keeps `round(fraction * n_c)` training instances of every class `c`.
pub fn subsample_fraction<T: Clone>(
    split: &DatasetSplit<T>,
    fraction: f64,
    seed: u64,
) -> Result<DatasetSplit<T>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); split.n_classes];
    for (i, inst) in split.train.iter().enumerate() {
        per_class[inst.class].push(i);
    }
    let mut rng = RngStream::new("subsample", seed);
    let mut keep = Vec::new();
    for (c, idx) in per_class.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let n = (fraction * idx.len() as f64).round() as usize;
        if n == 0 {
            return Err(Error::invalid(format!(
                "fraction {fraction} leaves no training samples for class {c} ({} available)",
                idx.len()
            )));
        }
        rng.shuffle(idx);
        keep.extend_from_slice(&idx[..n]);
    }
    keep.sort_unstable();
    let mut out = split.clone();
    out.train = keep.into_iter().map(|i| split.train[i].clone()).collect();
    Ok(out)
}
