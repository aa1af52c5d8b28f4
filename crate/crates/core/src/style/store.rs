use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{checkpoint, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct StyleVector<T> {
    pub values: Vec<T>,
    pub class: usize,
    pub instance_id: String,
    pub domain: String,
}

/// Style vectors bucketed by class: `buckets[c]` is `S^c`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleStore<T> {
    pub h: usize,
    pub buckets: Vec<Vec<StyleVector<T>>>,
}

#[derive(Serialize, Deserialize)]
struct IndexRow {
    instance_id: String,
    class: usize,
    domain: String,
}

const INDEX_HEADER: &str = "#stylepad-styles v1";

impl<T: Scalar> StyleStore<T> {
    pub fn new(n_classes: usize, h: usize) -> Self {
        Self {
            h,
            buckets: vec![Vec::new(); n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.buckets.len()
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, v: StyleVector<T>) -> Result<()> {
        if v.class >= self.buckets.len() {
            return Err(Error::invalid(format!(
                "style for {}: class {} out of range [0, {})",
                v.instance_id,
                v.class,
                self.buckets.len()
            )));
        }
        if v.values.len() != self.h {
            return Err(Error::shape(
                "style store",
                format!("vector of length {} for H={}", v.values.len(), self.h),
            ));
        }
        self.buckets[v.class].push(v);
        Ok(())
    }

    pub fn bucket(&self, class: usize) -> Result<&[StyleVector<T>]> {
        self.buckets
            .get(class)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("unknown class {class}")))
    }

    /// Every vector in class order.
    pub fn iter(&self) -> impl Iterator<Item = &StyleVector<T>> {
        self.buckets.iter().flatten()
    }

    /// Looks up the style extracted from `instance_id`.
    pub fn find(&self, instance_id: &str) -> Option<&StyleVector<T>> {
        self.iter().find(|v| v.instance_id == instance_id)
    }

    /// `[N, H]` tensor in class order.
    pub fn matrix(&self) -> Tensor<T> {
        let data: Vec<T> = self.iter().flat_map(|v| v.values.iter().copied()).collect();
        Tensor::new(&[self.len(), self.h], data).expect("store rows have length H")
    }

    /// Writes `styles` `[N, H]` (plus `meta.n_classes`) to `bin` and the
    /// row index to `csv`.
    pub fn save(&self, bin: &Path, csv: &Path) -> Result<()> {
        let meta = Tensor::scalar(T::c(self.n_classes() as f64));
        checkpoint::write_tensors(bin, &[("styles", &self.matrix()), ("meta.n_classes", &meta)])?;
        let mut buf = format!("{INDEX_HEADER}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for v in self.iter() {
                w.serialize(IndexRow {
                    instance_id: v.instance_id.clone(),
                    class: v.class,
                    domain: v.domain.clone(),
                })
                .map_err(|e| Error::format(csv, e.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(csv, e))?;
        }
        fs::write(csv, buf).map_err(|e| Error::io(csv, e))
    }

    pub fn load(bin: &Path, csv: &Path) -> Result<Self> {
        let entries = checkpoint::read_tensors::<T>(bin)?;
        let styles = checkpoint::find(&entries, "styles", bin)?;
        let n_classes = checkpoint::find(&entries, "meta.n_classes", bin)?.item().f64() as usize;
        let text = fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
        let body = text
            .strip_prefix(INDEX_HEADER)
            .ok_or_else(|| Error::format(csv, format!("missing version line `{INDEX_HEADER}`")))?;
        let mut rdr = csv::Reader::from_reader(body.trim_start().as_bytes());
        let rows: Vec<IndexRow> = rdr
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(csv, e.to_string()))?;
        if styles.rank() != 2 || styles.dim(0) != rows.len() {
            return Err(Error::format(
                bin,
                format!("styles {:?} vs {} index rows", styles.shape(), rows.len()),
            ));
        }
        let h = styles.dim(1);
        let mut store = Self::new(n_classes, h);
        for (i, r) in rows.into_iter().enumerate() {
            store.insert(StyleVector {
                values: styles.data()[i * h..(i + 1) * h].to_vec(),
                class: r.class,
                instance_id: r.instance_id,
                domain: r.domain,
            })?;
        }
        Ok(store)
    }
}
