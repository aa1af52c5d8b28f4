use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{stack_values, Dataset, Instance};
use crate::error::{Error, Result};
use crate::numerics::checkpoint;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const MANIFEST_VERSION: u32 = 1;
const LABELS_HEADER: &str = "#stylepad-labels v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub name: String,
    #[serde(rename = "C")]
    pub n_classes: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub window_overlap: f64,
    pub channels: Vec<String>,
    pub domains: Vec<String>,
    /// Paths relative to the manifest directory: `<domain>.bin` and
    /// `<domain>.csv` for every domain.
    pub files: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    instance_id: String,
    class: usize,
    domain: String,
    origin_flag: u8,
}

/// Writes `[N, K, L]` values to `bin` and one label row per instance to
/// `csv`. Both files are written in full or not at all on error.
pub fn write_instances<T: Scalar>(bin: &Path, csv: &Path, instances: &[Instance<T>]) -> Result<()> {
    let refs: Vec<&Instance<T>> = instances.iter().collect();
    let values = if refs.is_empty() {
        Tensor::zeros(&[0, 0, 0])
    } else {
        stack_values(&refs)?
    };
    checkpoint::write_tensors(bin, &[("values", &values)])?;
    let mut buf = Vec::new();
    writeln!(buf, "{LABELS_HEADER}").map_err(|e| Error::io(csv, e))?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for inst in instances {
            w.serialize(LabelRow {
                instance_id: inst.id.clone(),
                class: inst.class,
                domain: inst.domain.clone(),
                origin_flag: inst.origin,
            })
            .map_err(|e| Error::format(csv, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(csv, e))?;
    }
    fs::write(csv, buf).map_err(|e| Error::io(csv, e))
}

pub fn read_instances<T: Scalar>(bin: &Path, csv: &Path) -> Result<Vec<Instance<T>>> {
    let entries = checkpoint::read_tensors_converting::<T>(bin)?;
    let values = checkpoint::find(&entries, "values", bin)?;
    let file = fs::File::open(csv).map_err(|e| Error::io(csv, e))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|e| Error::io(csv, e))?;
    if header.trim_end() != LABELS_HEADER {
        return Err(Error::format(
            csv,
            format!("expected version line `{LABELS_HEADER}`, found `{}`", header.trim_end()),
        ));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let rows: Vec<LabelRow> = rdr
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(csv, e.to_string()))?;
    let n = rows.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if values.rank() != 3 || values.dim(0) != n {
        return Err(Error::format(
            bin,
            format!("values {:?} do not match {n} label rows", values.shape()),
        ));
    }
    let (k, l) = (values.dim(1), values.dim(2));
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(Instance {
                id: r.instance_id,
                values: Tensor::new(&[k, l], values.data()[i * k * l..(i + 1) * k * l].to_vec())?,
                class: r.class,
                domain: r.domain,
                origin: r.origin_flag,
            })
        })
        .collect()
}

/// Writes `manifest.json` plus per-domain value and label files into `dir`.
pub fn save_dataset<T: Scalar>(dir: &Path, dataset: &Dataset<T>) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for domain in &dataset.domains {
        let part: Vec<Instance<T>> = dataset
            .instances
            .iter()
            .filter(|i| &i.domain == domain)
            .cloned()
            .collect();
        let (bin, csv) = (format!("{domain}.bin"), format!("{domain}.csv"));
        write_instances(&dir.join(&bin), &dir.join(&csv), &part)?;
        files.push(bin);
        files.push(csv);
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        name: dataset.name.clone(),
        n_classes: dataset.n_classes,
        k: dataset.k,
        l: dataset.l,
        window_overlap: dataset.window_overlap,
        channels: dataset.channels.clone(),
        domains: dataset.domains.clone(),
        files,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_dataset<T: Scalar>(manifest_path: &Path) -> Result<Dataset<T>> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(manifest_path, e.to_string()))?;
    if m.format_version != MANIFEST_VERSION {
        return Err(Error::format(
            manifest_path,
            format!("unsupported manifest version {}", m.format_version),
        ));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut instances = Vec::new();
    for domain in &m.domains {
        let (bin, csv) = (format!("{domain}.bin"), format!("{domain}.csv"));
        if !m.files.contains(&bin) || !m.files.contains(&csv) {
            return Err(Error::format(
                manifest_path,
                format!("files list lacks {bin} / {csv}"),
            ));
        }
        instances.extend(read_instances::<T>(&dir.join(bin), &dir.join(csv))?);
    }
    let ds = Dataset {
        name: m.name,
        n_classes: m.n_classes,
        k: m.k,
        l: m.l,
        window_overlap: m.window_overlap,
        channels: m.channels,
        domains: m.domains,
        instances,
    };
    ds.validate()?;
    Ok(ds)
}
