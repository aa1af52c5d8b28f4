use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataio::{
    class_counts, identity_groups, leave_one_out_split, load_dataset, read_instances, subsample_fraction,
    write_instances, DatasetSplit, Instance, NormStats,
};
use crate::diffusion::{generate_dataset, DiffusionModel, PregeneratedPool, SamplerConfig};
use crate::error::{Error, Result};
use crate::pipeline::config::{hash_json, ExperimentConfig, Method, Precision};
use crate::pipeline::report::SeedReport;
use crate::scalar::Scalar;
use crate::style::{extract_styles, pretrain_style_encoder, StyleEncoder, StyleStore};
use crate::tsc::{accuracy, erm_train, train_diversity, Classifier};

pub const STAGES_VERSION: u32 = 1;
pub const SPLIT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Prepare,
    PretrainStyle,
    TrainDiffusion,
    Generate,
    TrainTsc,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Prepare,
        Stage::PretrainStyle,
        Stage::TrainDiffusion,
        Stage::Generate,
        Stage::TrainTsc,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::PretrainStyle => "pretrain-style",
            Stage::TrainDiffusion => "train-diffusion",
            Stage::Generate => "generate",
            Stage::TrainTsc => "train-tsc",
            Stage::Eval => "eval",
        }
    }

    /// Stages executed for `method`, in order.
    pub fn for_method(method: Method) -> Vec<Stage> {
        match method {
            Method::Di2sdiff => Self::ALL.to_vec(),
            Method::Erm => vec![Stage::Prepare, Stage::TrainTsc, Stage::Eval],
        }
    }
}

/// Artifact locations inside a run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub dir: PathBuf,
}

impl RunLayout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn split_json(&self) -> PathBuf {
        self.dir.join("split.json")
    }

    /// Value and label files of one split part (`train`, `val`, `test`, `target`).
    pub fn split_part(&self, part: &str) -> (PathBuf, PathBuf) {
        let d = self.dir.join("split");
        (d.join(format!("{part}.bin")), d.join(format!("{part}.csv")))
    }

    pub fn style_ckpt(&self) -> PathBuf {
        self.dir.join("style.ckpt")
    }

    pub fn styles(&self) -> (PathBuf, PathBuf) {
        (self.dir.join("styles.bin"), self.dir.join("styles.csv"))
    }

    pub fn diffusion_ckpt(&self) -> PathBuf {
        self.dir.join("diffusion.ckpt")
    }

    pub fn synthetic(&self) -> (PathBuf, PathBuf) {
        let d = self.dir.join("synth");
        (d.join("synthetic.bin"), d.join("synthetic.csv"))
    }

    pub fn tsc_ckpt(&self) -> PathBuf {
        self.dir.join("tsc.ckpt")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }

    pub fn stages_json(&self) -> PathBuf {
        self.dir.join("stages.json")
    }

    pub fn timing_json(&self) -> PathBuf {
        self.dir.join("timing.json")
    }

    pub fn log(&self) -> PathBuf {
        self.dir.join("pipeline.log")
    }

    /// Files a completed stage leaves behind.
    pub fn outputs(&self, stage: Stage) -> Vec<PathBuf> {
        let pair = |(a, b): (PathBuf, PathBuf)| vec![a, b];
        match stage {
            Stage::Prepare => {
                let mut v = vec![self.split_json()];
                for part in SPLIT_PARTS {
                    v.extend(pair(self.split_part(part)));
                }
                v
            }
            Stage::PretrainStyle => {
                let mut v = vec![self.style_ckpt(), self.style_ckpt().with_extension("json")];
                v.extend(pair(self.styles()));
                v
            }
            Stage::TrainDiffusion => vec![self.diffusion_ckpt(), self.diffusion_ckpt().with_extension("json")],
            Stage::Generate => pair(self.synthetic()),
            Stage::TrainTsc => vec![self.tsc_ckpt(), self.tsc_ckpt().with_extension("json")],
            Stage::Eval => vec![self.report()],
        }
    }
}

const SPLIT_PARTS: [&str; 4] = ["train", "val", "test", "target"];

/// Metadata of a prepared, normalized split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub format_version: u32,
    pub dataset: String,
    pub target: String,
    pub source_domains: Vec<String>,
    pub seed: u64,
    pub fraction: f64,
    pub n_classes: usize,
    pub k: usize,
    pub l: usize,
    /// Statistics fitted on the source train part and applied to every part.
    pub norm: NormStats,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageRecord {
    format_version: u32,
    fingerprints: BTreeMap<Stage, String>,
}

impl StageRecord {
    fn new() -> Self {
        Self {
            format_version: STAGES_VERSION,
            fingerprints: BTreeMap::new(),
        }
    }
}

/// One pipeline run rooted at `config.out_dir`.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: ExperimentConfig,
    pub layout: RunLayout,
}

impl Run {
    pub fn new(config: ExperimentConfig) -> Self {
        let layout = RunLayout::new(config.out_dir.clone());
        Self { config, layout }
    }

    /// Hash of everything `stage` depends on, chained through its upstream
    /// stages. Sampling parameters belong to `generate`, not to the
    /// diffusion training stage.
    pub fn fingerprint(&self, stage: Stage) -> String {
        let c = &self.config;
        let (upstream, own) = match stage {
            Stage::Prepare => (
                None,
                json!({
                    "dataset": c.dataset,
                    "target": c.target,
                    "fraction": c.fraction,
                    "seed": c.seed,
                    "precision": c.precision,
                }),
            ),
            Stage::PretrainStyle => (
                Some(Stage::Prepare),
                json!({"h": c.style_h, "epochs": c.style_epochs, "lr": c.style_lr, "batch": c.style_batch}),
            ),
            Stage::TrainDiffusion => (
                Some(Stage::PretrainStyle),
                json!({
                    "t": c.diffusion_t,
                    "beta_1": c.diffusion_beta_1,
                    "beta_t": c.diffusion_beta_t,
                    "lr": c.diffusion_lr,
                    "batch": c.diffusion_batch,
                    "steps": c.diffusion_steps,
                    "p_drop": c.diffusion_p_drop,
                    "base": c.diffusion_base,
                    "attention": c.diffusion_attention,
                }),
            ),
            Stage::Generate => (
                Some(Stage::TrainDiffusion),
                json!({
                    "kappa": c.kappa,
                    "o": c.o,
                    "fuse_dist": c.fuse_dist,
                    "omega": c.diffusion_omega,
                    "fuse_normalize": c.diffusion_fuse_normalize,
                    "clip": c.diffusion_clip,
                }),
            ),
            Stage::TrainTsc => (
                Some(match c.method {
                    Method::Di2sdiff => Stage::Generate,
                    Method::Erm => Stage::Prepare,
                }),
                json!({
                    "method": c.method,
                    "kappa": c.kappa,
                    "epochs": c.tsc_epochs,
                    "lr": c.tsc_lr,
                    "batch": c.tsc_batch,
                    "blocks": c.tsc_blocks,
                }),
            ),
            Stage::Eval => (Some(Stage::TrainTsc), json!({})),
        };
        let up = upstream.map(|s| self.fingerprint(s));
        hash_json(&json!({"stage": stage.name(), "upstream": up, "own": own}))
    }

    fn read_record(&self) -> StageRecord {
        fs::read_to_string(self.layout.stages_json())
            .ok()
            .and_then(|t| serde_json::from_str::<StageRecord>(&t).ok())
            .filter(|r| r.format_version == STAGES_VERSION)
            .unwrap_or_else(StageRecord::new)
    }

    fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Whether `stage` can be skipped: its recorded fingerprint matches and
    /// every output file exists.
    pub fn is_current(&self, stage: Stage) -> bool {
        let record = self.read_record();
        record.fingerprints.get(&stage) == Some(&self.fingerprint(stage))
            && self.layout.outputs(stage).iter().all(|p| p.is_file())
    }

    /// Runs the stages of the configured method in order. With `resume`,
    /// stages that are current are skipped until the first one that is not;
    /// everything after it reruns.
    pub fn execute(&self, resume: bool) -> Result<SeedReport> {
        fs::create_dir_all(&self.layout.dir).map_err(|e| Error::io(&self.layout.dir, e))?;
        if !resume {
            Self::write_json(&self.layout.stages_json(), &StageRecord::new())?;
        }
        let mut timing = BTreeMap::new();
        let mut dirty = !resume;
        for stage in Stage::for_method(self.config.method) {
            if !dirty && self.is_current(stage) {
                info!("stage={} skipped (up to date)", stage.name());
                continue;
            }
            dirty = true;
            let start = Instant::now();
            self.execute_stage(stage)?;
            timing.insert(stage.name(), start.elapsed().as_secs_f64());
        }
        Self::write_json(&self.layout.timing_json(), &timing)?;
        SeedReport::load(&self.layout.report())
    }

    /// Runs `stage` and records its fingerprint. Fingerprints of the stage
    /// and everything downstream are dropped first, so a failure leaves no
    /// stale record behind.
    pub fn execute_stage(&self, stage: Stage) -> Result<()> {
        fs::create_dir_all(&self.layout.dir).map_err(|e| Error::io(&self.layout.dir, e))?;
        let mut record = self.read_record();
        record.fingerprints.retain(|s, _| *s < stage);
        Self::write_json(&self.layout.stages_json(), &record)?;
        self.run_stage(stage)?;
        record.fingerprints.insert(stage, self.fingerprint(stage));
        Self::write_json(&self.layout.stages_json(), &record)
    }

    /// Runs one stage, reading its inputs from the run directory.
    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        info!("stage={} start dir={}", stage.name(), self.layout.dir.display());
        let result = match self.config.precision {
            Precision::F32 => self.run_stage_typed::<f32>(stage),
            Precision::F64 => self.run_stage_typed::<f64>(stage),
        };
        result.map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Stage {
                stage: stage.name(),
                source: Box::new(other),
            },
        })
    }

    fn run_stage_typed<T: Scalar>(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Prepare => self.prepare::<T>(),
            Stage::PretrainStyle => self.pretrain_style::<T>(),
            Stage::TrainDiffusion => self.train_diffusion::<T>(),
            Stage::Generate => self.generate::<T>(),
            Stage::TrainTsc => self.train_tsc::<T>(),
            Stage::Eval => self.eval::<T>(),
        }
    }

    fn prepare<T: Scalar>(&self) -> Result<()> {
        let c = &self.config;
        let dataset = load_dataset::<T>(&c.dataset)?;
        let groups = identity_groups(&dataset);
        let mut split = leave_one_out_split(&dataset, &groups, &c.target, c.seed)?;
        if c.fraction < 1.0 {
            split = subsample_fraction(&split, c.fraction, c.seed)?;
        }
        let norm = NormStats::normalize(&mut split)?;
        let split_dir = self.layout.dir.join("split");
        fs::create_dir_all(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
        for (part, instances) in SPLIT_PARTS
            .iter()
            .zip([&split.train, &split.val, &split.test, &split.target_test])
        {
            let (bin, csv) = self.layout.split_part(part);
            write_instances(&bin, &csv, instances)?;
        }
        let info = SplitInfo {
            format_version: SPLIT_VERSION,
            dataset: dataset.name,
            target: split.target_domain.clone(),
            source_domains: split.source_domains.clone(),
            seed: c.seed,
            fraction: c.fraction,
            n_classes: split.n_classes,
            k: split.k,
            l: split.l,
            norm,
        };
        Self::write_json(&self.layout.split_json(), &info)?;
        info!(
            "stage=prepare target={} n_train={} n_target={}",
            info.target,
            split.train.len(),
            split.target_test.len()
        );
        Ok(())
    }

    /// Reads the prepared split back from disk.
    pub fn load_split<T: Scalar>(&self) -> Result<(SplitInfo, DatasetSplit<T>)> {
        let path = self.layout.split_json();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let info: SplitInfo = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if info.format_version != SPLIT_VERSION {
            return Err(Error::format(&path, format!("unsupported split version {}", info.format_version)));
        }
        let read = |part: &str| -> Result<Vec<Instance<T>>> {
            let (bin, csv) = self.layout.split_part(part);
            read_instances(&bin, &csv)
        };
        let split = DatasetSplit {
            train: read("train")?,
            val: read("val")?,
            test: read("test")?,
            target_test: read("target")?,
            source_domains: info.source_domains.clone(),
            target_domain: info.target.clone(),
            n_classes: info.n_classes,
            k: info.k,
            l: info.l,
        };
        Ok((info, split))
    }

    fn pretrain_style<T: Scalar>(&self) -> Result<()> {
        let (_, split) = self.load_split::<T>()?;
        let (encoder, _) = pretrain_style_encoder(&split.train, &self.config.style_config(), self.config.seed)?;
        encoder.save(&self.layout.style_ckpt())?;
        let store = extract_styles(&encoder, &split.train, split.n_classes)?;
        let (bin, csv) = self.layout.styles();
        store.save(&bin, &csv)
    }

    fn load_styles<T: Scalar>(&self) -> Result<StyleStore<T>> {
        let (bin, csv) = self.layout.styles();
        StyleStore::load(&bin, &csv)
    }

    fn train_diffusion<T: Scalar>(&self) -> Result<()> {
        let (_, split) = self.load_split::<T>()?;
        let store = self.load_styles::<T>()?;
        let (model, _) =
            crate::diffusion::train_diffusion(&split.train, &store, &self.config.diffusion_config(), self.config.seed)?;
        model.save(&self.layout.diffusion_ckpt())
    }

    pub fn sampler(&self) -> SamplerConfig {
        self.config.diffusion_config().sampler()
    }

    fn generate<T: Scalar>(&self) -> Result<()> {
        let (_, split) = self.load_split::<T>()?;
        let store = self.load_styles::<T>()?;
        let model = DiffusionModel::<T>::load(&self.layout.diffusion_ckpt())?;
        let budget = self.config.budget()?;
        let counts = class_counts(&split.train, split.n_classes);
        let synthetic = generate_dataset(&model, &store, &budget, &self.sampler(), &counts, self.config.seed)?;
        let (bin, csv) = self.layout.synthetic();
        let dir = bin.parent().expect("synthetic path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        info!("stage=generate n_synthetic={}", synthetic.len());
        write_instances(&bin, &csv, &synthetic)
    }

    pub fn load_synthetic<T: Scalar>(&self) -> Result<Vec<Instance<T>>> {
        let (bin, csv) = self.layout.synthetic();
        read_instances(&bin, &csv)
    }

    fn train_tsc<T: Scalar>(&self) -> Result<()> {
        let c = &self.config;
        let (_, split) = self.load_split::<T>()?;
        let tsc = c.tsc_config();
        let model = match c.method {
            Method::Erm => erm_train(&split.train, split.n_classes, &tsc, c.seed)?.0,
            Method::Di2sdiff => {
                let mut pool = PregeneratedPool::new(self.load_synthetic::<T>()?, split.n_classes, c.kappa)?;
                train_diversity(&split.train, split.n_classes, Some(&mut pool), c.kappa, &tsc, c.seed)?.0
            }
        };
        model.save(&self.layout.tsc_ckpt())
    }

    fn eval<T: Scalar>(&self) -> Result<()> {
        let c = &self.config;
        let (info, split) = self.load_split::<T>()?;
        let model = Classifier::<T>::load(&self.layout.tsc_ckpt())?;
        let target = accuracy(&model, &split.target_test)?;
        let source = accuracy(&model, &split.test)?;
        let n_synthetic = match c.method {
            Method::Erm => 0,
            Method::Di2sdiff => self.load_synthetic::<T>()?.len(),
        };
        let report = SeedReport::new(c, &info, &target, source.accuracy, split.train.len() + n_synthetic);
        info!("stage=eval target={} accuracy={:.6}", info.target, report.accuracy);
        report.save(&self.layout.report())
    }

    pub fn load_style_encoder<T: Scalar>(&self) -> Result<StyleEncoder<T>> {
        StyleEncoder::load(&self.layout.style_ckpt())
    }
}
