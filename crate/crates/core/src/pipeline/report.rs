use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::config::{ExperimentConfig, Method};
use crate::pipeline::run::SplitInfo;
use crate::tsc::Evaluation;

pub const REPORT_VERSION: u32 = 1;
const TABLE_HEADER: &str = "#stylepad-accuracy v1";
const COMPARE_HEADER: &str = "#stylepad-compare v1";

/// Outcome of one (target, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub format_version: u32,
    /// Held-out target domain.
    pub task: String,
    pub method: Method,
    pub seed: u64,
    /// Target-domain accuracy in `[0, 1]`.
    pub accuracy: f64,
    /// `None` for classes absent from the target domain.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Originals plus synthetic instances seen by the classifier.
    pub n_train: usize,
    pub kappa: f64,
    pub o: usize,
    pub source_test_accuracy: f64,
    pub config_hash: String,
}

impl SeedReport {
    pub fn new(config: &ExperimentConfig, info: &SplitInfo, target: &Evaluation, source: f64, n_train: usize) -> Self {
        let padded = config.method == Method::Di2sdiff;
        Self {
            format_version: REPORT_VERSION,
            task: info.target.clone(),
            method: config.method,
            seed: config.seed,
            accuracy: target.accuracy,
            per_class_accuracy: target
                .per_class_accuracy
                .iter()
                .map(|a| a.is_finite().then_some(*a))
                .collect(),
            n_train,
            kappa: if padded { config.kappa } else { 0.0 },
            o: if padded { config.o } else { 0 },
            source_test_accuracy: source,
            config_hash: config.hash(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if report.format_version != REPORT_VERSION {
            return Err(Error::format(path, format!("unsupported report version {}", report.format_version)));
        }
        Ok(report)
    }
}

/// Accuracy of one task aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (divisor `n - 1`); 0 for a single seed.
    pub std: f64,
}

impl TaskSummary {
    pub fn from_entries(task: &str, entries: &[(u64, f64)]) -> Self {
        let accuracies: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let (mean, std) = mean_std(&accuracies);
        Self {
            task: task.to_string(),
            seeds: entries.iter().map(|e| e.0).collect(),
            accuracies,
            mean,
            std,
        }
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-task accuracies of one method over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub method: Method,
    pub config_hash: String,
    pub tasks: Vec<TaskSummary>,
    /// Mean over tasks of the per-task means.
    pub mean: f64,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    /// Groups seed reports by task (sorted by task name, seeds in input order).
    pub fn aggregate(reports: &[SeedReport], config_hash: &str, wall_clock_seconds: f64) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::invalid("cannot aggregate an empty report list"))?;
        if let Some(r) = reports.iter().find(|r| r.method != first.method) {
            return Err(Error::invalid(format!(
                "mixed methods in aggregate: {} and {}",
                first.method.name(),
                r.method.name()
            )));
        }
        let mut by_task: BTreeMap<&str, Vec<(u64, f64)>> = BTreeMap::new();
        for r in reports {
            by_task.entry(&r.task).or_default().push((r.seed, r.accuracy));
        }
        let tasks: Vec<TaskSummary> = by_task
            .iter()
            .map(|(task, entries)| TaskSummary::from_entries(task, entries))
            .collect();
        let mean = tasks.iter().map(|t| t.mean).sum::<f64>() / tasks.len() as f64;
        Ok(Self {
            format_version: REPORT_VERSION,
            method: first.method,
            config_hash: config_hash.to_string(),
            tasks,
            mean,
            wall_clock_seconds,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if report.format_version != REPORT_VERSION {
            return Err(Error::format(path, format!("unsupported report version {}", report.format_version)));
        }
        Ok(report)
    }

    /// CSV rows `task,method,accuracy,sigma` in percent, plus an `avg` row.
    pub fn table_csv(&self) -> String {
        let mut out = format!("{TABLE_HEADER}\ntask,method,accuracy,sigma\n");
        for t in &self.tasks {
            out += &format!("{},{},{:.4},{:.4}\n", t.task, self.method.name(), 100.0 * t.mean, 100.0 * t.std);
        }
        out += &format!("avg,{},{:.4},\n", self.method.name(), 100.0 * self.mean);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub task: String,
    /// Mean accuracy per compared report, in input order.
    pub accuracies: Vec<f64>,
    /// `accuracies[i] - accuracies[last]`.
    pub deltas: Vec<f64>,
}

/// Reports aligned by task, each compared against the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub methods: Vec<Method>,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_methods(reports: &[RunReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::invalid(format!("compare needs at least 2 reports, got {}", reports.len())));
    }
    let tasks = |r: &RunReport| r.tasks.iter().map(|t| t.task.clone()).collect::<Vec<_>>();
    let reference = tasks(&reports[0]);
    for r in &reports[1..] {
        if tasks(r) != reference {
            return Err(Error::invalid(format!(
                "mismatched task sets: {:?} vs {:?}",
                reference,
                tasks(r)
            )));
        }
    }
    let last = reports.len() - 1;
    let rows = (0..reference.len())
        .map(|i| {
            let accuracies: Vec<f64> = reports.iter().map(|r| r.tasks[i].mean).collect();
            let deltas = accuracies.iter().map(|a| a - accuracies[last]).collect();
            ComparisonRow {
                task: reference[i].clone(),
                accuracies,
                deltas,
            }
        })
        .collect();
    Ok(Comparison {
        methods: reports.iter().map(|r| r.method).collect(),
        rows,
    })
}

impl Comparison {
    /// One column pair `acc_i,delta_i` per report, in percent.
    pub fn table_csv(&self) -> String {
        let mut out = format!("{COMPARE_HEADER}\ntask");
        for (i, m) in self.methods.iter().enumerate() {
            out += &format!(",acc_{i}_{},delta_{i}", m.name());
        }
        out.push('\n');
        for row in &self.rows {
            out += &row.task;
            for (a, d) in row.accuracies.iter().zip(&row.deltas) {
                out += &format!(",{:.4},{:.4}", 100.0 * a, 100.0 * d);
            }
            out.push('\n');
        }
        out
    }
}
