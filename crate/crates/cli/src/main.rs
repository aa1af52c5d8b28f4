use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use stylepad::dataio::{save_dataset, synth_benchmark_generate, SynthBenchSpec};
use stylepad::pipeline::{
    compare_methods, export_embeddings, run_seeds, ExperimentConfig, Method, Precision, Run,
    RunReport, Space, Stage,
};
use stylepad::Error;

#[derive(Parser)]
#[command(name = "stylepad", version, about = "Style-fused diffusion padding for time-series domain generalization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark, or split and normalize a dataset.
    Prepare(PrepareArgs),
    /// Pretrain the contrastive style encoder and extract style vectors.
    PretrainStyle(StyleArgs),
    /// Train the conditional denoiser.
    TrainDiffusion(DiffusionArgs),
    /// Sample the synthetic training split.
    Generate(GenerateArgs),
    /// Train the classifier.
    TrainTsc(TscArgs),
    /// Evaluate the classifier on the held-out domain.
    Eval(EvalArgs),
    /// Run every stage in order.
    Pipeline(PipelineArgs),
    /// Export latent vectors as CSV.
    ExportEmbeddings(ExportArgs),
    /// Align run reports by task and print accuracy deltas.
    Compare(CompareArgs),
}

/// Options shared by every stage command. Flags override the config file.
#[derive(Args, Clone)]
struct Common {
    /// Experiment config (flat TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Held-out target domain.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    common: Common,
    /// Write the synthetic multi-domain benchmark to `--out` instead.
    #[arg(long)]
    synth_bench: bool,
    /// Benchmark windows per (class, domain).
    #[arg(long, default_value_t = 40)]
    samples: usize,
    /// Benchmark generator seed.
    #[arg(long, default_value_t = 0)]
    bench_seed: u64,
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Args)]
struct StyleArgs {
    #[command(flatten)]
    common: Common,
    /// Style vector length.
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct DiffusionArgs {
    #[command(flatten)]
    common: Common,
    /// Number of diffusion steps.
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Condition dropout probability.
    #[arg(long)]
    drop: Option<f64>,
    /// Optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    kappa: Option<f64>,
    /// Maximum number of fused styles.
    #[arg(long)]
    o: Option<usize>,
    /// Guidance scale.
    #[arg(long)]
    omega: Option<f64>,
}

#[derive(Args)]
struct TscArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    epochs: Option<usize>,
    /// di2sdiff or erm.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Also copy the report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    /// Skip stages whose inputs and outputs are unchanged.
    #[arg(long)]
    resume: bool,
    /// Comma-separated seeds; each runs in `<out>/seed<N>`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// di2sdiff or erm.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    /// class, domain or style.
    #[arg(long)]
    space: String,
    /// Output CSV; defaults to `<out>/embeddings_<space>.csv`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Run reports (`run_report.json`); deltas are taken against the last.
    #[arg(required = true, num_args = 2..)]
    reports: Vec<PathBuf>,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Log sink writing to stderr and, once a run directory is known, to its
/// log file.
struct Tee {
    file: Mutex<Option<(File, PathBuf)>>,
}

static TEE: Tee = Tee { file: Mutex::new(None) };

fn log_path() -> Option<PathBuf> {
    TEE.file.lock().unwrap().as_ref().map(|(_, p)| p.clone())
}

struct TeeWriter;

impl Write for TeeWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if let Some((f, _)) = TEE.file.lock().unwrap().as_mut() {
            f.write_all(buf)?;
        }
        io::stderr().write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        if let Some((f, _)) = TEE.file.lock().unwrap().as_mut() {
            f.flush()?;
        }
        io::stderr().flush()
    }
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Pipe(Box::new(TeeWriter)))
        .format_timestamp(None)
        .init();
}

fn log_to(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening log {}", path.display()))?;
    *TEE.file.lock().unwrap() = Some((file, path.to_path_buf()));
    Ok(())
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn parse_method(s: &str) -> Result<Method> {
    match s {
        "di2sdiff" => Ok(Method::Di2sdiff),
        "erm" => Ok(Method::Erm),
        other => Err(config_error(format!("unknown method `{other}` (expected di2sdiff or erm)"))),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut c = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    c.apply_env()?;
    if let Some(v) = &common.dataset {
        c.dataset = v.clone();
    }
    if let Some(v) = &common.target {
        c.target = v.clone();
    }
    if let Some(v) = common.seed {
        c.seed = v;
    }
    if let Some(v) = &common.out {
        c.out_dir = v.clone();
    }
    if let Some(v) = &common.precision {
        c.precision = match v.as_str() {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => return Err(config_error(format!("unknown precision `{other}`"))),
        };
    }
    Ok(c)
}

fn run_stage(config: ExperimentConfig, stage: Stage) -> Result<Run> {
    config.validate()?;
    let run = Run::new(config);
    log_to(&run.layout.log())?;
    run.execute_stage(stage)?;
    Ok(run)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn prepare(args: PrepareArgs) -> Result<()> {
    if args.synth_bench {
        let out = args
            .common
            .out
            .clone()
            .ok_or_else(|| config_error("--synth-bench needs --out"))?;
        let spec = SynthBenchSpec {
            samples_per_class_per_domain: args.samples,
            seed: args.bench_seed,
            ..SynthBenchSpec::default()
        };
        let dataset = synth_benchmark_generate::<f64>(&spec)?;
        let manifest = save_dataset(&out, &dataset)?;
        println!("{}", manifest.display());
        return Ok(());
    }
    let mut c = load_config(&args.common)?;
    set(&mut c.fraction, args.fraction);
    run_stage(c, Stage::Prepare)?;
    Ok(())
}

fn pipeline(args: PipelineArgs) -> Result<()> {
    let mut c = load_config(&args.common)?;
    if let Some(m) = &args.method {
        c.method = parse_method(m)?;
    }
    c.validate()?;
    let seeds = if args.seeds.is_empty() { vec![c.seed] } else { args.seeds.clone() };
    log_to(&c.out_dir.join("pipeline.log"))?;
    let report = if args.seeds.is_empty() {
        // A single run lives directly in the output directory.
        let start = std::time::Instant::now();
        let r = stylepad::pipeline::run_pipeline(&c, args.resume)?;
        RunReport::aggregate(&[r], &c.sweep_hash(), start.elapsed().as_secs_f64())?
    } else {
        run_seeds(&c, &seeds, args.resume)?
    };
    let json = c.out_dir.join("run_report.json");
    report.save(&json)?;
    let table = report.table_csv();
    let csv = c.out_dir.join("accuracy.csv");
    fs::write(&csv, &table).with_context(|| format!("writing {}", csv.display()))?;
    print!("{table}");
    info!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| RunReport::load(p))
        .collect::<stylepad::Result<Vec<_>>>()?;
    let table = compare_methods(&reports)
        .map_err(|e| config_error(e.to_string()))?
        .table_csv();
    if let Some(out) = &args.out {
        fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{table}");
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Prepare(args) => prepare(args),
        Command::PretrainStyle(args) => {
            let mut c = load_config(&args.common)?;
            set(&mut c.style_h, args.h);
            set(&mut c.style_epochs, args.epochs);
            set(&mut c.style_lr, args.lr);
            run_stage(c, Stage::PretrainStyle).map(drop)
        }
        Command::TrainDiffusion(args) => {
            let mut c = load_config(&args.common)?;
            set(&mut c.diffusion_t, args.t);
            set(&mut c.diffusion_lr, args.lr);
            set(&mut c.diffusion_batch, args.batch);
            set(&mut c.diffusion_p_drop, args.drop);
            set(&mut c.diffusion_steps, args.steps);
            run_stage(c, Stage::TrainDiffusion).map(drop)
        }
        Command::Generate(args) => {
            let mut c = load_config(&args.common)?;
            set(&mut c.kappa, args.kappa);
            set(&mut c.o, args.o);
            set(&mut c.diffusion_omega, args.omega);
            run_stage(c, Stage::Generate).map(drop)
        }
        Command::TrainTsc(args) => {
            let mut c = load_config(&args.common)?;
            set(&mut c.tsc_epochs, args.epochs);
            set(&mut c.kappa, args.kappa);
            if let Some(m) = &args.method {
                c.method = parse_method(m)?;
            }
            run_stage(c, Stage::TrainTsc).map(drop)
        }
        Command::Eval(args) => {
            let c = load_config(&args.common)?;
            let run = run_stage(c, Stage::Eval)?;
            let report = run.layout.report();
            print!("{}", fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?);
            if let Some(dest) = &args.report {
                fs::copy(&report, dest).with_context(|| format!("copying report to {}", dest.display()))?;
            }
            Ok(())
        }
        Command::Pipeline(args) => pipeline(args),
        Command::ExportEmbeddings(args) => {
            let c = load_config(&args.common)?;
            let space: Space = args.space.parse()?;
            let run = Run::new(c);
            let out = args
                .output
                .clone()
                .unwrap_or_else(|| run.layout.dir.join(format!("embeddings_{}.csv", args.space)));
            let rows = export_embeddings(&run, space, &out)?;
            println!("{rows} rows -> {}", out.display());
            Ok(())
        }
        Command::Compare(args) => compare(args),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            match err.downcast_ref::<Error>() {
                Some(Error::Stage { stage, source }) => {
                    let log = log_path().map(|p| p.display().to_string()).unwrap_or_else(|| "stderr".into());
                    eprintln!("error: stage {stage} failed: {source}\nlog: {log}");
                }
                _ => eprintln!("error: {err:#}"),
            }
            ExitCode::from(code)
        }
    }
}
