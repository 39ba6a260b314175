use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use selclass::io::{
    generate_synthetic, load_artifact, load_dataset, save_artifact, save_dataset, save_text, split,
    Distortion, SplitSpec, SyntheticModelSpec,
};
use selclass::metrics::{rc_curve, MetricReport};
use selclass::tuning::{
    apply_fallback, data_efficiency_sweep, tune_methods, GridSpec, Method, SweepConfig, TuneResult,
};
use selclass::{export_confidence_histogram, run_benchmark, Dataset, Error, Result, RunConfig};

#[derive(Parser)]
#[command(name = "selclass", version, about = "Post-hoc confidence estimators for selective classification")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune an estimator on a dataset (or its tuning split) and save it.
    Tune(TuneArgs),
    /// Score a dataset (or its test split) with a saved estimator.
    Evaluate(EvalArgs),
    /// Tune and evaluate many methods on many models over repeated splits.
    Benchmark(BenchArgs),
    /// Export the risk-coverage curve as two-column text.
    RcCurve(CurveArgs),
    /// Write a synthetic logits dataset.
    Synth(SynthArgs),
    /// Test NAURC as a function of the tuning-set size.
    Sweep(SweepArgs),
    /// Export an equal-width histogram of confidence scores.
    Histogram(HistArgs),
}

#[derive(Args)]
struct SplitArgs {
    /// Use a random tuning/test split with this many tuning samples.
    #[arg(long)]
    tuning_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Which split repetition to use.
    #[arg(long, default_value_t = 0)]
    repetition: usize,
}

impl SplitArgs {
    /// `(tuning, test)` parts, or the whole dataset twice without a split.
    fn apply(&self, ds: Dataset) -> Result<(Dataset, Dataset)> {
        let Some(tuning_size) = self.tuning_size else {
            return Ok((ds.clone(), ds));
        };
        let spec = SplitSpec {
            tuning_size,
            seed: self.seed,
            repetitions: self.repetition + 1,
        };
        let parts = split(ds.len(), &spec, self.repetition)?;
        Ok((ds.select(&parts.tuning)?, ds.select(&parts.test)?))
    }
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    data: PathBuf,
    /// msp, softmax-margin, max-logit, logits-margin, neg-entropy, neg-gini, ets, bk or hts.
    #[arg(long)]
    method: String,
    /// raw, ts or pnorm.
    #[arg(long, default_value = "raw")]
    transform: String,
    /// nll or aurc (temperature scaling only).
    #[arg(long)]
    objective: Option<String>,
    #[command(flatten)]
    split: SplitArgs,
    /// TOML file overriding the search grids.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Keep the tuned estimator only if it beats MSP by more than this AURC.
    #[arg(long, default_value_t = 0.0)]
    fallback_epsilon: f64,
    #[arg(long)]
    no_fallback: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// Target accuracies for selective accuracy constraint coverage.
    #[arg(long, value_delimiter = ',')]
    sac: Vec<f64>,
    /// Evaluate only on the test part of this split.
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One dataset file per model.
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    /// Text table output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full JSON report with per-split records.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    c: usize,
    /// none, norm-inflation or underconfidence.
    #[arg(long, default_value = "none")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.75)]
    accuracy: f64,
    #[arg(long, default_value_t = 0.0)]
    norm_mu: f64,
    #[arg(long, default_value_t = 1.0)]
    norm_sigma: f64,
    #[arg(long, default_value_t = 2.0)]
    underconfidence: f64,
    /// Output file; `.csv` is written as CSV, anything else as raw binary.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Method name such as `max-logit-pnorm` or `msp-ts-aurc`.
    #[arg(long)]
    method: String,
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Tuning/test split of the data file; the test part stays fixed.
    #[arg(long, default_value_t = 5000)]
    tuning_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    fallback_epsilon: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HistArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_grid(path: Option<&Path>) -> Result<GridSpec> {
    let Some(path) = path else {
        return Ok(GridSpec::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let grid: GridSpec = toml::from_str(&text).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        reason: e.to_string(),
    })?;
    grid.validate()?;
    Ok(grid)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => save_text(text, path),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn tune(args: TuneArgs) -> Result<()> {
    let method = Method::from_parts(&args.method, &args.transform, args.objective.as_deref())?;
    if !(args.fallback_epsilon >= 0.0) {
        return Err(Error::Parameter("fallback epsilon must be non-negative".into()));
    }
    let grid = read_grid(args.grid.as_deref())?;
    let (tuning, _) = args.split.apply(load_dataset(&args.data)?)?;
    info!("tuning {} on {} samples", method.label(), tuning.len());
    let mut result = tune_methods(&[method], &tuning, &grid)?.remove(0);
    if !args.no_fallback {
        result = apply_fallback(result, args.fallback_epsilon);
    }
    eprintln!(
        "{}: {} (tuning AURC {:.6}, MSP {:.6}{})",
        method.label(),
        result.estimator,
        result.tuning_aurc,
        result.msp_tuning_aurc,
        if result.fallback_applied { ", fallback" } else { "" }
    );
    if result.diagnostics.edge_hit {
        eprintln!("warning: optimum on the edge of the search grid");
    }
    match &args.out {
        Some(path) => save_artifact(&result, path),
        None => emit(&selclass::io::to_json(&result)?, None),
    }
}

fn scored(data: &Path, spec: &Path, split: &SplitArgs) -> Result<(Dataset, selclass::ConfidenceVector)> {
    let result: TuneResult = load_artifact(spec)?;
    let (_, test) = split.apply(load_dataset(data)?)?;
    let conf = result.estimator.apply(&test.logits)?;
    Ok((test, conf))
}

fn evaluate(args: EvalArgs) -> Result<()> {
    let (test, conf) = scored(&args.data, &args.spec, &args.split)?;
    let report = MetricReport::evaluate(&conf, &test.losses(), &args.sac)?;
    match &args.out {
        Some(path) => save_artifact(&report, path)?,
        None => emit(&selclass::io::to_json(&report)?, None)?,
    }
    // NAURC is the headline metric; report its absence as an error.
    if report.naurc.is_none() {
        return Err(Error::UndefinedMetric(format!(
            "NAURC is undefined with {} errors out of {} samples",
            report.errors, report.samples
        )));
    }
    Ok(())
}

fn model_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn benchmark(args: BenchArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            RunConfig::from_toml(&text).map_err(|e| e.context(path.display().to_string()))?
        }
        None => RunConfig::default(),
    };
    let models = args
        .data
        .iter()
        .map(|p| Ok((model_name(p), load_dataset(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = run_benchmark(&config, &models)?;
    if let Some(path) = &args.report {
        save_artifact(&report, path)?;
    }
    emit(&report.to_text(), args.out.as_deref())
}

fn rc(args: CurveArgs) -> Result<()> {
    let (test, conf) = scored(&args.data, &args.spec, &args.split)?;
    emit(&rc_curve(&conf, &test.losses())?.to_text(), args.out.as_deref())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticModelSpec {
        samples: args.n,
        classes: args.c,
        accuracy: args.accuracy,
        norm_mu: args.norm_mu,
        norm_sigma: args.norm_sigma,
        distortion: args.mode.parse::<Distortion>()?,
        underconfidence: args.underconfidence,
        seed: args.seed,
    };
    let ds = generate_synthetic(&spec)?;
    let format = selclass::io::DatasetFormat::from_extension(&args.out);
    save_dataset(&ds, &args.out, format)?;
    eprintln!("wrote {} samples, accuracy {:.4}", ds.len(), ds.accuracy());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let method: Method = args.method.parse()?;
    let grid = read_grid(args.grid.as_deref())?;
    let ds = load_dataset(&args.data)?;
    let spec = SplitSpec {
        tuning_size: args.tuning_size,
        seed: args.seed,
        repetitions: 1,
    };
    let parts = split(ds.len(), &spec, 0)?;
    let (tuning, test) = (ds.select(&parts.tuning)?, ds.select(&parts.test)?);
    let config = SweepConfig {
        sizes: args.sizes,
        repetitions: args.reps,
        seed: args.seed,
        fallback_epsilon: args.fallback_epsilon,
    };
    let report = data_efficiency_sweep(method, &tuning, &test, &grid, &config)?;
    emit(&report.to_text(), args.out.as_deref())
}

fn histogram(args: HistArgs) -> Result<()> {
    let (_, conf) = scored(&args.data, &args.spec, &args.split)?;
    emit(&export_confidence_histogram(&conf, args.bins)?.to_text(), args.out.as_deref())
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::UndefinedMetric(_) => 3,
        Error::Io { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("thread pool is configured once");
    }
    let outcome = match cli.command {
        Command::Tune(a) => tune(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Benchmark(a) => benchmark(a),
        Command::RcCurve(a) => rc(a),
        Command::Synth(a) => synth(a),
        Command::Sweep(a) => sweep(a),
        Command::Histogram(a) => histogram(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
