use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fairtree::data::{generate_synthetic, grid_centers, load_csv, Dataset, Schema};
use fairtree::model_io;
use fairtree::report::{self, BenchConfig, RunReport};
use fairtree::{Algorithm, FitConfig};

/// Exit status for a fit that stopped before reaching k leaves.
const EXIT_EXHAUSTED: u8 = 3;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "fairtree", version, about = "Interpretable fair clustering trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a tree and write the model file.
    Fit(FitArgs),
    /// Assign clusters to the rows of a CSV file.
    Predict(PredictArgs),
    /// Report quality and fairness metrics of a model on a dataset.
    Evaluate(EvaluateArgs),
    /// Generate Gaussian blobs with a Bernoulli sensitive attribute.
    Synth(SynthArgs),
    /// Fit IFCT over a grid of λ values.
    Sweep(SweepArgs),
    /// Print a model as rules or as a Graphviz graph.
    Export(ExportArgs),
    /// Time IFCT fits on synthetic data of growing size.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    Ifct,
    #[value(name = "ifct-p")]
    IfctP,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV file.
    #[arg(long)]
    data: PathBuf,
    /// JSON object mapping column names to roles.
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Args)]
struct TreeArgs {
    /// Number of clusters.
    #[arg(long)]
    k: usize,
    /// Fairness weights per sensitive attribute, e.g. `gender=0.5,age=0.5`.
    #[arg(long)]
    weights: Option<String>,
    /// Standardize numerical features before fitting.
    #[arg(long)]
    standardize: bool,
    /// Largest categorical cardinality whose partitions are enumerated.
    #[arg(long, default_value_t = 12)]
    cat_cap: usize,
    /// Minimum samples in each child of a split.
    #[arg(long, default_value_t = 1)]
    n_min: usize,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    algo: Algo,
    /// Fairness trade-off; required for ifct, rejected for ifct-p.
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    tree: TreeArgs,
    #[command(flatten)]
    input: DataArgs,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the run report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Record the current time in the model file.
    #[arg(long)]
    timestamp: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Send unseen categories right instead of failing.
    #[arg(long)]
    permissive_predict: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: DataArgs,
    /// Write the report as JSON to this file.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    permissive_predict: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of blobs, laid out on a square grid.
    #[arg(long, default_value_t = 4)]
    blobs: usize,
    /// Points per blob.
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Probability of sensitive group 1.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    stddev: f64,
    /// Distance between neighbouring blob centers.
    #[arg(long, default_value_t = 10.0)]
    spacing: f64,
    /// Data CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Schema JSON to write.
    #[arg(long)]
    schema_out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    tree: TreeArgs,
    #[command(flatten)]
    input: DataArgs,
    /// Comma-separated λ values.
    #[arg(long, conflicts_with = "log_range")]
    lambdas: Option<String>,
    /// Log-spaced grid `lo,hi,count`.
    #[arg(long)]
    log_range: Option<String>,
    /// Fit grid points in parallel.
    #[arg(long)]
    parallel: bool,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Rules,
    Dot,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "rules")]
    format: ExportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated sample counts.
    #[arg(long, default_value = "4000,8000,16000")]
    sizes: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1e4)]
    lambda: f64,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("invalid {what} `{s}`")))
        .collect()
}

fn parse_weights(text: &str, ds: &Dataset) -> Result<Vec<f64>> {
    let mut weights = vec![None; ds.n_sensitive()];
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("weight `{part}` is not of the form name=value"))?;
        let u = ds
            .sens_names()
            .iter()
            .position(|n| n == name.trim())
            .ok_or_else(|| anyhow!("`{}` is not a sensitive attribute", name.trim()))?;
        let v: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("invalid weight `{value}`"))?;
        if weights[u].replace(v).is_some() {
            bail!("weight for `{}` given twice", name.trim());
        }
    }
    weights
        .into_iter()
        .zip(ds.sens_names())
        .map(|(w, name)| w.ok_or_else(|| anyhow!("no weight given for sensitive attribute `{name}`")))
        .collect()
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let schema =
        Schema::from_json_file(&args.schema).with_context(|| format!("reading schema {}", args.schema.display()))?;
    load_csv(&args.data, &schema).with_context(|| format!("reading data {}", args.data.display()))
}

fn fit_config(args: &TreeArgs, lambda: f64, ds: &Dataset) -> Result<FitConfig> {
    Ok(FitConfig {
        k: args.k,
        lambda,
        weights: args.weights.as_deref().map(|w| parse_weights(w, ds)).transpose()?,
        n_min: args.n_min,
        cat_cap: args.cat_cap,
        standardize: args.standardize,
        ..FitConfig::default()
    })
}

fn write_or_print(path: Option<&Path>, text: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            match std::io::stdout().write_all(text) {
                // downstream closed early, e.g. `| head`
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => Ok(r?),
            }
        }
    }
}

fn cmd_fit(args: FitArgs) -> Result<u8> {
    let (algorithm, lambda) = match (args.algo, args.lambda) {
        (Algo::Ifct, Some(l)) => (Algorithm::Ifct, l),
        (Algo::Ifct, None) => bail!("--lambda is required for --algo ifct"),
        (Algo::IfctP, Some(_)) => bail!("--algo ifct-p has no fairness parameter; drop --lambda"),
        (Algo::IfctP, None) => (Algorithm::IfctP, 0.0),
    };
    let ds = load_data(&args.input)?;
    let cfg = fit_config(&args.tree, lambda, &ds)?;
    let (mut tree, seconds) = report::fit_timed(&ds, &cfg, algorithm)?;
    if args.timestamp {
        let now = SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs();
        tree.set_timestamp(Some(now));
    }
    model_io::save_file(&tree, &args.out).with_context(|| format!("writing model {}", args.out.display()))?;
    let rep = RunReport::from_fit(&tree, &ds, Some(seconds))?;
    if let Some(path) = &args.report {
        fs::write(path, rep.to_json() + "\n").with_context(|| format!("writing report {}", path.display()))?;
    }
    print!("{}", rep.to_text());
    if tree.exhausted() {
        eprintln!(
            "warning: no leaf admits a feasible split; stopped at {} of {} clusters",
            tree.k(),
            cfg.k
        );
        return Ok(EXIT_EXHAUSTED);
    }
    Ok(0)
}

fn cmd_predict(args: PredictArgs) -> Result<u8> {
    let tree = model_io::load_file(&args.model).with_context(|| format!("reading model {}", args.model.display()))?;
    let bytes = fs::read(&args.data).with_context(|| format!("reading data {}", args.data.display()))?;
    let pred = model_io::predict_batch(&tree, &bytes, args.permissive_predict)?;
    write_or_print(args.out.as_deref(), &pred.csv)?;
    Ok(0)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<u8> {
    let tree = model_io::load_file(&args.model).with_context(|| format!("reading model {}", args.model.display()))?;
    let ds = load_data(&args.input)?;
    let rep = report::evaluate(&tree, &ds, args.permissive_predict)?;
    if let Some(path) = &args.report {
        fs::write(path, rep.to_json() + "\n").with_context(|| format!("writing report {}", path.display()))?;
    }
    print!("{}", rep.to_text());
    Ok(0)
}

fn cmd_synth(args: SynthArgs) -> Result<u8> {
    let ds = generate_synthetic(
        args.n,
        &grid_centers(args.blobs, args.spacing),
        args.stddev,
        args.p,
        args.seed,
    )?;
    let mut csv = Vec::new();
    ds.write_csv(&mut csv)?;
    fs::write(&args.out, csv).with_context(|| format!("writing {}", args.out.display()))?;
    fs::write(&args.schema_out, ds.schema().to_json_string() + "\n")
        .with_context(|| format!("writing {}", args.schema_out.display()))?;
    eprintln!("wrote {} rows to {}", ds.n(), args.out.display());
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<u8> {
    let grid = match (&args.lambdas, &args.log_range) {
        (Some(list), None) => parse_list(list, "lambda")?,
        (None, Some(range)) => {
            let v = parse_list(range, "log range bound")?;
            let [lo, hi, count] = v[..] else {
                bail!("--log-range expects lo,hi,count");
            };
            if count < 1.0 || count.fract() != 0.0 {
                bail!("--log-range count must be a positive integer");
            }
            report::log_grid(lo, hi, count as usize)?
        }
        _ => bail!("give the λ grid with --lambdas or --log-range"),
    };
    if grid.is_empty() {
        bail!("the λ grid is empty");
    }
    let ds = load_data(&args.input)?;
    let cfg = fit_config(&args.tree, 0.0, &ds)?;
    let rows = report::sweep(&ds, &cfg, &grid, args.parallel)?;
    write_or_print(args.out.as_deref(), report::sweep_csv(&rows).as_bytes())?;
    Ok(0)
}

fn cmd_export(args: ExportArgs) -> Result<u8> {
    let tree = model_io::load_file(&args.model).with_context(|| format!("reading model {}", args.model.display()))?;
    let text = match args.format {
        ExportFormat::Rules => model_io::export_rules(&tree),
        ExportFormat::Dot => model_io::export_dot(&tree),
    };
    write_or_print(args.out.as_deref(), text.as_bytes())?;
    Ok(0)
}

fn cmd_bench(args: BenchArgs) -> Result<u8> {
    let sizes = parse_list(&args.sizes, "size")?
        .into_iter()
        .map(|s| {
            if s >= 1.0 && s.fract() == 0.0 {
                Ok(s as usize)
            } else {
                Err(anyhow!("sizes must be positive integers"))
            }
        })
        .collect::<Result<Vec<usize>>>()?;
    let rows = report::bench(&BenchConfig {
        sizes,
        k: args.k,
        lambda: args.lambda,
        repeats: args.repeats,
        seed: args.seed,
        ..BenchConfig::default()
    })?;
    write_or_print(args.out.as_deref(), report::bench_csv(&rows).as_bytes())?;
    Ok(0)
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("FAIRTREE_THREADS") {
        let n: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| anyhow!("FAIRTREE_THREADS must be a positive integer, got `{value}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Export(a) => cmd_export(a),
        Command::Bench(a) => cmd_bench(a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
