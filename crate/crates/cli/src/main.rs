mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (schema v1)");

/// Food-access proximity, measurement-error correction and simulation.
#[derive(Debug, Parser)]
#[command(name = "foodprox", version = VERSION, about)]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// TOML file with default values for any flag. Flags given on the command
    /// line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a proximity table: straight-line for every neighborhood, map-based
    /// for the queried ones.
    Distances(DistancesArgs),
    /// Write completed datasets with map proximity imputed for unqueried rows.
    Impute(ImputeArgs),
    /// Fit the four analysis strategies and report prevalence ratios.
    Analyze(AnalyzeArgs),
    /// Run a grid of simulation scenarios and write their metrics.
    Simulate(SimulateArgs),
    /// Write the bundled three-county example region to a directory.
    Example(ExampleArgs),
}

#[derive(Debug, Args)]
struct DistancesArgs {
    /// CSV with `id,lat,lon,population,cases,metro,county`.
    #[arg(long)]
    neighborhoods: PathBuf,
    /// CSV with `id,lat,lon,category`.
    #[arg(long)]
    stores: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `synthetic:factor=F`, `file:PATH` (origin_id,store_id,miles) or `remote:URL`.
    #[arg(long)]
    provider: Option<String>,
    /// Which neighborhoods get map proximity: `all`, `none`, `file:PATH` (one id
    /// per line) or `stratified:K` (K per county).
    #[arg(long)]
    query: Option<String>,
    /// Share of nearest stores (by straight line) sent to the provider.
    #[arg(long)]
    percentile: Option<f64>,
    /// Earth radius in miles.
    #[arg(long)]
    radius: Option<f64>,
    /// Seed for `stratified:K` sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum outbound requests for a remote provider.
    #[arg(long)]
    budget: Option<usize>,
    /// Minimum milliseconds between remote requests.
    #[arg(long)]
    throttle_ms: Option<u64>,
    /// Remote request timeout in seconds.
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Persistent cache of remote pair distances.
    #[arg(long, value_name = "PATH")]
    cache: Option<PathBuf>,
    /// Also write every queried pair distance (local providers only).
    #[arg(long, value_name = "PATH")]
    pairs_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Proximity CSV with `id,x_star,x,queried`.
    #[arg(long)]
    proximity: PathBuf,
    /// CSV with `id,lat,lon,population,cases,metro,county`.
    #[arg(long)]
    neighborhoods: PathBuf,
}

#[derive(Debug, Args)]
struct ImputationArgs {
    /// Number of imputations.
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hold the imputation model parameters fixed instead of redrawing them
    /// for every imputation.
    #[arg(long)]
    improper: bool,
    /// Use log(cases + C) in the imputation model so zero counts are allowed.
    #[arg(long, value_name = "C")]
    log_shift: Option<f64>,
    /// Leave the proximity-by-covariate products out of the imputation model.
    #[arg(long)]
    no_impute_interaction: bool,
    /// Comma-separated covariates, or `none`. Defaults to every covariate.
    #[arg(long)]
    covariates: Option<String>,
}

#[derive(Debug, Args)]
struct ImputeArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    imputation: ImputationArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    imputation: ImputationArgs,
    /// Covariates that also enter as a product with proximity, comma-separated
    /// or `none`. Defaults to the covariates.
    #[arg(long)]
    interactions: Option<String>,
    /// Edge list `id_a,id_b` for the Moran's I residual diagnostic.
    #[arg(long)]
    adjacency: Option<PathBuf>,
    /// `row` (row-standardized) or `binary` spatial weights.
    #[arg(long)]
    weighting: Option<String>,
    /// `randomization`, `normality` or `permutation[:N]`.
    #[arg(long)]
    inference: Option<String>,
    /// Confidence level.
    #[arg(long)]
    level: Option<f64>,
    /// `normal` or `barnard-rubin` reference distribution for pooled intervals.
    #[arg(long)]
    reference: Option<String>,
    /// Report CSV; the text table goes to standard output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Grid file, or a bundled grid: table1, table2, table3, table4, smoke.
    #[arg(long)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
    /// Override the replicate count of every scenario.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override every scenario with fixed imputation parameters.
    #[arg(long)]
    improper: bool,
    /// Override the reference distribution of every scenario.
    #[arg(long)]
    reference: Option<String>,
    /// Directory for per-replicate estimates, one CSV per scenario.
    #[arg(long, value_name = "DIR")]
    replicates_dir: Option<PathBuf>,
    /// Directory for every simulated dataset, one subdirectory per scenario.
    #[arg(long, value_name = "DIR")]
    dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExampleArgs {
    dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = FileConfig::load(cli.config.as_deref()).and_then(|file| {
        let threads = cli.threads.or(file.threads).unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| commands::Failure::Internal(e.to_string()))?;
        match &cli.command {
            Command::Distances(a) => commands::distances(a, &file),
            Command::Impute(a) => commands::impute(a, &file),
            Command::Analyze(a) => commands::analyze(a, &file),
            Command::Simulate(a) => commands::simulate(a, &file),
            Command::Example(a) => commands::example(a),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
