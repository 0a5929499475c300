//! `netaipw`: simulate chain-graph network data, run Monte Carlo accuracy
//! tables, and estimate network causal effects on observed data.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netaipw::estimator::{EstimandKind, EvaluationMode};
use netaipw::harness::Scenario;

use crate::config::{AnalyzeConfig, McConfig, SimulateConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "netaipw", version, about = "Doubly robust causal effect estimation on networks")]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a network and Gibbs-sampled datasets.
    Simulate(SimulateArgs),
    /// Run the Monte Carlo accuracy and coverage study.
    Mc(McArgs),
    /// Estimate causal effects from an edge list and a node table.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// TOML file with simulate settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of nodes.
    #[arg(long)]
    n: Option<usize>,
    /// Edges added per new node in the attachment process.
    #[arg(long)]
    m: Option<usize>,
    /// Degree cap of the generated network.
    #[arg(long)]
    max_degree: Option<usize>,
    /// Total Gibbs iterations.
    #[arg(long)]
    n_iter: Option<usize>,
    /// Iterations discarded before the first dataset is written.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Keep every thin-th post-burn-in iteration.
    #[arg(long)]
    thin: Option<usize>,
    /// Seed of the Gibbs chain.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the network generator.
    #[arg(long)]
    network_seed: Option<u64>,
    /// Directory for edges.txt and nodes_NNNN.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct McArgs {
    /// TOML file with study settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cells as `m:max_degree`, e.g. `--cell 1:2 --cell 3:10`.
    #[arg(long = "cell", value_parser = parse_cell)]
    cells: Vec<[usize; 2]>,
    /// Nuisance scenario (repeatable): both-correct, misspecified-outcome, misspecified-propensity.
    #[arg(long = "scenario")]
    scenarios: Vec<Scenario>,
    /// Estimand (repeatable): gamma, de, ie, ie2.
    #[arg(long = "estimand")]
    estimands: Vec<EstimandKind>,
    /// Nodes per network.
    #[arg(long)]
    n: Option<usize>,
    /// Replicate datasets per cell and scenario.
    #[arg(long)]
    replicates: Option<usize>,
    /// Gibbs iterations before the first replicate.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Seed of the data chain and estimation.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the network generator.
    #[arg(long)]
    network_seed: Option<u64>,
    /// HAC bandwidth (default: derived from k).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Redraw the network for every replicate.
    #[arg(long)]
    redraw_network: bool,
    /// Skip the Auto-G baseline.
    #[arg(long)]
    no_auto_g: bool,
    /// Apply the nuisance-estimation correction to the unit scores.
    #[arg(long)]
    if_correction: bool,
    /// Drop per-replicate traces from the JSON report.
    #[arg(long)]
    no_traces: bool,
    /// Full report path.
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Summary table path.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// TOML file with analysis settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Edge list: one whitespace-separated pair of node ids per line, `#` comments.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Node table CSV with columns id, y, a and covariates.
    #[arg(long)]
    nodes: Option<PathBuf>,
    /// Covariate column to use (repeatable); all other columns by default.
    #[arg(long = "covariate")]
    covariates: Vec<String>,
    /// Estimand (repeatable): gamma, de, ie, ie2.
    #[arg(long = "estimand")]
    estimands: Vec<EstimandKind>,
    /// Treatment probability of the counterfactual allocation.
    #[arg(long)]
    alpha: Option<f64>,
    /// Comparison allocation for ie2.
    #[arg(long)]
    alpha_prime: Option<f64>,
    /// Neighborhood radius of the propensity model.
    #[arg(long)]
    k: Option<usize>,
    /// HAC bandwidth (default: derived from k).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Confidence level of the intervals.
    #[arg(long)]
    level: Option<f64>,
    /// Average over sampled allocations instead of exact summation.
    #[arg(long)]
    monte_carlo: Option<usize>,
    /// Largest neighborhood whose propensities are enumerated exactly.
    #[arg(long)]
    enumeration_cap: Option<usize>,
    /// Seed for Monte Carlo propensities and allocations.
    #[arg(long)]
    seed: Option<u64>,
    /// Apply the nuisance-estimation correction to the unit scores.
    #[arg(long)]
    if_correction: bool,
    /// Report path.
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Optional summary table path.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

fn parse_cell(s: &str) -> Result<[usize; 2], String> {
    let (m, d) = s.split_once(':').ok_or("expected m:max_degree")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    Ok([parse(m)?, parse(d)?])
}

macro_rules! set {
    ($cfg:ident, $args:ident: $($field:ident),+) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })+
    };
}

fn run_simulate(args: SimulateArgs) -> CliResult<()> {
    let mut cfg: SimulateConfig = config::load(args.config.as_deref())?;
    set!(cfg, args: n, m, max_degree, n_iter, burn_in, thin, seed, network_seed, out_dir);
    let out = commands::simulate(&cfg)?;
    println!("{} ({} dataset(s))", out.edges.display(), out.nodes.len());
    Ok(())
}

fn run_mc(args: McArgs) -> CliResult<()> {
    let mut cfg: McConfig = config::load(args.config.as_deref())?;
    set!(cfg, args: n, replicates, burn_in, seed, network_seed, out_json, out_csv);
    if !args.cells.is_empty() {
        cfg.cells = args.cells;
    }
    if !args.scenarios.is_empty() {
        cfg.scenarios = args.scenarios;
    }
    if !args.estimands.is_empty() {
        cfg.estimands = args.estimands;
    }
    if args.bandwidth.is_some() {
        cfg.bandwidth = args.bandwidth;
    }
    cfg.redraw_network |= args.redraw_network;
    cfg.auto_g &= !args.no_auto_g;
    cfg.if_correction |= args.if_correction;
    cfg.traces &= !args.no_traces;
    let (report, rows) = commands::mc(&cfg)?;
    io::write_json(&cfg.out_json, &report)?;
    io::write_csv(&cfg.out_csv, &rows)?;
    println!("{} rows -> {}", rows.len(), cfg.out_csv.display());
    Ok(())
}

fn run_analyze(args: AnalyzeArgs) -> CliResult<()> {
    let mut cfg: AnalyzeConfig = config::load(args.config.as_deref())?;
    set!(cfg, args: edges, nodes, alpha, alpha_prime, k, level, enumeration_cap, seed, out_json);
    if !args.covariates.is_empty() {
        cfg.covariates = Some(args.covariates);
    }
    if !args.estimands.is_empty() {
        cfg.estimands = args.estimands;
    }
    if args.bandwidth.is_some() {
        cfg.bandwidth = args.bandwidth;
    }
    if let Some(draws) = args.monte_carlo {
        cfg.mode = EvaluationMode::MonteCarlo;
        cfg.mc_draws = draws;
    }
    if args.out_csv.is_some() {
        cfg.out_csv = args.out_csv;
    }
    cfg.if_correction |= args.if_correction;
    let report = commands::analyze(&cfg)?;
    io::write_json(&cfg.out_json, &report)?;
    if let Some(path) = &cfg.out_csv {
        io::write_csv(path, &report.rows())?;
    }
    for row in report.rows() {
        let ci = match (row.ci_lo, row.ci_hi) {
            (Some(lo), Some(hi)) => format!("[{lo:.4}, {hi:.4}]"),
            _ => "-".into(),
        };
        println!("{:<6} {:>9.4}  {ci}", row.estimand.label(), row.point);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Mc(a) => run_mc(a),
        Command::Analyze(a) => run_analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(inner) = &e {
                log::debug!("{inner:?}");
            }
            ExitCode::FAILURE
        }
    }
}
