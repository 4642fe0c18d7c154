//! Experiment CLI: batch drivers plus a single-instance solver.
//!
//! Exit codes: 0 on success, 2 on configuration/usage errors, 3 on
//! numerical failure (a failed experiment run, or `solve-one` ending in
//! numerical breakdown). Individual failed trials inside a batch are data,
//! not errors — they land in the row files with their status.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use falcon::channel::ChannelSet;
use falcon::error::Error;
use falcon::falcon::FalconConfig;
use falcon::harness::{
    render_files, run_experiment, summarize, write_files, ExperimentConfig, ExperimentKind,
    OutputFormat, DEFAULT_PATHS,
};
use falcon::{run_falcon, RunStatus};

#[derive(Parser)]
#[command(
    name = "falcon",
    version,
    about = "Rate-splitting downlink precoder experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte Carlo feasibility tables over fresh channel draws
    Feasibility(RunArgs),
    /// Per-iteration objective traces on one seeded instance
    Converge(RunArgs),
    /// Two-user rate-region boundaries (with/without unicast common parts)
    RateRegion(RunArgs),
    /// Hybrid vs fully-digital comparison across user counts
    HybridCompare(RunArgs),
    /// Wall-clock and feasibility per user count
    Timing(RunArgs),
    /// Solve one seeded instance and print the solution JSON
    SolveOne(SolveArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; every key is optional (defaults per subcommand)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed_base
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for row/aggregate/metadata files
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Override the config's trial count
    #[arg(long)]
    trials: Option<usize>,
    /// Row-file format (aggregates and metadata stay CSV/JSON)
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct SolveArgs {
    /// TOML config file providing scenario/precoder/mode
    #[arg(long)]
    config: Option<PathBuf>,
    /// Channel seed (defaults to the config's seed_base)
    #[arg(long)]
    seed: Option<u64>,
    /// Write the solution JSON here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

/// Prints to stdout, treating a closed pipe (`falcon ... | head`) as a
/// normal end of output instead of a panic.
fn print_out(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            panic!("failed writing to stdout: {e}");
        }
    }
}

fn load_config(kind: ExperimentKind, path: &Option<PathBuf>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default_for(kind),
    };
    cfg.experiment = kind;
    Ok(cfg)
}

fn run_batch(kind: ExperimentKind, args: &RunArgs) -> Result<(), Error> {
    let mut cfg = load_config(kind, &args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed_base = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    cfg.validate()?;
    let record = run_experiment(&cfg)?;
    let files = render_files(&record, args.format.into());
    write_files(&files, &args.out)?;
    print_out(&summarize(&record));
    print_out(&format!("wrote {} files to {}\n", files.len(), args.out.display()));
    Ok(())
}

fn run_solve_one(args: &SolveArgs) -> Result<RunStatus, Error> {
    let cfg = load_config(ExperimentKind::Feasibility, &args.config)?;
    let seed = args.seed.unwrap_or(cfg.seed_base);
    let sc = &cfg.scenario;
    let channels = ChannelSet::saleh_valenzuela(seed, sc.n_tx, sc.k_users, DEFAULT_PATHS)?;
    let analog = cfg.precoder.build(&channels, seed)?;
    let params = sc.params(sc.k_users)?;
    let solver = FalconConfig {
        mode: cfg.mode,
        ..FalconConfig::default()
    };
    let sol = run_falcon(&channels, &analog, &params, &solver)?;
    eprintln!(
        "seed {seed}: status {}, wsr {:.6}, {} iterations",
        sol.status.label(),
        sol.wsr,
        sol.iterations_used
    );
    match &args.out {
        Some(p) => std::fs::write(p, sol.to_json())?,
        None => print_out(&format!("{}\n", sol.to_json())),
    }
    Ok(sol.status)
}

fn main() {
    let cli = Cli::parse();
    let outcome: Result<RunStatus, Error> = match &cli.cmd {
        Cmd::Feasibility(a) => run_batch(ExperimentKind::Feasibility, a).map(|_| RunStatus::Converged),
        Cmd::Converge(a) => run_batch(ExperimentKind::Convergence, a).map(|_| RunStatus::Converged),
        Cmd::RateRegion(a) => run_batch(ExperimentKind::RateRegion, a).map(|_| RunStatus::Converged),
        Cmd::HybridCompare(a) => {
            run_batch(ExperimentKind::HybridCompare, a).map(|_| RunStatus::Converged)
        }
        Cmd::Timing(a) => run_batch(ExperimentKind::Timing, a).map(|_| RunStatus::Converged),
        Cmd::SolveOne(a) => run_solve_one(a),
    };
    let code = match outcome {
        Ok(RunStatus::NumericalFailure) => 3,
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) => 3,
                _ => 2,
            }
        }
    };
    std::process::exit(code);
}
