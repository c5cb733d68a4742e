use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dcflow::cli::{
    format_checks, parse_dims, run_experiment, run_gen_field, run_hier_bench, run_homogenize, run_table,
    ExperimentConfig, SolverMode, BENCHMARK_HEADER,
};
use dcflow::homogenize::format_effective_table;
use dcflow::{Error, Result};

#[derive(Parser)]
#[command(name = "dcflow", version, about = "Dual-continuum unsaturated flow: fine, homogenized and multiscale solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; every section is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Solver mode for `simulate`: fine, uncoupled or coupled.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Comma-separated offline-space dimensions.
    #[arg(long, global = true)]
    dims: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fine reference plus a fine or multiscale run.
    Simulate,
    /// Cell problems and the effective coefficient table.
    Homogenize,
    /// Hierarchical versus full cell solves.
    HierBench,
    /// Coupled and uncoupled error tables with trend checks.
    Table,
    /// Channelized conductivity fields as rasters.
    GenField,
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = &cli.mode {
        cfg.solver.modes = vec![m.parse::<SolverMode>()?];
    }
    if let Some(d) = &cli.dims {
        cfg.solver.dims = parse_dims(d)?;
    }
    if let Some(o) = cli.out {
        cfg.output.dir = o;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate => {
            let out = run_experiment(&cfg, "simulate")?;
            print!("{}", out.report.to_csv());
        }
        Command::Table => {
            let (out, checks) = run_table(&cfg)?;
            print!("{}", out.report.to_csv());
            print!("{}", format_checks(&checks));
            return Ok(checks.iter().all(|c| c.pass));
        }
        Command::Homogenize => print!("{}", format_effective_table(&run_homogenize(&cfg)?)),
        Command::HierBench => {
            print!("{BENCHMARK_HEADER}");
            for (label, rows) in run_hier_bench(&cfg)? {
                print!("{}", dcflow::cli::format_benchmark(&label, &rows));
            }
        }
        Command::GenField => {
            for p in run_gen_field(&cfg)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::new().filter_level(log::LevelFilter::Info).format_timestamp(None).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
