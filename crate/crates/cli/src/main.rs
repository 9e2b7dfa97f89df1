//! `orchardcast`: county almond yield modelling and climate projection.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orchardcast_core::dataset::Tech;
use orchardcast_core::projection::Rcp;
use orchardcast_core::stack::Preset;
use orchardcast_core::{Error, ErrorKind, Result};

use crate::config::{RunConfig, DEFAULT_SEED};

const THREADS_ENV: &str = "ORCHARDCAST_THREADS";

#[derive(Parser, Debug)]
#[command(name = "orchardcast", version, about = "County almond yield modelling and climate projection")]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with a planted yield model.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        noise_sd: Option<f64>,
        /// Number of projection members.
        #[arg(long)]
        members: Option<usize>,
    },
    /// Aggregate daily climate grids to county series.
    Ingest {
        #[arg(long)]
        climate_dir: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute phenology window features per county and harvest year.
    Featurize {
        #[arg(long)]
        county_daily: Option<PathBuf>,
        #[arg(long)]
        phenology: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the stacked ensemble and write a model artifact.
    Train {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        yields: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark the ensemble against the baselines.
    Evaluate {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        yields: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0.3)]
        test_frac: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Permutation importance of each design column.
    Importance {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        yields: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project county yields for every roster member under one scenario.
    Project {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Member roster (TOML).
        #[arg(long)]
        members: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        yields: Option<PathBuf>,
        #[arg(long)]
        phenology: Option<PathBuf>,
        #[arg(long, value_parser = parse_rcp)]
        rcp: Rcp,
        #[arg(long, value_parser = parse_tech)]
        tech: Tech,
        #[arg(long)]
        first_year: Option<i32>,
        #[arg(long)]
        last_year: Option<i32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Statewide ensemble summary and historical comparison.
    Summarize {
        #[arg(long = "projections", required = true, num_args = 1..)]
        projections: Vec<PathBuf>,
        #[arg(long)]
        yields: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        comparison_out: Option<PathBuf>,
    },
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_rcp(s: &str) -> std::result::Result<Rcp, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_tech(s: &str) -> std::result::Result<Tech, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Input => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Config => 4,
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    if let Command::Synth { out, seed, noise_sd, members } = cli.command {
        report(&commands::synth(commands::SynthArgs { out, seed, noise_sd, members })?);
        return Ok(());
    }
    let cfg = RunConfig::load_optional(cli.config.as_deref())?;
    match cli.command {
        Command::Synth { .. } => unreachable!(),
        Command::Ingest { climate_dir, mask, out } => {
            report(&commands::ingest(&cfg, commands::IngestArgs { climate_dir, mask, out })?);
        }
        Command::Featurize { county_daily, phenology, out } => {
            report(&commands::featurize(&cfg, commands::FeaturizeArgs { county_daily, phenology, out })?);
        }
        Command::Train { features, yields, seed, preset, out } => {
            report(&commands::train(&cfg, commands::TrainArgs { features, yields, seed, preset, out })?);
        }
        Command::Evaluate { features, yields, folds, test_frac, seed, preset, out } => {
            let (paths, table) = commands::evaluate(
                &cfg,
                commands::EvaluateArgs { features, yields, folds, test_frac, seed, preset, out },
            )?;
            print!("{table}");
            report(&paths);
        }
        Command::Importance { model, features, yields, repeats, seed, out } => {
            report(&commands::importance(
                &cfg,
                commands::ImportanceArgs { model, features, yields, repeats, seed, out },
            )?);
        }
        Command::Project { model, members, mask, yields, phenology, rcp, tech, first_year, last_year, out } => {
            report(&commands::project(
                &cfg,
                commands::ProjectArgs {
                    model,
                    members,
                    mask,
                    yields,
                    phenology,
                    rcp,
                    tech,
                    first_year,
                    last_year,
                    out,
                },
            )?);
        }
        Command::Summarize { projections, yields, out, comparison_out } => {
            let (paths, notes) =
                commands::summarize(&cfg, commands::SummarizeArgs { projections, yields, out, comparison_out })?;
            print!("{notes}");
            report(&paths);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit_code(ErrorKind::Config) } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let message = e.to_string().replace('"', "'");
            eprintln!(
                "error: kind={} code={} message=\"{}\"",
                kind.as_str(),
                exit_code(kind),
                message
            );
            ExitCode::from(exit_code(kind))
        }
    }
}
