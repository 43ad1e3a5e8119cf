use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fjt_sim::io;
use fjt_sim::{run_experiment_with, Algorithm, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "fjt", version, about = "Fractional joint transmission simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the exact DP and evaluate its policy.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Write the relative utilities and chosen budgets per state.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Write each seed's channel grid.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Train the approximate DP policy and evaluate it.
    Adp {
        #[command(flatten)]
        common: Common,
        /// Write the learned feature weights.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Evaluate the greedy, conventional and fixed-BS baselines.
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Run every configured algorithm over the E2 sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Write per-user rate CDFs.
        #[arg(long)]
        cdf: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated E2 values, W.
    #[arg(long, value_delimiter = ',')]
    e2_sweep: Option<Vec<f64>>,
    /// Comma-separated algorithms (dp, adp, greedy, conventional, fixed_bs).
    #[arg(long, value_delimiter = ',')]
    algo: Option<Vec<Algorithm>>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV path; stdout when neither this nor the config sets one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a per-frame trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Record wall times (the CSV is then no longer reproducible byte for byte).
    #[arg(long)]
    timings: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.e2_sweep {
            cfg.energy.e2 = fjt_sim::config::OneOrMany::Many(v.clone());
        }
        if let Some(a) = &self.algo {
            cfg.algorithms = a.clone();
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.display().to_string());
        }
        Ok(cfg)
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut opts = RunOptions::default();
    let (common, table, grid, weights, cdf) = match &cli.command {
        Command::Solve { common, table, grid } => (common, table, grid, &None, &None),
        Command::Adp { common, weights } => (common, &None, &None, weights, &None),
        Command::Baseline { common } => (common, &None, &None, &None, &None),
        Command::Sweep { common, cdf } => (common, &None, &None, &None, cdf),
    };
    let mut cfg = common.load()?;
    match &cli.command {
        Command::Solve { .. } => cfg.algorithms = vec![Algorithm::Dp],
        Command::Adp { .. } => cfg.algorithms = vec![Algorithm::Adp],
        Command::Baseline { .. } => {
            if common.algo.is_none() {
                cfg.algorithms.retain(|a| a.is_baseline());
                if cfg.algorithms.is_empty() {
                    cfg.algorithms = vec![Algorithm::Greedy, Algorithm::Conventional, Algorithm::FixedBs];
                }
            } else if let Some(a) = cfg.algorithms.iter().find(|a| !a.is_baseline()) {
                bail!("`{a}` is not a baseline; use greedy, conventional or fixed_bs");
            }
        }
        Command::Sweep { .. } => {}
    }
    cfg.validate()?;

    opts.trace = common.trace.is_some();
    opts.tables = table.is_some();
    opts.weights = weights.is_some();
    opts.user_rates = cdf.is_some();
    opts.timings = common.timings;
    let out = run_experiment_with(&cfg, &opts)?;

    match &cfg.output {
        Some(p) => io::write_csv(&out.records, Path::new(p))?,
        None => io::write_csv_to(&out.records, std::io::stdout().lock()).context("writing CSV to stdout")?,
    }
    if let Some(p) = &common.trace {
        io::write_traces(&out.traces, p)?;
    }
    if let Some(p) = table {
        io::write_tables(&out.tables, p)?;
    }
    if let Some(p) = weights {
        io::write_weights(&out.weights, p)?;
    }
    if let Some(p) = cdf {
        io::write_cdf(&out.records, 200, p)?;
    }
    if let Some(p) = grid {
        if let [(_, g)] = out.grids.as_slice() {
            io::write_grid(g, p)?;
        } else {
            for (seed, g) in &out.grids {
                io::write_grid(g, &io::per_seed_path(p, *seed))?;
            }
        }
    }
    Ok(())
}
