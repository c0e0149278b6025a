//! `podlstm` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration or argument error, 3 file format
//! error, 4 numerical failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use podlstm::harness::{self, write_benchmark_csv, ExperimentConfig, REPORT_TXT};
use podlstm::metrics::mean_score;
use podlstm::Error;

#[derive(Parser)]
#[command(name = "podlstm", version, about = "POD + LSTM surrogate modelling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the parameter set and run the high-fidelity simulations.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full offline phase: simulate, reduce, build the dataset and train.
    Offline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll the surrogate out for a stored simulation, or under zero input.
    Online {
        /// Directory written by `offline`.
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        sim_id: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score the surrogate on the test split.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the high-fidelity model against the surrogate over a size sweep.
    Benchmark {
        /// Experiment configuration; defaults to the one stored in `--bundle`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        /// Full state dimensions to sweep.
        #[arg(long, value_delimiter = ',', default_values_t = vec![300, 3000, 30000])]
        sizes: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(out: Option<PathBuf>, cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    out.or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| anyhow!(Error::Argument("no output directory: pass --out or set out_dir".into())))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out_dir(out, &cfg)?;
            let sims = harness::run_generate(&cfg, &out)?;
            println!("wrote {} trajectories to {}", sims.len(), out.join(harness::TRAJECTORY_DIR).display());
        }
        Command::Offline { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out_dir(out, &cfg)?;
            let summary = harness::run_offline(&cfg, &out)?;
            let best = summary.history[summary.best_epoch];
            println!(
                "offline done: {} epochs, best epoch {} (val loss {:.4e}, initial {:.4e}); artifacts in {}",
                summary.history.len(),
                summary.best_epoch + 1,
                best.val_loss,
                summary.initial_val_loss,
                out.display()
            );
        }
        Command::Online { bundle, sim_id, out } => {
            let out = out.unwrap_or_else(|| bundle.join("online"));
            let res = harness::run_online(&bundle, sim_id, &out)?;
            println!("wrote {} and {}", res.trajectory_file.display(), res.csv_file.display());
            if let Some(s) = &res.scores {
                println!(
                    "mean scores: s_rec {:.4}, s_regr {:.4}, s_approx {:.4}",
                    mean_score(&s.rec, None)?.value,
                    mean_score(&s.regr, None)?.value,
                    mean_score(&s.approx, None)?.value
                );
            }
        }
        Command::Evaluate { bundle, out } => {
            let out = out.unwrap_or_else(|| bundle.join("evaluation"));
            harness::run_evaluate(&bundle, &out)?;
            let table = std::fs::read_to_string(out.join(REPORT_TXT)).context("reading report")?;
            print!("{table}");
        }
        Command::Benchmark {
            config,
            bundle,
            repetitions,
            sizes,
            out,
        } => {
            let cfg_path = match (config, &bundle) {
                (Some(c), _) => c,
                (None, Some(b)) => b.join(harness::CONFIG_FILE),
                (None, None) => return Err(anyhow!(Error::Argument("pass --config or --bundle".into()))),
            };
            let cfg = ExperimentConfig::load(&cfg_path)?;
            let rows = harness::run_benchmark(&cfg, &sizes, repetitions)?;
            println!("{:>8} {:>4} {:>14} {:>14} {:>10}", "N", "r", "hifi dt_r", "surr. dt_r", "speedup");
            for row in &rows {
                println!(
                    "{:>8} {:>4} {:>14.4e} {:>14.4e} {:>10.1}",
                    row.n,
                    row.r,
                    row.hifi.median,
                    row.surrogate.median,
                    row.speedup()
                );
            }
            let out = out.or(bundle).unwrap_or_else(|| Path::new(".").to_path_buf());
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_benchmark_csv(&out.join("benchmark.csv"), &rows)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::Config(_) | Error::Argument(_)) => 2,
        Some(Error::Format { .. }) => 3,
        Some(
            Error::Numerical(_)
            | Error::IntegrationDivergence { .. }
            | Error::RolloutDivergence { .. }
            | Error::NonFiniteLoss { .. },
        ) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
