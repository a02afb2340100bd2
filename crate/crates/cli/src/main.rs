use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use srr_cli::commands::{self, Overrides};

/// Spectral-radius-regularized training and generalization tests.
#[derive(Parser)]
#[command(name = "srr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<srr_cli::RunConfig> {
        commands::load_config(
            &self.config,
            &Overrides {
                seed: self.seed,
                out: self.out.clone(),
            },
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write metrics and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on one data partition.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, validation, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Seeded covariate-shift trials and slope statistics.
    ShiftTest {
        #[command(flatten)]
        common: Common,
        /// Repeat for every model to compare.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
    },
    /// Accuracy on augmented copies of the test images.
    AugmentTest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Check the derivative operators against finite differences and exact solvers.
    Validate {
        /// Corrupt the second-order backward pass to show the suite catches it.
        #[arg(long)]
        inject_fault: bool,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { common } => {
            let cfg = common.load()?;
            let s = commands::train(&cfg)?;
            let r = &s.last;
            println!(
                "trained {} epochs: f={:.6} rho_batch={:.6} h={:.6} grad_norm={:.3e}",
                s.epochs, r.f, r.rho, r.h, r.grad_norm
            );
            println!("best validation {} at epoch {}", s.best_validation, s.best_epoch);
            println!("final test {}", s.test);
            println!("outputs in {}", s.out_dir.display());
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let cfg = common.load()?;
            println!("{}", commands::eval(&cfg, &checkpoint, &split)?);
        }
        Command::ShiftTest { common, checkpoint } => {
            let cfg = common.load()?;
            let out = commands::shift_test(&cfg, &checkpoint)?;
            if !out.table.unnormalized_columns.is_empty() {
                eprintln!(
                    "warning: shifted columns {:?} do not look standardized; likelihood weights assume N(0,1) features",
                    out.table.unnormalized_columns
                );
            }
            println!("{} trials", out.report.n_trials);
            for (name, f) in &out.report.models {
                println!("{name}: slope={:.4e} p={:.4}", f.slope, f.p_value);
            }
            for p in &out.report.pairwise {
                println!(
                    "{} - {}: slope={:.4e} p={:.4}",
                    p.first, p.second, p.fit.slope, p.fit.p_value
                );
            }
        }
        Command::AugmentTest { common, checkpoint } => {
            let cfg = common.load()?;
            let s = commands::augment_test(&cfg, &checkpoint)?;
            println!("plain: {:.4}", s.plain);
            println!("at1:   {:.4}", s.at1);
            println!("at2:   {:.4}", s.at2);
        }
        Command::Validate { inject_fault } => {
            let start = Instant::now();
            let results = commands::validate(inject_fault)?;
            for r in &results {
                println!("{r}");
            }
            let passed = results.iter().all(|r| r.passed);
            println!(
                "{} ({:.1} s)",
                if passed { "all checks passed" } else { "some checks FAILED" },
                start.elapsed().as_secs_f64()
            );
            return Ok(passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
