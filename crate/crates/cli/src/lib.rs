//! Command-line front end of kdcl: TOML configuration, Monte-Carlo and
//! single-trial runs, result files and Jacobian-log observability audits.

pub mod commands;
pub mod config;
pub mod emit;
pub mod error;
pub mod jacobian_log;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use kdcl_core::observability::{DEFAULT_TOL_RATIO, DEFAULT_WINDOW};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "kdcl", version, about = "Cooperative localization filter consistency toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Monte-Carlo experiment and write summary, curves and manifest.
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `trials` from the config.
        #[arg(long)]
        trials: Option<usize>,
        /// Overrides `master_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one trial with per-step curves and Jacobian logs.
    Trial {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        /// Number of leading steps written to the Jacobian logs.
        #[arg(long, default_value_t = 100)]
        log_steps: usize,
    },
    /// Print the null-space dimension of every window of a Jacobian log.
    Observability {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = DEFAULT_TOL_RATIO)]
        tol: f64,
    },
    /// Parse and check a config file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Montecarlo { config, trials, seed, out } => {
            let mut c = config::load_config(&config)?;
            if let Some(t) = trials {
                c.trials = t;
            }
            if let Some(s) = seed {
                c.master_seed = s;
            }
            let result = commands::montecarlo(&c, &out);
            if let Ok(m) = &result {
                println!("{:<6} {:>12} {:>12} {:>10}", "filter", "rmse_pos_m", "rmse_ori_rad", "nees");
                for f in &m.filters {
                    println!("{:<6} {:>12.4} {:>12.4} {:>10.3}", f.kind.as_str(), f.rmse_pos, f.rmse_ori, f.nees);
                }
                println!("results in {}", out.display());
            }
            result.map(|_| ())
        }
        Command::Trial { config, index, out, log_steps } => {
            let c = config::load_config(&config)?;
            let result = commands::trial(&c, index, &out, log_steps)?;
            for f in &result.filters {
                println!(
                    "{:<6} rmse_pos_m {:.4} rmse_ori_rad {:.4} nees {:.3}",
                    f.kind.as_str(),
                    f.summary.rmse_pos,
                    f.summary.rmse_ori,
                    f.summary.nees
                );
            }
            println!("results in {}", out.display());
            Ok(())
        }
        Command::Observability { log, window, tol } => {
            let (log, report) = commands::observability(&log, window, tol)?;
            println!("filter {} records {} window {}", log.kind, log.records.len(), window);
            println!("start_step,nullspace_dim");
            for w in &report.windows {
                println!("{},{}", w.start_step, w.report.dimension);
            }
            match report.first_drop {
                Some(s) => println!("null space drops below 4 at window starting at step {s}"),
                None => println!("null space dimension 4 in every window"),
            }
            Ok(())
        }
        Command::Validate { config } => {
            let c = commands::validate(&config)?;
            let names: Vec<_> = c.filters.iter().map(|k| k.as_str()).collect();
            println!(
                "ok: n={} steps={} dt={} trials={} seed={} filters={}",
                c.n,
                c.steps,
                c.dt,
                c.trials,
                c.master_seed,
                names.join(",")
            );
            Ok(())
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
///
/// Returns the process exit status: 0 on success, 1 for usage and config
/// errors, 2 for numerical failures.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("kdcl: {e}");
            e.exit_code()
        }
    }
}
