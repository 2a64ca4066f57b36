//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 when inputs fail validation (malformed JSON or
//! CSV, out-of-domain parameters), 1 for other failures such as I/O.

mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    cmd_budget, cmd_fit, cmd_optimize, cmd_simulate, cmd_tomo, Metadata, TomoMode,
};
pub use config::RunConfig;

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "ion-readout", version, about = "Electron-shelving readout modelling and tomography")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan (t_det, n_th) for the smallest mean discrimination error.
    Optimize(CommonArgs),
    /// Simulate count histograms for both prepared states.
    Simulate(CommonArgs),
    /// Maximum-likelihood fit of a pair of histograms.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        /// Histogram CSV of the |↓⟩ (bright) preparation.
        #[arg(long)]
        down: PathBuf,
        /// Histogram CSV of the |↑⟩ (shelved) preparation.
        #[arg(long)]
        up: PathBuf,
    },
    /// State or process tomography from a records CSV.
    Tomo {
        /// Records CSV with header `prepared,axis,shots,bright_count`.
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::State)]
        mode: ModeArg,
        /// Fill missing orthogonal-axis records from the opposite state.
        #[arg(long)]
        fill_missing: bool,
        /// Keep orthogonal projections instead of nulling them (process mode).
        #[arg(long)]
        no_null: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Combine an error budget.
    Budget {
        /// Budget JSON: an entry list or an object of named entry lists.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    State,
    Process,
}

/// Runs a parsed command and returns the lines to print.
pub fn run(cli: Cli) -> Result<Vec<String>> {
    match cli.command {
        Command::Optimize(c) => with_threads(c.threads, || cmd_optimize(&c.config, &c.out)),
        Command::Simulate(c) => {
            with_threads(c.threads, || cmd_simulate(&c.config, &c.out, c.seed))
        }
        Command::Fit { common, down, up } => with_threads(common.threads, || {
            cmd_fit(&common.config, &down, &up, &common.out, common.seed)
        }),
        Command::Tomo { records, mode, fill_missing, no_null, out } => {
            let mode = match mode {
                ModeArg::State => TomoMode::State,
                ModeArg::Process => TomoMode::Process { null_orthogonal: !no_null },
            };
            cmd_tomo(&records, mode, fill_missing, &out)
        }
        Command::Budget { config, out } => cmd_budget(&config, &out),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => job(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| crate::ReadoutError::Usage(format!("cannot build thread pool: {e}")))?
            .install(job),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}
