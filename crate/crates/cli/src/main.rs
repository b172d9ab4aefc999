//! `ellip`: data generation, ground-truth solves, POD baselines, network training,
//! evaluation and UQ statistics from the command line.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ellip_core::error::ErrorClass;

// glibc hands large freed blocks back to the OS, and re-faulting them dominated training.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ellip_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    fn class(&self) -> ErrorClass {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Usage(_) => ErrorClass::Usage,
            CliError::Data(_) => ErrorClass::Data,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.class() {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ellip", version, about = "Elliptic PDE surrogates: data, solvers, POD and V-block networks")]
struct Cli {
    /// Worker threads for data generation, convolutions and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ProblemArgs {
    /// poisson, helmholtz or darcy.
    #[arg(long, default_value = "poisson")]
    pub family: String,
    /// Ring amplitude c (Poisson and Helmholtz).
    #[arg(long)]
    pub contrast: Option<f64>,
    /// Wave-number term (2πκ)² for Helmholtz.
    #[arg(long)]
    pub kappa_sq: Option<f64>,
    /// Grid side (nodes per axis).
    #[arg(long, default_value_t = 65)]
    pub m: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample coefficients, solve every system and write an EPD1 dataset.
    GenData {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        s: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// First sample index (use disjoint ranges for train and test sets).
        #[arg(long, default_value_t = 0)]
        index_offset: u64,
        #[arg(long, default_value = "train")]
        split: String,
        /// Store the diagonally scaled form (Poisson only).
        #[arg(long)]
        scale: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one sampled problem and report solver statistics.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Also write PGM images of the coefficient and solution.
        #[arg(long)]
        pgm: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a POD basis and write error-vs-rank curves.
    Pod {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Basis rank; defaults to the energy criterion.
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        energy: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network from a flat key=value config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        /// Override config entries, e.g. `--set epochs=300`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue the run saved in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative errors of a checkpoint or a POD basis on a dataset.
    Eval {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        pod: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Write PGM triples for the first N samples.
        #[arg(long, default_value_t = 0)]
        dump: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Statistics of quantities of interest for exact and surrogate solutions.
    Uq {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        pod: Option<PathBuf>,
        /// Seed of the random linear functional.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Swap the roles of u and the coefficient in a dataset.
    Invert {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if cli.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let workers = cli.workers;
    pool.install(|| match cli.command {
        Command::GenData { problem, s, seed, index_offset, split, scale, out } => {
            commands::gen_data(&problem, s, seed, index_offset, &split, scale, workers, &out)
        }
        Command::Solve { problem, seed, index, pgm, out } => commands::solve(&problem, seed, index, pgm, &out),
        Command::Pod { data, test, r, energy, out } => commands::pod(&data, test.as_deref(), r, energy, &out),
        Command::Train { config, data, val, set, epochs, seed, resume, out } => {
            commands::train(config.as_deref(), &data, val.as_deref(), &set, epochs, seed, resume, &out)
        }
        Command::Eval { ckpt, pod, data, dump, batch_size, out } => {
            commands::eval(ckpt.as_deref(), pod.as_deref(), &data, dump, batch_size, &out)
        }
        Command::Uq { data, ckpt, pod, seed, out } => commands::uq(&data, ckpt.as_deref(), pod.as_deref(), seed, &out),
        Command::Invert { data, out } => commands::invert(&data, &out),
    })
}

fn one_line(msg: &str) -> String {
    msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), one_line(&e.to_string()));
            ExitCode::from(e.exit_code())
        }
    }
}
