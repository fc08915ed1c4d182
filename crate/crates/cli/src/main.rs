//! `graphseg`: synthesize test sets, train cascades, evaluate and infer.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use graphseg::Error;

#[derive(Parser, Debug)]
#[command(name = "graphseg", version, about = "Segment artificially added graphics patterns")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override the seed stored in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for synthesis, evaluation and batch prefetch.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Single-threaded reference mode.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Materialise a fixed synthetic test set.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a cascade model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a stage checkpoint (`stageN.json`).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a model on a test set.
    Eval {
        /// Model manifest (`model.json`).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test-set directory written by `synth`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional evaluation options (grid step, mIoU threshold).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Predict the mask of one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op.
    Gradcheck {
        /// Also write the per-check results as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numerical(_) => EXIT_NUMERICAL,
        e if e.is_io() => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let jobs = if cli.deterministic {
        1
    } else {
        cli.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {jobs} worker threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let ctx = commands::Context {
        seed: cli.seed,
        jobs,
        deterministic: cli.deterministic,
    };
    let result = pool.install(|| match &cli.command {
        Command::Synth { config, out } => commands::synth(&ctx, config, out),
        Command::Train {
            config,
            out,
            resume,
        } => commands::train(&ctx, config, out, resume.as_deref()),
        Command::Eval {
            checkpoint,
            data,
            out,
            config,
        } => commands::eval(&ctx, checkpoint, data, out, config.as_deref()),
        Command::Infer {
            checkpoint,
            image,
            out,
        } => commands::infer(checkpoint, image, out),
        Command::Gradcheck { out } => commands::gradcheck(&ctx, out.as_deref()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
