//! `dyntex`: analyze a source video into texture statistics, then synthesize
//! or extrapolate new videos from them.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dyntex::lbfgs::OptimError;
use dyntex::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "dyntex",
    version,
    about = "Dynamic texture synthesis from spatio-temporal Gram statistics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute statistics of a source sequence.
    Analyze(RunConfig),
    /// Generate a new sequence from statistics.
    Synthesize(RunConfig),
    /// Continue a sequence from Δt − 1 seed frames.
    Extrapolate(RunConfig),
    /// Describe a statistics file or weight container.
    Info {
        /// Artifact to inspect.
        path: std::path::PathBuf,
    },
}

/// A message plus the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }

    pub fn shape(message: impl Into<String>) -> Self {
        Failure {
            code: 4,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Io { .. } | Error::MissingFrame { .. } | Error::MissingMetadata(_) => 3,
            Error::NonFinite(_) => 5,
            Error::Optim(
                OptimError::NonFiniteStart | OptimError::NotDescent(_) | OptimError::LineSearchExhausted(_),
            ) => 5,
            Error::Optim(OptimError::BadConfig(_)) => 2,
            _ => 4,
        };
        let mut message = e.to_string();
        let mut inner = &e;
        while let Error::Frame { source, .. } = inner {
            message.push_str(": ");
            message.push_str(&source.to_string());
            inner = source;
        }
        Failure { code, message }
    }
}

fn threads_from_env() -> Result<(), Failure> {
    let Ok(value) = std::env::var("DYNTEX_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("DYNTEX_THREADS must be a positive integer, got `{value}`")))?;
    if n == 0 {
        return Err(Failure::usage("DYNTEX_THREADS must be at least 1"));
    }
    if !dyntex::exec::configure_threads(n) {
        log::warn!("DYNTEX_THREADS={n} ignored: worker pool unavailable");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    threads_from_env()?;
    let (name, flags) = match cli.command {
        Command::Info { path } => return commands::info(&path),
        Command::Analyze(f) => ("analyze", f),
        Command::Synthesize(f) => ("synthesize", f),
        Command::Extrapolate(f) => ("extrapolate", f),
    };
    let cfg = flags.resolve()?;
    eprintln!("{}", serde_json::to_string_pretty(&cfg.effective(name)).expect("json"));
    match name {
        "analyze" => commands::analyze(&cfg),
        "synthesize" => commands::synthesize(&cfg, false),
        _ => commands::synthesize(&cfg, true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
