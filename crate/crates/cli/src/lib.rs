//! Command-line front end for `pipehess`: verification checks, solves,
//! scaling benchmarks and pipeline generation.

pub mod bench;
pub mod config;
pub mod io;
pub mod solve;
pub mod verify;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;
use pipehess::pipeline::random_spec;
use thiserror::Error;

use config::{Command, GenerateArgs, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("cannot write output: {0}")]
    Output(String),
    #[error(transparent)]
    Core(#[from] pipehess::Error),
    #[error("{0} of {1} checks failed")]
    ChecksFailed(usize, usize),
}

impl CliError {
    /// 2 for usage and input problems, 1 for failed checks and solves.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Parse { .. } => 2,
            CliError::Core(pipehess::Error::InvalidSpec(_)) => 2,
            CliError::Output(_) | CliError::Core(_) | CliError::ChecksFailed(..) => 1,
        }
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    args.shape.validate()?;
    let spec = random_spec(&args.shape.random_config(), args.shape.seed);
    io::emit(args.out.as_ref(), &spec.to_json())
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    match &cfg.command {
        Command::Verify(a) => {
            let report = verify::cmd_verify(a)?;
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError::ChecksFailed(failed, report.checks.len()));
            }
            Ok(())
        }
        Command::Solve(a) => solve::cmd_solve(a).map(|_| ()),
        Command::Bench(a) => bench::cmd_bench(a).map(|_| ()),
        Command::Generate(a) => cmd_generate(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
