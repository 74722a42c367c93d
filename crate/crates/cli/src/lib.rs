//! `facies-gen`: synthesize training images, train, sample, validate,
//! condition and report, with one run directory per experiment.

pub mod cli;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::fmt;

use clap::Parser;
use facies_core::FaciesError;
use facies_gan::GanError;

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAULT: i32 = 3;

/// Bad flags, bad config, or arguments outside their domain.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// How a command that ran to completion ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    ValidationFailed,
}

/// Exit code for a command result.
pub fn exit_code(result: &anyhow::Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Success) => EXIT_OK,
        Ok(Outcome::ValidationFailed) => EXIT_VALIDATION_FAILED,
        Err(e) if is_usage(e) => EXIT_USAGE,
        Err(_) => EXIT_FAULT,
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<UsageError>()
            || matches!(c.downcast_ref::<GanError>(), Some(GanError::Config(_) | GanError::Argument(_)))
            || matches!(c.downcast_ref::<FaciesError>(), Some(FaciesError::Argument(_)))
    })
}

/// Parse `args`, run the command and report errors on stderr.
///
/// `seed_override` replaces every configured or flagged seed.
pub fn run<I, T>(args: I, seed_override: Option<u64>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let parsed = match cli::Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = commands::dispatch(parsed, args, seed_override);
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    exit_code(&result)
}

/// `FACIESGEN_SEED` as a seed override. A value that does not parse is a
/// usage error.
pub fn seed_from_env() -> Result<Option<u64>, UsageError> {
    match std::env::var("FACIESGEN_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| UsageError(format!("FACIESGEN_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}
