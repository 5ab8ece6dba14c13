//! `evs`: file-in/file-out front end for evs-core.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use commands::UsageError;

/// Exit status for argument and input-kind errors, matching clap's own usage errors.
const USAGE_EXIT: u8 = 2;

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("EVS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        UsageError(format!(
            "EVS_THREADS must be a non-negative integer, got '{raw}'"
        ))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(USAGE_EXIT)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
