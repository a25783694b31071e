mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use commands::Cli;

/// Failures caused by the program rather than by its inputs.
fn is_internal(err: &anyhow::Error) -> bool {
    matches!(
        err.downcast_ref::<pgcycle::Error>(),
        Some(pgcycle::Error::NonFinite(_) | pgcycle::Error::Tensor(_) | pgcycle::Error::Spec(_))
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(cli.log_level()))
        .format_timestamp(None)
        .init();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| commands::run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_internal(&err) { 2 } else { 1 })
        }
        Err(_) => ExitCode::from(2),
    }
}
