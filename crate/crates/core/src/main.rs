use std::process::ExitCode;

use clap::Parser;

use csafm::cli::{run, Cli};
use csafm::parallel;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Ok(v) = std::env::var("CSAFM_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                parallel::init_threads(n);
            }
            _ => log::warn!("ignoring CSAFM_THREADS={v:?}: expected a positive integer"),
        }
    }
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
