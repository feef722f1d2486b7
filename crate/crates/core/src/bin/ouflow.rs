use std::process::ExitCode;

use anyhow::Context;
use ouflow::cli;
use ouflow::config::SEED_ENV;

fn main() -> ExitCode {
    let matches = cli::command().get_matches();
    let env_seed = std::env::var(SEED_ENV).ok();
    let name = matches.subcommand_name().unwrap_or_default().to_string();
    match cli::dispatch(&matches, env_seed.as_deref()).with_context(|| format!("ouflow {name} failed")) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
