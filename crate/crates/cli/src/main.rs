mod args;
mod commands;
mod report;

use clap::Parser;
use uqwiz::ensemble::{run_if_worker, Registry};

fn main() {
    run_if_worker(Registry::with_builtins);
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UQWIZ_LOG", "warn")).init();

    let cli = args::Cli::try_parse().unwrap_or_else(|e| e.exit());
    if let Err(e) = commands::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
