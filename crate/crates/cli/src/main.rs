use clap::Parser;

use cohdet_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    if let Err(failure) = run(&cli, &argv) {
        eprintln!("error: {}", failure.message());
        std::process::exit(failure.exit_code());
    }
}
