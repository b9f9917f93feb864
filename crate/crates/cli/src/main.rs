mod args;
mod commands;
mod config;

use clap::Parser;

use args::{Cli, Command};
use config::FileConfig;

fn run(cli: Cli) -> Result<(), paired_adjust::Error> {
    let file = match &cli.common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Analyze(a) => commands::analyze(&cli.common, file, a),
        Command::Simulate(a) => commands::simulate(&cli.common, file, a),
        Command::Enumerate(a) => commands::enumerate(&cli.common, file, a),
        Command::Generate(a) => commands::generate(&cli.common, file, a),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(commands::exit_code(&e));
    }
}
