use std::process::ExitCode;

use clap::Parser;
use rulebook_harness::cli::{main_with, Cli};
use tracing::Level;

fn main() -> ExitCode {
    // Usage errors exit with status 2.
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => Level::WARN,
        1 => Level::INFO,
        _ => Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    main_with(cli)
}
