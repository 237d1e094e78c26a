use std::process::ExitCode;

use clap::Parser;
use graph_diffusion_cli::{run, Cli, EXIT_CHECK_FAILED, EXIT_PASS};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::from(EXIT_PASS),
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("gdiff: {e}");
            ExitCode::from(e.code())
        }
    }
}
