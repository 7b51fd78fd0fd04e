use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = tbp_cli::Cli::parse();
    match tbp_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.kind.exit_code())
        }
    }
}
