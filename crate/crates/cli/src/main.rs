use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = slideseg_cli::Cli::parse();
    match slideseg_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
