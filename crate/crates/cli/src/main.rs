use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = nnilc_cli::Cli::parse();
    match nnilc_cli::run(cli) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(nnilc_cli::exit_code(&err))
        }
    }
}
