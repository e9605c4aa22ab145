use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use thermo_ep::cli::{run, Cli, CliError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            let kind = match e {
                CliError::Usage(_) => "usage error",
                CliError::Check(_) => "check failure",
                CliError::Runtime(_) => "runtime failure",
            };
            let report = Err::<(), _>(e).context(kind).unwrap_err();
            eprintln!("error: {report:#}");
            ExitCode::from(code as u8)
        }
    }
}
