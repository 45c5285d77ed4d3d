use std::process::ExitCode;

use clap::Parser;
use kirkwood_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            let record = kirkwood_cli::CliError::Usage(e.kind().to_string());
            eprintln!("{}", record.to_json());
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(outcomes) => {
            for o in outcomes {
                let status = if o.hit { "cached" } else { "computed" };
                for f in &o.files {
                    println!("{} {status} {}", o.command.name(), f.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("kirkwood: {e}");
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
