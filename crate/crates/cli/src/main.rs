use std::process::ExitCode;

use rcpn_cli::{commands, parse_config, CliError};

fn main() -> ExitCode {
    let result = parse_config(std::env::args_os()).and_then(|config| commands::run(&config));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            ExitCode::from(if e.use_stderr() { 1 } else { 0 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
