use std::process::ExitCode;

use indexcast::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse_args();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            if !out.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
