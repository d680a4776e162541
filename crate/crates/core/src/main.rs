use std::process::ExitCode;

use clap::Parser;
use ctvforge::cli::{error_line, run, Cli};
use ctvforge::Error;

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("CTVFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CTVFORGE_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads()
        .and_then(|_| cli.resolve())
        .and_then(|cfg| run(cli.command, &cfg, cli.force));
    match result {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
