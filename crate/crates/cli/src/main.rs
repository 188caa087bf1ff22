use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pinlab_cli::{run, Command, ExperimentConfig, RunOptions};

/// Random-walk pinning experiments.
#[derive(Debug, Parser)]
#[command(name = "pinlab", version)]
struct Cli {
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `params.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = ExperimentConfig::from_path(&cli.config).and_then(|config| {
        let opts = RunOptions { out: cli.out, threads: cli.threads, seed: cli.seed, cache_root: None };
        run(cli.command, &config, &opts)
    });
    match result {
        Ok(m) => {
            println!("{}: wrote {} files", m.command, m.files.len() + 1);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pinlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
