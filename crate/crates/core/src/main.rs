use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use direct_bart::cli::{execute, load_config, Command};
use direct_bart::Error;

#[derive(Parser)]
#[command(name = "direct-bart", version, about = "CATE estimation at a sharp regression discontinuity")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// Configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Select a bandwidth, run the full chain and summarize the CATE per unit.
    Fit,
    /// Score the candidate bandwidths only.
    Bandwidth,
    /// Run the simulation study for one scenario.
    Simulate,
}

fn run(args: &Args) -> Result<(), Error> {
    let command = match args.command {
        Cmd::Fit => Command::Fit,
        Cmd::Bandwidth => Command::Bandwidth,
        Cmd::Simulate => Command::Simulate,
    };
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let config = load_config(path, command, args.seed)?;
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    }
    for file in execute(&config, &args.out)? {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("direct-bart: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
