use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subspace_descent::cli::{self, CliError, RunSummary, EXIT_USAGE};

/// Preconditioned gradient descent on the Grassmann manifold.
#[derive(Debug, Parser)]
#[command(name = "subspace-descent", version, about)]
struct Args {
    /// Override the seed of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory (relative to the working directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured solver and write the report bundle.
    Solve { config: PathBuf },
    /// Run the solver and the full set of theory checks.
    Verify { config: PathBuf },
    /// Run the three direct schemes from one start and compare them.
    Compare { config: PathBuf },
}

type Runner = fn(&cli::RunConfig) -> Result<RunSummary, CliError>;

fn run(args: Args) -> Result<RunSummary, CliError> {
    let (path, runner): (_, Runner) = match &args.command {
        Command::Solve { config } => (config, cli::run_solve),
        Command::Verify { config } => (config, cli::run_verify),
        Command::Compare { config } => (config, cli::run_compare),
    };
    let cfg = cli::parse_config(path)?.with_overrides(args.seed, args.out);
    runner(&cfg)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(args) {
        Ok(summary) => {
            print!("{}", summary.report);
            for path in summary.bundle.convergence.iter().chain([&summary.bundle.verdicts, &summary.bundle.report]) {
                println!("wrote {}", path.display());
            }
            if let Some(svg) = &summary.bundle.svg {
                println!("wrote {}", svg.display());
            }
            ExitCode::from(summary.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
