mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CommonFlags, SweepKind};

#[derive(Parser)]
#[command(
    name = "epia",
    version,
    about = "Policy iteration for entropy-regularized stochastic control"
)]
struct Cli {
    /// Worker threads; 1 gives bit-exact reruns.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Treat assumption violations as errors.
    #[arg(long, global = true)]
    strict: bool,
    /// Emit SVG plots next to the tables.
    #[arg(long, global = true)]
    plots: bool,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run policy iteration and write the trace, summary and final fields.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Discount or perturbation-size sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        sweep: SweepKind,
    },
    /// Exact checks of the non-uniqueness examples.
    Verify,
    /// Compare one policy-evaluation solve against Monte-Carlo estimates.
    McCheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    ExitCode::from(run(&cli))
}

/// Dispatches a parsed command line and maps errors to exit code 1.
fn run(cli: &Cli) -> u8 {
    let flags = CommonFlags {
        out: cli.out.clone(),
        strict: cli.strict,
        plots: cli.plots,
    };
    let result = match &cli.command {
        Command::Run { config } => config::load(config).and_then(|l| commands::cmd_run(&l, &flags)),
        Command::Sweep { config, sweep } => config::load(config).and_then(|l| commands::cmd_sweep(&l, *sweep, &flags)),
        Command::Verify => commands::cmd_verify(cli.out.as_deref()),
        Command::McCheck { config } => config::load(config).and_then(|l| commands::cmd_mc(&l, &flags)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
