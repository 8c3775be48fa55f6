use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use mixlap::cli::{emit_all, load_config, run_experiment, Task};

#[derive(Parser)]
#[command(name = "mixlap", version, about = "Singular mixed local/nonlocal p-Laplace experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Continuation solve of the singular problem.
    Solve(Opts),
    /// Solve, then the extremal constant and its checks.
    Extremal(Opts),
    /// Solve and run the full check table.
    Verify(Opts),
    /// One summary row per point of the sweep axes.
    Sweep(Opts),
}

#[derive(Args)]
struct Opts {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Byte-identical outputs for identical inputs.
    #[arg(long)]
    deterministic: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn run(task: Task, opts: Opts) -> mixlap::Result<i32> {
    if let Some(n) = opts.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| mixlap::Error::Parameter(format!("thread pool: {e}")))?;
    }
    let mut cfg = load_config(&opts.config)?.with_task(task)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.deterministic |= opts.deterministic;
    let dir = opts.out.unwrap_or_else(|| {
        let out = PathBuf::from(&cfg.output_dir);
        match (out.is_relative(), cfg.base_dir()) {
            (true, Some(base)) => base.join(out),
            _ => out,
        }
    });
    let outcome = run_experiment(&cfg)?;
    emit_all(&outcome, &cfg, &dir)?;
    for f in &outcome.failures {
        error!("{f}");
    }
    for c in outcome.checks.iter().filter(|c| !c.pass) {
        error!("check {} [{}] failed: {:e} vs {:e}", c.check, c.params, c.metric, c.threshold);
    }
    info!("wrote {}", dir.display());
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (task, opts) = match cli.command {
        Command::Solve(o) => (Task::Solve, o),
        Command::Extremal(o) => (Task::Extremal, o),
        Command::Verify(o) => (Task::Verify, o),
        Command::Sweep(o) => (Task::Sweep, o),
    };
    match run(task, opts) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
