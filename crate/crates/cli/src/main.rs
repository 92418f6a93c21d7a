use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use phonon_cli::{run, Command, RunOptions};
use phonon_core::experiments::SweepNorm;

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Norm {
    Max,
    SourceScaled,
}

/// Phonon transport experiments: forward runs, loss landscapes, stability
/// sweeps, measurement splits and reconstructions.
#[derive(Debug, Parser)]
#[command(name = "phonon", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration; omitted means all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for CSV files and manifest.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Seed for the optional data noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exit with status 4 when any result check fails.
    #[arg(long)]
    strict: bool,
    /// Norm of the sweep difference (overrides the config).
    #[arg(long, value_enum)]
    norm: Option<Norm>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let opts = RunOptions {
        config: cli.config,
        out: cli.out,
        jobs: cli.jobs,
        seed: cli.seed,
        strict: cli.strict,
        norm: cli.norm.map(|n| match n {
            Norm::Max => SweepNorm::Max,
            Norm::SourceScaled => SweepNorm::SourceScaled,
        }),
    };
    match run(cli.command, &opts) {
        Ok(m) => {
            for c in &m.checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            println!("{} written to {} in {:.1} s", m.command, opts.out.display(), m.wall_time_s);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
