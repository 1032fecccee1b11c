use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use thetawave::cli::{run, Command, RunConfig, RunOptions};

/// Theta-functional NLS / Davey–Stewartson solutions with residual certificates.
#[derive(Parser, Debug)]
#[command(name = "thetawave", version)]
struct Args {
    /// Run file (`key = value` lines under [sections])
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV, report and plot script
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Residual gate (overrides [numerics] gate)
    #[arg(long)]
    gate: Option<f64>,
    /// Also write a matplotlib script for the grid
    #[arg(long)]
    plot: bool,
    /// Chebyshev quadrature order for periods and Abel maps
    #[arg(long)]
    nc: Option<usize>,
    /// Worker threads for grid evaluation
    #[arg(long)]
    threads: Option<usize>,
    /// Override the run file's command
    command: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let mut cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(c) = &args.command {
        match Command::parse(c) {
            Ok(c) => cfg.command = c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }
    let opts = RunOptions {
        out: args.out,
        gate: args.gate,
        plot: args.plot,
        nc: args.nc,
    };
    match run(&cfg, &opts) {
        Ok(outcome) => {
            println!("{}", outcome.summary.trim_end());
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            for c in outcome.report.failures() {
                eprintln!(
                    "gate failed: {} = {:.3e} (limit {:.3e})",
                    c.name, c.value, c.limit
                );
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
