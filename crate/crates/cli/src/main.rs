use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use silt_core::experiment::{
    run_convergence, run_fwt, run_sample, run_verify, ExperimentConfig, RunError, RunOptions, RunOutcome,
};

/// Numerical experiments for self-intersection local times of planar
/// Gaussian integrators.
#[derive(Parser, Debug)]
#[command(name = "integrator-silt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Grid-space property suites and kernel audits.
    Verify(Common),
    /// Inverse-Gram refinement tables and the L2-Cauchy moment diagnostic.
    Convergence(Common),
    /// Fourier–Wiener transform quadratures per probe and mode.
    Fwt(Common),
    /// Export sampled paths as CSV.
    Sample(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Root directory for run output (defaults to `output_dir` of the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, value_name = "M", env = "INTEGRATOR_SILT_THREADS")]
    threads: Option<usize>,
    /// Replaces the configured seed.
    #[arg(long, value_name = "INT")]
    seed_override: Option<u64>,
}

type Runner = fn(&ExperimentConfig, &RunOptions) -> Result<RunOutcome, RunError>;

const EXIT_SUITE_FAILURE: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common, runner): (&str, &Common, Runner) = match &cli.command {
        Command::Verify(c) => ("verify", c, run_verify),
        Command::Convergence(c) => ("convergence", c, run_convergence),
        Command::Fwt(c) => ("fwt", c, run_fwt),
        Command::Sample(c) => ("sample", c, run_sample),
    };
    if let Some(m) = common.threads {
        if m == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(m).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(EXIT_INTERNAL);
        }
    }
    let config = match ExperimentConfig::from_file(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: {e}", common.config.display());
            return ExitCode::from(1);
        }
    };
    let opts = RunOptions {
        out_root: common.out.clone(),
        seed_override: common.seed_override,
    };
    match runner(&config, &opts) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!(
                "{name}: wrote {} files to {}",
                outcome.files.len(),
                outcome.dir.display()
            );
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("{name}: numerical checks failed");
                ExitCode::from(EXIT_SUITE_FAILURE)
            }
        }
        Err(e) => {
            eprintln!("{name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
