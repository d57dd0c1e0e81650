use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use moderr_cli::config::ExperimentConfig;
use moderr_cli::pipeline::{
    cmd_bounds, cmd_mesh_export, cmd_run, load_config, resolve_out_dir, timed, PipelineError,
};
use moderr_cli::selftest::run_selftest;

/// Model-error-aware Bayesian inversion on an advection-diffusion testbed:
/// posterior families, certified KL bounds, and observation-operator
/// diagnostics.
#[derive(Parser)]
#[command(name = "moderr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON configuration file; defaults reproduce the reference experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `MODERR_OUT` and the config value).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the observation noise seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the model-matrix build.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Full pipeline: data, posteriors, diagnostics, bound reports.
    Run {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Bound certification only; `--oracle` adds the finite-grid suite.
    Bounds {
        #[command(flatten)]
        common: CommonArgs,
        /// Run the exhaustive finite-grid oracle suite.
        #[arg(long)]
        oracle: bool,
        /// Number of random oracle instances.
        #[arg(long, default_value_t = 200)]
        oracle_instances: usize,
        /// Seed of the oracle instance stream.
        #[arg(long, default_value_t = 0)]
        oracle_seed: u64,
    },
    /// Fast invariant suite; nonzero exit on any failure.
    Selftest,
    /// Exports the structured mesh and velocity field as CSV.
    MeshExport {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn prepare(common: &CommonArgs) -> Result<(ExperimentConfig, PathBuf), PipelineError> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.observation.seed = seed;
    }
    let out = resolve_out_dir(&cfg, common.out.as_deref());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        CliCommand::Run { common } => {
            let (cfg, out) = prepare(&common)?;
            let (result, secs) = timed(|| cmd_run(&cfg, &out, common.threads));
            let outputs = result?;
            println!(
                "run complete in {secs:.1}s: {} → {}",
                outputs.join(", "),
                out.display()
            );
            Ok(())
        }
        CliCommand::Bounds {
            common,
            oracle,
            oracle_instances,
            oracle_seed,
        } => {
            let (cfg, out) = prepare(&common)?;
            let oracle_args = oracle.then_some((oracle_instances, oracle_seed));
            let (result, secs) = timed(|| cmd_bounds(&cfg, &out, oracle_args, common.threads));
            let outputs = result?;
            println!(
                "bounds complete in {secs:.1}s: {} → {}",
                outputs.join(", "),
                out.display()
            );
            Ok(())
        }
        CliCommand::Selftest => {
            let perturb = std::env::var("MODERR_SELFTEST_PERTURB")
                .map(|v| v == "1")
                .unwrap_or(false);
            let report = run_selftest(perturb);
            if report.failures.is_empty() {
                Ok(())
            } else {
                // selftest failures exit with code 1, not the run-error code
                eprintln!("selftest failed: {} check(s)", report.failures.len());
                std::process::exit(1);
            }
        }
        CliCommand::MeshExport { common } => {
            let (cfg, out) = prepare(&common)?;
            let outputs = cmd_mesh_export(&cfg, &out)?;
            println!("mesh export: {} → {}", outputs.join(", "), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("moderr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
