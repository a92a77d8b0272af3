use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmrfmi_cli::output::{write_manifest, ManifestEntry, Provenance};
use gmrfmi_cli::workflows::{run_fit, run_report, run_sensitivity, run_simulation, with_workers, Context, Overrides};
use gmrfmi_cli::CliError;

#[derive(Parser)]
#[command(name = "gmrfmi", version, about = "Joint imputation models for missing covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the configured model (or the multiple-imputation workflow).
    Fit(RunArgs),
    /// Run a missingness simulation study.
    Simulate(RunArgs),
    /// Fit every listed missingness variant on the same data and compare.
    Sensitivity(RunArgs),
    /// Render the result tables of an output directory.
    Report {
        /// Directory containing result CSV files.
        results_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (`key = value` lines).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid points per hyperparameter dimension (odd).
    #[arg(long)]
    grid_points: Option<usize>,
    /// Precision pinning observed covariate values.
    #[arg(long)]
    pinning_precision: Option<f64>,
    /// Size of the worker pool.
    #[arg(long)]
    workers: Option<usize>,
    /// Number of completed datasets in multiple imputation.
    #[arg(long)]
    mi_draws: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            grid_points: self.grid_points,
            pinning_precision: self.pinning_precision,
            workers: self.workers,
            mi_draws: self.mi_draws,
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Config(_) | CliError::Parse { .. } => 2,
        _ => 1,
    }
}

fn run(args: &RunArgs, command: &str) -> Result<bool, CliError> {
    let ctx = Context::load(&args.config, &args.overrides())?;
    let workers = args.workers.or(ctx.spec.workers);
    let result = with_workers(workers, || match command {
        "fit" => run_fit(&ctx),
        "simulate" => run_simulation(&ctx).map(|r| r.outcome),
        _ => run_sensitivity(&ctx).map(|r| r.outcome),
    })?;
    match result {
        Ok(outcome) => {
            for e in &outcome.manifest {
                log::warn!("{}: {}", e.model, e.message);
            }
            Ok(outcome.converged)
        }
        Err(e) => {
            // failures after loading still leave a manifest behind
            let prov = Provenance { config_hash: ctx.prov.config_hash.clone(), seed: ctx.prov.seed };
            let entry = ManifestEntry::from_error(command, &e);
            let _ = write_manifest(&ctx.spec.output_dir.join("errors.jsonl"), &prov, &[entry]);
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => run(a, "fit"),
        Command::Simulate(a) => run(a, "simulate"),
        Command::Sensitivity(a) => run(a, "sensitivity"),
        Command::Report { results_dir } => run_report(results_dir).map(|text| {
            print!("{text}");
            true
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: some models did not converge; see errors.jsonl");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
