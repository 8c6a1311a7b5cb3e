//! `scorematch` command-line frontend.
//!
//! Every command writes its outputs and a `manifest.json` into `--out`.
//! Exit codes: 0 success, 1 runtime or IO failure, 2 usage or validation error.

mod fit;
mod manifest;
mod report;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "scorematch", version, about = "Regularized score matching for pairwise graphical models")]
struct Cli {
    /// Worker threads for parallel experiments (default: all cores).
    #[arg(long, global = true, env = "SCOREMATCH_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a ground truth and a data set from a simulation design.
    Simulate(simulate::SimulateArgs),
    /// Fit a penalized score matching estimator (exact path or coordinate descent).
    Fit(fit::FitArgs),
    /// Select the penalty level by extended BIC.
    Tune(fit::TuneArgs),
    /// Incoherence and model-complexity constants of a ground truth.
    Diagnose(report::DiagnoseArgs),
    /// Score fitted supports against a ground truth (ROC, AUC, support match).
    Eval(report::EvalArgs),
    /// Run a signed-support recovery experiment from a config file.
    Experiment(report::ExperimentArgs),
    /// Re-check a fit against its data: KKT residuals and the unpenalized endpoint.
    Verify(fit::VerifyArgs),
}

/// Errors that map to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<toml::de::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<scorematch::Error>() {
            use scorematch::Error as E;
            return match e {
                E::InvalidArgument(_) | E::InvalidData(_) | E::Domain(_) | E::Unsupported(_) | E::Json(_) | E::Csv(_) => 2,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 1;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Fit(a) => fit::run_fit(a),
        Command::Tune(a) => fit::run_tune(a),
        Command::Diagnose(a) => report::run_diagnose(a),
        Command::Eval(a) => report::run_eval(a),
        Command::Experiment(a) => report::run_experiment(a),
        Command::Verify(a) => fit::run_verify(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
