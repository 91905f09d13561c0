use std::path::PathBuf;
use std::process::ExitCode;

use bayes_nn::harness::check::{run_check, CheckOptions, Suite};
use bayes_nn::harness::config::ExperimentConfig;
use bayes_nn::harness::fit::{run_directory, run_fit};
use bayes_nn::harness::predict::{run_predict, write_predictions, PREDICTIONS_FILE};
use bayes_nn::harness::{exit, exit_code};
use bayes_nn::Error;
use clap::{Parser, Subcommand};

/// Environment variable holding the worker-thread count.
const THREADS_ENV: &str = "BNN_NUM_THREADS";

#[derive(Parser)]
#[command(name = "bnn", version, about = "Bayesian neural network inference: MCMC, variational and manifold methods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a variational posterior or MC-dropout network.
    Fit(RunArgs),
    /// Draw an MCMC chain (mh or hmc).
    Sample(RunArgs),
    /// Posterior-predictive summaries for the inputs of a CSV file.
    Predict {
        /// Directory written by `fit` or `sample`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        /// Output file; defaults to predictions.jsonl inside the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the verification suites.
    Check {
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Plant a sign error in the Gaussian score; the gradient suite must fail.
        #[arg(long)]
        fault_injection: bool,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output_dir in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))
}

fn run_method(args: &RunArgs, mcmc: bool) -> Result<i32, Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if cfg.method.is_mcmc() != mcmc {
        let want = if mcmc { "`sample` runs mh or hmc" } else { "`fit` runs variational methods and mcd; use `sample` for mh or hmc" };
        return Err(Error::Config(format!("method {} does not match the subcommand: {want}", cfg.method.name())));
    }
    let dir = run_directory(&cfg, args.out.as_deref())?;
    let summary = run_fit(&cfg, &dir)?;
    log::info!("run written to {}", dir.display());
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(exit::OK)
}

fn run(cli: Cli) -> Result<i32, Error> {
    configure_threads()?;
    match cli.command {
        Command::Fit(args) => run_method(&args, false),
        Command::Sample(args) => run_method(&args, true),
        Command::Predict { run, inputs, out } => {
            let summaries = run_predict(&run, &inputs)?;
            let path = out.unwrap_or_else(|| run.join(PREDICTIONS_FILE));
            write_predictions(&path, &summaries)?;
            println!("{} predictions written to {}", summaries.len(), path.display());
            Ok(exit::OK)
        }
        Command::Check { suite, seed, fault_injection, json } => {
            let suite: Suite = suite.parse()?;
            let mut opts = CheckOptions { fault_injection, ..CheckOptions::default() };
            if let Some(s) = seed {
                opts.seed = s;
            }
            let report = run_check(suite, opts)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.render());
            }
            Ok(if report.passed() { exit::OK } else { exit::CHECK_FAILED })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
