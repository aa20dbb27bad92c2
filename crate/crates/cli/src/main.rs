//! `gridpinn`: generate datasets, train and compare the λ regimes, run the
//! WLS reference estimator and render result tables.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridpinn::dataset::Scenario;

use crate::config::{parse_regimes, RunConfig};

#[derive(Parser)]
#[command(name = "gridpinn", version, about = "Physics-informed neural network state estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve power flows for a scenario and write a dataset CSV with a JSON sidecar.
    Generate(GenerateArgs),
    /// Cross-validate the NN and increment regimes on a dataset.
    Train(TrainArgs),
    /// Run the weighted-least-squares estimator on every sample of a dataset.
    Wls(WlsArgs),
    /// Re-render the results table of a training run.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Replay the configuration recorded in a run manifest; flags override it
    #[arg(long, value_name = "FILE", conflicts_with = "config")]
    manifest: Option<PathBuf>,
    /// Master seed for every random stream [default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// Case file (sectioned text format) [default: built-in IEEE 14-bus]
    #[arg(long, value_name = "FILE")]
    case: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Scenario: steady or outage [default: steady]
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Number of time instances [default: 192 steady, 2000 outage]
    #[arg(long = "n", visible_alias = "samples", value_name = "N")]
    samples: Option<usize>,
    /// Half-width of the steady-state load band [default: 0.2]
    #[arg(long)]
    load_band: Option<f64>,
    /// Relative P measurement noise [default: 0.01 steady, 0.001 outage]
    #[arg(long)]
    noise_p: Option<f64>,
    /// Relative Q measurement noise [default: 0.01 steady, 0.001 outage]
    #[arg(long)]
    noise_q: Option<f64>,
    /// Power-flow mismatch tolerance [default: 1e-8]
    #[arg(long)]
    nr_tol: Option<f64>,
    /// Power-flow iteration limit [default: 50]
    #[arg(long)]
    nr_max_iter: Option<usize>,
    /// Dataset CSV to write (sidecar and manifest go next to it)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset CSV written by `generate`
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,
    /// Output directory for reports, curves and models
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Training epochs per fold [default: 1000]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size in time instances [default: 16]
    #[arg(long = "batch", visible_alias = "batch-size")]
    batch_size: Option<usize>,
    /// Cross-validation folds [default: 5]
    #[arg(long)]
    k_folds: Option<usize>,
    /// Hidden tanh units in the single hidden layer [default: 32]
    #[arg(long)]
    hidden: Option<usize>,
    /// Adam step size [default: 0.001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Adam first-moment decay [default: 0.9]
    #[arg(long)]
    beta1: Option<f64>,
    /// Adam second-moment decay [default: 0.999]
    #[arg(long)]
    beta2: Option<f64>,
    /// Adam denominator offset [default: 1e-8]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Epochs between λ adjustments [default: 100]
    #[arg(long)]
    schedule_period: Option<usize>,
    /// Comma-separated regimes: nn,inc10,inc20,inc25,inc33,inc50 [default: all]
    #[arg(long, value_name = "LIST")]
    regimes: Option<String>,
    /// Worker threads for fold-level parallelism [default: 1]
    #[arg(long)]
    parallel_folds: Option<usize>,
}

#[derive(Args)]
struct WlsArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset CSV written by `generate`
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,
    /// Output directory for the estimates and statistics CSVs
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Convergence tolerance on the state update [default: 1e-8]
    #[arg(long)]
    wls_tol: Option<f64>,
    /// Gauss-Newton iteration limit [default: 50]
    #[arg(long)]
    wls_max_iter: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Training output directory containing report.json
    #[arg(long, value_name = "DIR")]
    run: PathBuf,
    /// Write the table here instead of standard output
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// Failure classes with their process exit codes.
pub enum Failure {
    /// Bad configuration, missing input, generation failure.
    Setup(anyhow::Error),
    /// Training aborted (non-finite loss or gradient).
    Training(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Setup(e.into())
    }
}

fn base_config(common: &Common, command: &str) -> anyhow::Result<RunConfig> {
    let mut cfg = match (&common.config, &common.manifest) {
        (Some(path), _) => RunConfig::from_file(path)?,
        (None, Some(path)) => commands::Manifest::load(path, command)?.config,
        (None, None) => RunConfig::default(),
    };
    set(&mut cfg.seed, common.seed);
    if common.case.is_some() {
        cfg.case = common.case.clone();
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn some<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(a) => {
            let mut cfg = base_config(&a.common, "generate")?;
            set(&mut cfg.scenario, a.scenario);
            some(&mut cfg.samples, a.samples);
            set(&mut cfg.load_band, a.load_band);
            some(&mut cfg.noise_p, a.noise_p);
            some(&mut cfg.noise_q, a.noise_q);
            set(&mut cfg.nr_tol, a.nr_tol);
            set(&mut cfg.nr_max_iter, a.nr_max_iter);
            some(&mut cfg.out, a.out);
            commands::generate(&cfg)
        }
        Command::Train(a) => {
            let mut cfg = base_config(&a.common, "train")?;
            some(&mut cfg.dataset, a.dataset);
            some(&mut cfg.out, a.out);
            set(&mut cfg.epochs, a.epochs);
            set(&mut cfg.batch_size, a.batch_size);
            set(&mut cfg.k_folds, a.k_folds);
            set(&mut cfg.hidden, a.hidden);
            set(&mut cfg.learning_rate, a.learning_rate);
            set(&mut cfg.beta1, a.beta1);
            set(&mut cfg.beta2, a.beta2);
            set(&mut cfg.epsilon, a.epsilon);
            set(&mut cfg.schedule_period, a.schedule_period);
            if let Some(list) = a.regimes {
                cfg.regimes = parse_regimes(&list).map_err(anyhow::Error::msg)?;
            }
            set(&mut cfg.parallel_folds, a.parallel_folds);
            commands::train(&cfg)
        }
        Command::Wls(a) => {
            let mut cfg = base_config(&a.common, "wls")?;
            some(&mut cfg.dataset, a.dataset);
            some(&mut cfg.out, a.out);
            set(&mut cfg.wls_tol, a.wls_tol);
            set(&mut cfg.wls_max_iter, a.wls_max_iter);
            commands::wls(&cfg)
        }
        Command::Report(a) => commands::report(&a.run, a.out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Setup(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Training(e)) => {
            eprintln!("training aborted: {e:#}");
            ExitCode::from(3)
        }
    }
}
