//! `exceed`: simulate, standardize, train, estimate, check fit and diagnose
//! peaks-over-threshold models from the command line.

mod commands;
mod config;
mod error;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "exceed", version, about = "Likelihood-free inference for multivariate exceedance models")]
struct Cli {
    /// Worker threads for bootstrap replicates and optimizer restarts.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML or JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Overrides the configuration seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Mgpd,
    Mdgpd,
    Unif1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nbe,
    Eot,
    Awnbe,
    Bayes1d,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a sample from a model at given parameters.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        /// Comma-separated flat parameter vector.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        theta: Vec<f64>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold raw data and map exceedances to the standard scale.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long, value_enum, default_value = "continuous")]
        mode: Mode,
        /// Use these thresholds instead of estimating them; the input is then
        /// taken as already standardized.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        fixed_threshold: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a neural Bayes estimator on simulated data.
    Train {
        #[command(flatten)]
        common: Common,
        /// Number of simulated training sets.
        #[arg(long = "K")]
        k: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Rows per simulated training set.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out_net: PathBuf,
    },
    /// Estimate parameters from data.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        net: Option<PathBuf>,
        /// Penalty weight, adaptive estimator only.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parametric bootstrap p-value of the Sinkhorn discrepancy.
    Gof {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        theta: Vec<f64>,
        /// Estimator rerun on every bootstrap sample.
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long = "B")]
        b: Option<usize>,
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transport-map and potential diagnostics against the fitted model.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        theta: Vec<f64>,
        #[arg(long)]
        out_prefix: PathBuf,
        /// Also write SVG scatter plots.
        #[arg(long)]
        svg: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Simulate { common, model, theta, n, out } => commands::simulate(&common, model, &theta, n, &out),
        Command::Preprocess { input, percentile, mode, fixed_threshold, out } => {
            commands::preprocess(&input, percentile, mode, fixed_threshold.as_deref(), &out)
        }
        Command::Train { common, k, epochs, n, out_net } => commands::train(&common, k, epochs, n, &out_net),
        Command::Estimate { common, method, data, net, lambda, out } => {
            commands::estimate(&common, method, &data, net.as_deref(), lambda, &out)
        }
        Command::Gof { common, data, theta, method, b, net, out } => {
            commands::gof(&common, &data, &theta, method, b, net.as_deref(), &out)
        }
        Command::Diagnose { common, data, theta, out_prefix, svg } => {
            commands::diagnose(&common, &data, &theta, &out_prefix, svg)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
