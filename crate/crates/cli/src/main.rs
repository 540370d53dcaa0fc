//! `tagm`: generate benchmark data, fit and select models, evaluate,
//! forecast and stream.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tagm::init::{ChainInit, ClusterInit, InitConfig};
use tagm::FitConfig;

#[derive(Parser)]
#[command(name = "tagm", version, about = "HMM clustering with per-state sparse Gaussian graphical models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic sequence with known states and graphs.
    Generate(GenerateArgs),
    /// Fit a model by penalized EM.
    Fit(FitArgs),
    /// Choose K by BIC, then λ by cluster stability.
    Select(SelectArgs),
    /// Score a model against ground truth.
    Evaluate(EvaluateArgs),
    /// One-step-ahead forecasts for every prefix.
    Predict(PredictArgs),
    /// Fit a batch, then update online from CSV rows on standard input.
    Stream(StreamArgs),
}

#[derive(Args, Serialize)]
pub struct GenerateArgs {
    /// JSON generator configuration; flags given alongside override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    /// `normal` or `uniform:A:B`.
    #[arg(long, allow_hyphen_values = true)]
    pub means: Option<String>,
    /// `degree_bounded:M`, `random_spd` or `stressed_identity:P`.
    #[arg(long)]
    pub cov: Option<String>,
    /// `sudden`, `fixed_smooth:S`, `random_smooth:LO:HI` or
    /// `random_smooth_random_weights:LO:HI`.
    #[arg(long)]
    pub transition: Option<String>,
    /// Dirichlet concentration on self-transitions.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write a header line in the observations CSV.
    #[arg(long)]
    pub header: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitArg {
    Kmeans,
    Gmm,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainArg {
    Uniform,
    RandomUniform,
    Dirichlet,
}

/// EM settings shared by every command that fits.
#[derive(Args, Serialize, Clone)]
pub struct EmArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1)]
    pub n_init: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Kmeans)]
    pub init: InitArg,
    #[arg(long, value_enum, default_value_t = ChainArg::Uniform)]
    pub chain_init: ChainArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub glasso_tol: Option<f64>,
    #[arg(long)]
    pub glasso_max_iter: Option<usize>,
}

impl EmArgs {
    pub fn fit_config(&self, k: usize, lambda: f64) -> FitConfig {
        FitConfig {
            n_states: k,
            lambda,
            tol: self.tol,
            max_iter: self.max_iter,
            n_init: self.n_init,
            init: InitConfig {
                chain_init: match self.chain_init {
                    ChainArg::Uniform => ChainInit::Uniform,
                    ChainArg::RandomUniform => ChainInit::RandomUniform,
                    ChainArg::Dirichlet => ChainInit::Dirichlet,
                },
                cluster_init: match self.init {
                    InitArg::Kmeans => ClusterInit::Kmeans,
                    InitArg::Gmm => ClusterInit::Gmm,
                },
                seed: self.seed,
            },
            glasso_tol: self.glasso_tol,
            glasso_max_iter: self.glasso_max_iter,
        }
    }
}

#[derive(Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// The data CSV starts with a header line.
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub header: bool,
    /// Inclusive range `LO..HI` or a comma list.
    #[arg(long)]
    pub k_range: String,
    /// Comma-separated λ values.
    #[arg(long)]
    pub lambda_grid: String,
    /// λ used while choosing K; defaults to the middle of the grid.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fits per λ for the stability score.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub header: bool,
    /// Ground truth JSON written by `generate`.
    #[arg(long, conflicts_with = "labels", required_unless_present = "labels")]
    pub truth: Option<PathBuf>,
    /// Ground-truth labels, one per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Also score rolling one-step-ahead forecasts.
    #[arg(long)]
    pub mae: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Inc,
    Slide,
}

#[derive(Args, Serialize)]
pub struct StreamArgs {
    /// Observations used for the initial batch phase.
    #[arg(long)]
    pub batch: PathBuf,
    #[arg(long)]
    pub header: bool,
    /// Start from this model instead of fitting the batch.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Inc)]
    pub mode: ModeArg,
    #[arg(long, required_if_eq("mode", "slide"))]
    pub window: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub refit_stride: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Select(a) => commands::select(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Stream(a) => commands::stream(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tagm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
