//! `cpr`: fit, predict, evaluate and benchmark correlated probit models.
//!
//! Exit codes: 0 success, 2 bad input, 3 numerical failure, 4 non-convergence.

mod commands;
mod load;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpr_core::CprError;

pub const EXIT_BAD_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Debug)]
pub enum Failure {
    Core(CprError),
    NotConverged(String),
}

impl From<CprError> for Failure {
    fn from(e: CprError) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Core(e.into())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self::Core(CprError::Io(std::io::Error::other(e)))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::Core(e.into())
    }
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Self::NotConverged(_) => EXIT_NOT_CONVERGED,
            Self::Core(e) => match e {
                CprError::IndefiniteCovariance { .. } | CprError::EpFailure(_) | CprError::Numerical(_) | CprError::Undefined(_) => {
                    EXIT_NUMERICAL
                }
                _ => EXIT_BAD_INPUT,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Core(e) => write!(f, "{e}"),
            Self::NotConverged(m) => write!(f, "did not converge: {m}"),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(name = "cpr", version, about = "Sparse probit regression with correlated label noise")]
pub struct Cli {
    /// Worker threads for grid search and benchmarks (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write model.json and trace.csv.
    Fit(FitArgs),
    /// Predict labels for new samples and write predictions.csv.
    Predict(PredictArgs),
    /// Score predictions against true labels and write metrics.csv.
    Eval(EvalArgs),
    /// Generate a synthetic confounded dataset.
    Synth(SynthArgs),
    /// Select hyperparameters on a validation split.
    Grid(GridArgs),
    /// Repeat generate, split, select, test over seeds and sparsity levels.
    Benchmark(BenchArgs),
    /// Compare EP with quadrature and compute confounder-correlation curves.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Feature CSV, one sample per row.
    #[arg(long)]
    pub data: PathBuf,
    /// Label column in the feature file (name or 0-based index).
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Separate single-column label file, instead of a label column.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Input files have no header row.
    #[arg(long)]
    pub no_header: bool,
    /// Side-feature CSV (rows aligned with samples) for the RBF side kernel.
    #[arg(long)]
    pub side: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Cpr,
    CprMap,
    Probit,
    GpLimit,
}

impl From<MethodArg> for cpr_core::optim::Method {
    fn from(m: MethodArg) -> Self {
        use cpr_core::optim::Method;
        match m {
            MethodArg::Cpr => Method::Cpr,
            MethodArg::CprMap => Method::CprMap,
            MethodArg::Probit => Method::Probit,
            MethodArg::GpLimit => Method::GpLimit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    L1,
    L2,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "cpr")]
    pub method: MethodArg,
    /// Sparsity weight.
    #[arg(long, default_value_t = 1.0)]
    pub lambda0: f64,
    /// Identity (independent noise) weight.
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    /// Linear-kernel weight.
    #[arg(long, default_value_t = 0.0)]
    pub lambda2: f64,
    /// Side-kernel weight; needs --kernel or --side.
    #[arg(long, default_value_t = 0.0)]
    pub lambda3: f64,
    /// Precomputed sample-kernel CSV (square, no header).
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    #[arg(long, default_value_t = cpr_core::model::DEFAULT_RBF_LENGTH_SCALE)]
    pub rbf_length_scale: f64,
    #[arg(long, value_enum, default_value = "l1")]
    pub penalty: PenaltyArg,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub abs_tol: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub rel_tol: f64,
    /// Fit on raw features.
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// `sign(xᵀw)`, ignoring noise correlation.
    Independent,
    /// Each test point conditioned on the training labels.
    Correlated,
    /// Joint labeling of all test points (at most 10).
    Exact,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Test samples; a label column, when present, is ignored.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long)]
    pub no_header: bool,
    #[arg(long)]
    pub side: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "independent")]
    pub mode: ModeArg,
    /// Training CSV with labels, required by correlated modes.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub train_side: Option<PathBuf>,
    /// Sample kernel over training rows followed by test rows.
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// CSV with `label` and `score` columns.
    #[arg(long)]
    pub predictions: PathBuf,
    /// CSV holding the true labels.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub d: usize,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub train_size: usize,
    #[arg(long)]
    pub stratify: bool,
    #[arg(long, default_value_t = 20)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Accuracy,
    Auc,
    Auc01,
}

impl From<MetricArg> for cpr_experiments::Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Accuracy => Self::Accuracy,
            MetricArg::Auc => Self::Auc,
            MetricArg::Auc01 => Self::Auc01,
        }
    }
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "cpr")]
    pub method: MethodArg,
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    #[arg(long, default_value_t = cpr_core::model::DEFAULT_RBF_LENGTH_SCALE)]
    pub rbf_length_scale: f64,
    /// Comma-separated grids; defaults span [0.1, 1000] log-evenly.
    #[arg(long, value_delimiter = ',')]
    pub lambda0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda1: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda2: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda3: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "accuracy")]
    pub metric: MetricArg,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub stratify: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridPreset {
    /// Small grids that run on one core in minutes per repetition.
    Desk,
    /// Five values per kernel weight in [0.1, 1000].
    Full,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,10,25,50")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub repetitions: usize,
    /// Any of cpr, cpr-map, probit, gp-limit, oracle.
    #[arg(long, value_delimiter = ',', default_value = "cpr,cpr-map,probit,gp-limit,oracle")]
    pub methods: Vec<String>,
    #[arg(long, value_enum, default_value = "desk")]
    pub grid: GridPreset,
    #[arg(long, default_value_t = 50)]
    pub d: usize,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub train_size: usize,
    #[arg(long)]
    pub stratify: bool,
    #[arg(long, default_value_t = 20)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Dimension of the random EP test problems (quadrature needs ≤ 4).
    #[arg(long, default_value_t = 2)]
    pub ep_dim: usize,
    #[arg(long, default_value_t = 20)]
    pub ep_instances: usize,
    /// Dataset for the confounder-correlation curve; skipped when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long)]
    pub no_header: bool,
    #[arg(long)]
    pub side: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 30)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0.7)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(EXIT_BAD_INPUT);
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Grid(a) => commands::grid(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Diagnose(a) => commands::diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
