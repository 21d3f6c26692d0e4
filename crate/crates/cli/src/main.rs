//! `edpredict`: phantom cohorts, feature extraction, preprocessing,
//! nested cross-validation and Shapley reports from the command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Error split by exit code: 2 for usage problems, 1 for everything else.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Parser, Debug)]
#[command(name = "edpredict", version, about = "Prostate MRI fascia features and outcome modelling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort with known anatomy and planted outcomes.
    Phantom(PhantomArgs),
    /// Extract radial thickness and volume features from label masks.
    Features(FeaturesArgs),
    /// Resample, clip, normalize and crop volumes.
    Preprocess(PreprocessArgs),
    /// Nested cross-validation with random hyperparameter search.
    TrainEval(TrainEvalArgs),
    /// Shapley attributions for a saved model.
    Explain(ExplainArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SignalArg {
    Strong,
    None,
    Imaging,
    Clinical,
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    /// Number of patients.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub signal: Option<SignalArg>,
    /// Volume size as X,Y,Z.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Per-field probability of a blank clinical value.
    #[arg(long)]
    pub missing_rate: Option<f64>,
    /// JSON phantom spec; flags given explicitly override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Mid,
    Multi,
    Volume,
    All,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    /// Directory of `.mvol` or `.nii` label masks; the file stem is the patient id.
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long, value_enum, default_value = "mid")]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// A volume file or a directory of them.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output file, or directory when the input is a directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON preprocessing config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Read NIfTI inputs as label masks instead of images.
    #[arg(long)]
    pub mask: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    Logreg,
    Svm,
    Mlp,
    Fusion,
    Mtl,
}

#[derive(Args, Debug)]
pub struct TrainEvalArgs {
    /// Imaging feature CSV.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Clinical CSV.
    #[arg(long)]
    pub clinical: Option<PathBuf>,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 5)]
    pub outer: usize,
    #[arg(long, default_value_t = 3)]
    pub inner: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 400)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub patience: usize,
    /// Drop rows with missing clinical values inside each fold.
    #[arg(long)]
    pub strict: bool,
    /// JSON search space replacing the default.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OutputArg {
    Probability,
    Margin,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    /// Model checkpoint JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// CSV holding the model's feature columns (e.g. `design.csv` from train-eval).
    #[arg(long)]
    pub features: PathBuf,
    /// Background rows: a count taken from the top of --features, or a CSV path.
    #[arg(long, default_value = "100")]
    pub background: String,
    /// JSON `{"clinical": [...], "imaging": [...]}`; enables modality shares.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Permutation sampling instead of exact enumeration.
    #[arg(long)]
    pub sampled: bool,
    #[arg(long, default_value_t = 1000)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "probability")]
    pub output: OutputArg,
    /// Explain only the first N rows.
    #[arg(long)]
    pub rows: Option<usize>,
    /// Signed modality shares instead of absolute ones.
    #[arg(long)]
    pub signed_shares: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn error_line(kind: &str, code: u8, message: &str) {
    let line = serde_json::json!({ "error": message, "kind": kind, "exit_code": code });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let msg = e.to_string();
            error_line("usage", 2, msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Phantom(a) => commands::phantom::run(a),
        Command::Features(a) => commands::features::run(a),
        Command::Preprocess(a) => commands::preprocess::run(a),
        Command::TrainEval(a) => commands::train_eval::run(a),
        Command::Explain(a) => commands::explain::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            error_line("usage", 2, &m);
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            let m = format!("{e:#}");
            eprintln!("error: {m}");
            error_line("runtime", 1, &m);
            ExitCode::from(1)
        }
    }
}
