//! `debris`: batch front end over debris-core. Every subcommand reads files,
//! calls one library operation and writes files.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] debris_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
        }
    }
}

macro_rules! core_error_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        })*
    };
}

core_error_from!(
    debris_core::spectra::SpectraError,
    debris_core::raster::RasterError,
    debris_core::dataset::DatasetError,
    debris_core::classifiers::ClassifierError,
    debris_core::metrics::MetricsError,
    debris_core::experiment::ExperimentError,
    debris_core::synth::SynthError
);

#[derive(Debug, Parser)]
#[command(name = "debris", version, about = "Floating marine debris detection from multispectral reflectance")]
pub struct Cli {
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize one spectral index from a reflectance stack.
    Indices(IndicesArgs),
    /// Percentile stretch of every band of a raster to [0, 1].
    Stretch(StretchArgs),
    /// Generate a labelled synthetic sample table.
    SynthData(SynthDataArgs),
    /// Generate a synthetic scene and its truth label map.
    SynthScene(SynthSceneArgs),
    /// Train a classifier on a sample table.
    Train(TrainArgs),
    /// Cross-validated grid search over classifier hyperparameters.
    Tune(TuneArgs),
    /// Classify every pixel of a reflectance stack.
    PredictScene(PredictSceneArgs),
    /// Accuracy metrics from predicted and true labels.
    Evaluate(EvaluateArgs),
    /// Run the feature-set x test-case x algorithm matrix.
    Matrix(MatrixArgs),
    /// Mean spectrum per plastic-coverage category.
    Profile(ProfileArgs),
}

#[derive(Debug, Args)]
pub struct IndicesArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// FDI, PI, NDVI or KNDVI.
    #[arg(long)]
    pub index: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StretchArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Percentile mapped to 0 [default: 2].
    #[arg(long)]
    pub p_low: Option<f64>,
    /// Percentile mapped to 1 [default: 98].
    #[arg(long)]
    pub p_high: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    /// Table with both classes.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plastic rows only.
    #[arg(long)]
    pub plastic: Option<PathBuf>,
    /// Water rows only.
    #[arg(long)]
    pub water: Option<PathBuf>,
    #[arg(long)]
    pub n_plastic: Option<usize>,
    #[arg(long)]
    pub n_water: Option<usize>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Endmember library JSON replacing the built-in one.
    #[arg(long)]
    pub endmembers: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthSceneArgs {
    /// Scene header path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Truth label map (PGM).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// `row,col,height,width,fraction[,kind]`; repeatable.
    #[arg(long = "patch")]
    pub patches: Vec<String>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub endmembers: Option<PathBuf>,
}

/// Training data: a sample table, or plastic and water pools combined into
/// a test case.
#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub plastic: Option<PathBuf>,
    #[arg(long)]
    pub water: Option<PathBuf>,
    /// 1..5; used with --plastic/--water.
    #[arg(long)]
    pub test_case: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Feature set 1..5.
    #[arg(long)]
    pub model: Option<String>,
    /// svm or rf.
    #[arg(long)]
    pub algo: Option<String>,
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub mtry: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub max_leaf_nodes: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    /// SVM box constraint.
    #[arg(long = "c")]
    pub cost: Option<f64>,
    /// RBF width in exp(-sigma |a - b|^2).
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, value_delimiter = ',')]
    pub mtry_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub sigma_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub c_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Model file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Tuning result JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictSceneArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Model file written by `train`.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Label map (PGM).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted labels: CSV with a `label` column, or a PGM label map.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// True labels, same format as --pred.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// `tp,fn,fp,tn`; repeat once per site to also average class reports.
    #[arg(long = "confusion")]
    pub confusions: Vec<String>,
    /// Metric CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[arg(long)]
    pub plastic: Option<PathBuf>,
    #[arg(long)]
    pub water: Option<PathBuf>,
    /// Metric CSV; a text table is written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Profile CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = config.pick_or(cli.seed, "seed", 0u64)?;
    if let Some(jobs) = config.pick(cli.jobs, "jobs")? {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let ctx = commands::Context { config, seed };
    match cli.command {
        Command::Indices(a) => commands::indices(&ctx, a),
        Command::Stretch(a) => commands::stretch(&ctx, a),
        Command::SynthData(a) => commands::synth_data(&ctx, a),
        Command::SynthScene(a) => commands::synth_scene(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Tune(a) => commands::tune(&ctx, a),
        Command::PredictScene(a) => commands::predict_scene(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Matrix(a) => commands::matrix(&ctx, a),
        Command::Profile(a) => commands::profile(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("{}", Cli::command().render_usage());
            }
            ExitCode::from(e.exit_code())
        }
    }
}
