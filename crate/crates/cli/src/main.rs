//! `mcm`: train, synthesize, augment and evaluate masked clinical models.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "mcm", version, about = "Masked clinical modelling for survival data")]
pub struct Cli {
    /// Worker threads for fold-level parallelism (results do not depend on it).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the transform and train the network on a dataset.
    Train(TrainArgs),
    /// Mask-and-reconstruct synthesis from real rows.
    Synth(SynthArgs),
    /// Conditional generation from a template.
    Augment(AugmentArgs),
    /// Evaluate synthetic data or augmentation strategies.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run all four arms for discrimination and calibration and write a
    /// comparison table.
    Repro(ReproArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Input CSV; defaults to $MCM_DATA_DIR/whas500.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Schema JSON; defaults to the built-in WHAS500 schema.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,

    /// Per-epoch loss CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,

    /// JSON training config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub seed: u64,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub step_size: Option<f64>,

    #[arg(long)]
    pub hidden: Option<usize>,

    /// Lower bound of the per-row masking probability.
    #[arg(long)]
    pub mask_prob_lo: Option<f64>,

    /// Upper bound of the per-row masking probability.
    #[arg(long)]
    pub mask_prob_hi: Option<f64>,

    /// Average the loss over masked features only.
    #[arg(long)]
    pub masked_only: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum BinaryMode {
    Threshold,
    Sample,
}

impl From<BinaryMode> for mcm_core::generation::BinaryOutput {
    fn from(m: BinaryMode) -> Self {
        match m {
            BinaryMode::Threshold => Self::Threshold,
            BinaryMode::Sample => Self::Sample,
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value_t = 0.75)]
    pub mask_ratio: f64,

    #[arg(long)]
    pub count: usize,

    #[arg(long)]
    pub seed: u64,

    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, value_enum, default_value_t = BinaryMode::Threshold)]
    pub binary: BinaryMode,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// JSON template: {feature: {"fixed": v} | {"range": [lo, hi]} | "masked"}.
    #[arg(long)]
    pub template: PathBuf,

    #[arg(long)]
    pub count: usize,

    #[arg(long)]
    pub seed: u64,

    #[arg(long)]
    pub out: PathBuf,

    /// Schema JSON; defaults to the built-in WHAS500 schema.
    #[arg(long)]
    pub schema: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = BinaryMode::Threshold)]
    pub binary: BinaryMode,
}

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    /// Per-feature means, SDs, KS statistics and proportion differences.
    Distribution(CompareArgs),
    /// Hazard ratios on real vs synthetic data.
    Hr(CompareArgs),
    /// Cross-validated C-index with training-fold augmentation.
    Discrimination(ExperimentArgs),
    /// Cross-validated stratified calibration.
    Calibration(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long)]
    pub synthetic: PathBuf,

    /// Output prefix: writes `<out>.json` and `<out>.csv`.
    #[arg(long)]
    pub out: PathBuf,

    /// Cox covariates (repeatable); defaults to all schema covariates.
    #[arg(long = "covariate")]
    pub covariates: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum MethodArg {
    RealOnly,
    Mcm,
    Smote,
    Mice,
    ExternalCsv,
}

impl From<MethodArg> for mcm_core::harness::Method {
    fn from(m: MethodArg) -> Self {
        use mcm_core::harness::Method;
        match m {
            MethodArg::RealOnly => Method::RealOnly,
            MethodArg::Mcm => Method::Mcm,
            MethodArg::Smote => Method::Smote,
            MethodArg::Mice => Method::Mice,
            MethodArg::ExternalCsv => Method::ExternalCsv,
        }
    }
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// JSON experiment config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,

    #[arg(long)]
    pub seed: u64,

    /// Output prefix: writes `<out>.json` and `<out>.csv`.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub synth_count: Option<usize>,

    #[arg(long)]
    pub mask_ratio: Option<f64>,

    /// Cohort as `name=predicate` or a bare predicate such as `age>=75`
    /// (repeatable).
    #[arg(long = "cohort")]
    pub cohorts: Vec<String>,

    /// Generated rows per training-cohort member.
    #[arg(long)]
    pub multiplier: Option<usize>,

    /// Calibration horizon percentile (repeatable).
    #[arg(long = "percentile")]
    pub percentiles: Vec<f64>,

    #[arg(long)]
    pub bins: Option<usize>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub hidden: Option<usize>,

    /// Minority event value for SMOTE (0 or 1).
    #[arg(long)]
    pub smote_minority: Option<f64>,

    #[arg(long)]
    pub smote_k: Option<usize>,

    /// Synthetic CSV for the external_csv method.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub binary: Option<BinaryMode>,
}

#[derive(Args, Debug)]
pub struct ReproArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Output directory for the report bundle.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
