//! `lct`: data generation, training, sweeps and reports for loss conditional
//! training on imbalanced binary problems.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::output::Existing;

#[derive(Debug, Parser)]
#[command(name = "lct", version, about = "Loss conditional training experiments")]
struct Cli {
    /// Behaviour when an output already exists.
    #[arg(long, global = true, value_enum, default_value_t = Existing::Fail)]
    existing: Existing,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate, split and subsample a dataset into train.csv and test.csv.
    GenData(GenDataArgs),
    /// Train one model and score the test set.
    Train(TrainArgs),
    /// Train every configuration of a sweep grid.
    Sweep(SweepArgs),
    /// Turn a scores CSV into an ROC curve CSV.
    Roc(RocArgs),
    /// Aggregate ROC curves, fit metric polynomials and run paired t-tests over a sweep.
    Analyze(AnalyzeArgs),
    /// Loss-difference grids and break-even lines of the binary VS loss.
    LossGeometry(LossGeometryArgs),
    /// Analytic and sampled densities of a linear distribution.
    DistCheck(DistCheckArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON experiment configuration; flags override its values.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $LCT_OUTPUT_ROOT/<command>].
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataOverrides {
    /// Seed for data generation, splitting and subsampling.
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Majority-to-minority ratio after subsampling the training part.
    #[arg(long)]
    pub target_beta: Option<f64>,
    /// Synthetic majority count.
    #[arg(long)]
    pub n0: Option<usize>,
    /// Synthetic minority count.
    #[arg(long)]
    pub n1: Option<usize>,
    /// Synthetic feature count.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Distance between the synthetic class means.
    #[arg(long)]
    pub separation: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[command(flatten)]
    pub data: DataOverrides,
}

#[derive(Debug, Args)]
pub struct TrainOverrides {
    /// Run seed for initialisation, shuffling and λ draws.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[command(flatten)]
    pub data: DataOverrides,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Fixed Ω (baseline loss only).
    #[arg(long)]
    pub omega: Option<f64>,
    /// Fixed γ (baseline loss only).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Fixed τ (baseline loss only).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Conditioning vector used for scoring (conditional loss only).
    #[arg(long, value_delimiter = ',')]
    pub eval_lambda: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[command(flatten)]
    pub data: DataOverrides,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Run seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Parallel runs; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    /// CSV with `score,label` columns.
    #[arg(long)]
    pub scores: PathBuf,
    /// Output CSV [default: $LCT_OUTPUT_ROOT/roc/roc.csv].
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Interpolate onto the standard FPR grid instead of listing the curve's vertices.
    #[arg(long)]
    pub grid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PairBy {
    /// Runs with the same key.
    Key,
    /// Mean AUC per run seed.
    Seed,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Sweep output directory (or a directory of run manifests).
    #[arg(long)]
    pub sweep: PathBuf,
    /// Second sweep for a paired t-test of AUCs (this sweep minus the second).
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PairBy::Key)]
    pub pair_by: PairBy,
    /// Output directory [default: $LCT_OUTPUT_ROOT/analyze].
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossGeometryArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub omega: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub gamma: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    pub tau: Vec<f64>,
    /// Imbalance ratio n0/n1.
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    /// Lower end of both logit axes.
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    pub lo: f64,
    /// Upper end of both logit axes.
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub hi: f64,
    /// Points per axis.
    #[arg(long, default_value_t = 101)]
    pub steps: usize,
    /// Output directory [default: $LCT_OUTPUT_ROOT/loss-geometry].
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistCheckArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub a: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub b: f64,
    /// Density at the upper end.
    #[arg(long, default_value_t = 0.0)]
    pub h_b: f64,
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
    /// Points of the analytic PDF/CDF table.
    #[arg(long, default_value_t = 201)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory [default: $LCT_OUTPUT_ROOT/dist-check].
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// A failure and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, configuration or inputs: status 1.
    Usage(anyhow::Error),
    /// Anything that goes wrong after validation: status 2.
    Runtime(anyhow::Error),
}

pub trait ResultExt<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let existing = cli.existing;
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a, existing),
        Command::Train(a) => commands::train(&a, existing),
        Command::Sweep(a) => commands::sweep(&a, existing),
        Command::Roc(a) => commands::roc(&a, existing),
        Command::Analyze(a) => commands::analyze(&a, existing),
        Command::LossGeometry(a) => commands::loss_geometry(&a, existing),
        Command::DistCheck(a) => commands::dist_check(&a, existing),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
