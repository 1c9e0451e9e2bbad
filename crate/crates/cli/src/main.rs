//! `idhand`: synthetic data, fitting, calibration and evaluation over JSON files.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 some records failed.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use idhand::fit::{EnergyKind, FitConfig};
use idhand::personalization::DEFAULT_TEMPERATURE;

#[derive(Parser, Debug)]
#[command(name = "idhand", version, about = "Identity-aware hand mesh toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a toy model, ground truth and prediction records.
    Synth(SynthArgs),
    /// Fit root and pose of every record to its 2D keypoints.
    Fit(FitArgs),
    /// Calibrate one shape per subject from its records.
    Calibrate(CalibrateArgs),
    /// Compare predictions or fits with ground truth.
    Eval(EvalArgs),
    /// Print a summary of a hand-model file.
    ModelInfo(ModelInfoArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Records per subject.
    #[arg(long, default_value_t = 20)]
    pub n_records: usize,
    #[arg(long, default_value_t = 1)]
    pub subjects: usize,
    /// Standard deviation of the 2D keypoint noise, in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub noise_px: f64,
    /// Standard deviation of the predicted shape noise.
    #[arg(long, default_value_t = 0.5)]
    pub shape_noise: f64,
    #[arg(long, default_value_t = 5.0)]
    pub pose_noise_deg: f64,
    #[arg(long, default_value_t = 0.02)]
    pub root_noise_m: f64,
    #[arg(long, default_value_t = 3)]
    pub v_per_segment: usize,
    /// Skip writing per-record ground-truth meshes.
    #[arg(long)]
    pub no_meshes: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeSource {
    /// The record's `shape_gt`.
    Gt,
    /// The subject's shape from `--calibration`.
    CalibratedFile,
    /// The record's own `shape_hat`.
    Record,
}

impl ShapeSource {
    pub fn name(self) -> &'static str {
        match self {
            ShapeSource::Gt => "gt",
            ShapeSource::CalibratedFile => "calibrated-file",
            ShapeSource::Record => "record",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnergyArg {
    Mean,
    Sumsq,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Prediction-record file.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ShapeSource::Record)]
    pub shape_source: ShapeSource,
    /// Calibration file, required with `--shape-source calibrated-file`.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub stage1_iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub stage1_lr: f64,
    #[arg(long, default_value_t = 60)]
    pub stage2_iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub stage2_lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub adam_beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub adam_beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub adam_eps: f64,
    /// Verify the analytic gradient before each stage.
    #[arg(long)]
    pub grad_check: bool,
    #[arg(long, value_enum, default_value_t = EnergyArg::Mean)]
    pub energy: EnergyArg,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

impl FitArgs {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            stage1_iters: self.stage1_iters,
            stage1_lr: self.stage1_lr,
            stage2_iters: self.stage2_iters,
            stage2_lr: self.stage2_lr,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            grad_check: self.grad_check,
            energy: match self.energy {
                EnergyArg::Mean => EnergyKind::Mean,
                EnergyArg::Sumsq => EnergyKind::Sumsq,
            },
        }
    }
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Softmax temperature of the confidence attention.
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE, conflicts_with = "uniform")]
    pub temperature: f64,
    /// Weight every record equally instead.
    #[arg(long)]
    pub uniform: bool,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Prediction-record, fit-result or ground-truth file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth file.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ModelInfoArgs {
    #[arg(long)]
    pub model: PathBuf,
}

/// Outcome of a command that ran to completion.
pub enum Outcome {
    Ok,
    Partial(usize),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let invocation: Vec<String> = std::env::args().collect();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a, invocation),
        Command::Fit(a) => commands::fit(a, invocation),
        Command::Calibrate(a) => commands::calibrate(a, invocation),
        Command::Eval(a) => commands::eval(a, invocation),
        Command::ModelInfo(a) => commands::model_info(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            eprintln!("idhand: {n} record(s) failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("idhand: error: {e:#}");
            ExitCode::from(1)
        }
    }
}
