use std::path::PathBuf;

use accguard_core::attacks::AttackKind;
use accguard_core::dataset::ClassFilter;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "accguard", version, about = "Attack simulation and GAN-based anomaly detection for ACC traffic")]
pub struct Cli {
    /// Flat `key = value` file of flag defaults; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Simulate one ring-road run and write its trajectory CSV.
    Simulate(SimulateArgs),
    /// Sweep ring lengths and write the fundamental diagram.
    Fd(FdArgs),
    /// Simulate normal and attacked runs and write train/validation/test window sets.
    Dataset(DatasetArgs),
    /// Train the GAN on a window set of normal traffic.
    Train(TrainArgs),
    /// Score validation windows and derive the detection threshold.
    Calibrate(CalibrateArgs),
    /// Score windows and classify them against a threshold.
    Detect(DetectArgs),
    /// Compute detection metrics from a score CSV.
    Evaluate(EvaluateArgs),
    /// End-to-end detection experiment over window lengths and attack types.
    #[command(name = "repro-table1")]
    #[serde(rename = "repro-table1")]
    ReproTable1(ReproArgs),
    /// Re-run a command from the manifest written next to its output.
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fd(_) => "fd",
            Command::Dataset(_) => "dataset",
            Command::Train(_) => "train",
            Command::Calibrate(_) => "calibrate",
            Command::Detect(_) => "detect",
            Command::Evaluate(_) => "evaluate",
            Command::ReproTable1(_) => "repro-table1",
            Command::Replay(_) => "replay",
        }
    }
}

/// Fleet settings shared by every simulating command.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FleetArgs {
    #[arg(long, default_value_t = 20)]
    pub n_veh: usize,
    /// Share of ACC vehicles in [0,1].
    #[arg(long, default_value_t = 0.5)]
    pub mpr: f64,
    /// Integration step (s).
    #[arg(long, default_value_t = 0.033)]
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AttackArgs {
    /// none | control | sensor | dos
    #[arg(long, default_value = "none")]
    pub attack: AttackKind,
    /// Std-dev of the injected acceleration (m/s^2).
    #[arg(long, default_value_t = 5f64.sqrt())]
    pub xi_std: f64,
    /// Std-dev of the gap falsification (m).
    #[arg(long, default_value_t = 5f64.sqrt())]
    pub lambda1_std: f64,
    /// Std-dev of the relative-speed falsification (m/s).
    #[arg(long, default_value_t = 5f64.sqrt())]
    pub lambda2_std: f64,
    /// Measurement delay under denial of service (s).
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    /// Attack onset (s); defaults to 80 for dos and 0 otherwise.
    #[arg(long)]
    pub attack_start: Option<f64>,
    /// Attack end (s); defaults to 130 for dos and the end of the run otherwise.
    #[arg(long)]
    pub attack_end: Option<f64>,
    /// Share of ACC vehicles that are compromised.
    #[arg(long, default_value_t = 0.5)]
    pub target_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Ring circumference (m).
    #[arg(long, default_value_t = 200.0)]
    pub ring_m: f64,
    /// Simulated time (s).
    #[arg(long, default_value_t = 250.0)]
    pub duration: f64,
    #[command(flatten)]
    pub fleet: FleetArgs,
    #[command(flatten)]
    pub attack: AttackArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FdArgs {
    /// Ring lengths as start:stop:count, logarithmically spaced (m).
    #[arg(long, default_value = "143:2000:20")]
    pub lengths: String,
    /// Seeds averaged per ring length; seed i uses `--seed + i`.
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    /// Simulated time discarded before measuring (s).
    #[arg(long, default_value_t = 300.0)]
    pub warmup: f64,
    /// Measurement window (s).
    #[arg(long, default_value_t = 300.0)]
    pub window: f64,
    #[command(flatten)]
    pub fleet: FleetArgs,
    #[command(flatten)]
    pub attack: AttackArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, env = "ACCGUARD_JOBS")]
    pub jobs: Option<usize>,
    /// Curve CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary JSON; defaults to the CSV path with a `.summary.json` extension.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// How windows are cut and split; shared by `dataset` and `repro-table1`.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct WindowingArgs {
    #[arg(long, default_value_t = 200.0)]
    pub ring_m: f64,
    /// Simulated time per run (s).
    #[arg(long, default_value_t = 250.0)]
    pub duration: f64,
    /// Stride between normal windows (s); defaults to the window length.
    #[arg(long)]
    pub train_stride_s: Option<f64>,
    /// Stride between attacked windows (s).
    #[arg(long, default_value_t = 1.0)]
    pub test_stride_s: f64,
    /// all | acc | hv
    #[arg(long, default_value = "all")]
    pub classes: ClassFilter,
    #[arg(long, default_value_t = 200)]
    pub test_normal: usize,
    #[arg(long, default_value_t = 200)]
    pub test_attacked: usize,
    /// Validation-to-test size ratio as `v:t`.
    #[arg(long, default_value = "4:1")]
    pub val_ratio: String,
    /// Normal runs are added until the training split holds at least this many windows.
    #[arg(long, default_value_t = 2000)]
    pub min_train: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DatasetArgs {
    /// Window length (s).
    #[arg(long, default_value_t = 2.0)]
    pub window_s: f64,
    #[command(flatten)]
    pub windowing: WindowingArgs,
    #[command(flatten)]
    pub fleet: FleetArgs,
    #[command(flatten)]
    pub attack: AttackArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, env = "ACCGUARD_JOBS")]
    pub jobs: Option<usize>,
    /// Directory receiving train.accw, validation.accw and test.accw.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// GAN hyper-parameters; unset values fall back to the model defaults.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GanArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_g: Option<f64>,
    #[arg(long)]
    pub lr_d: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Factor applied to z-scored windows before they meet the networks.
    #[arg(long)]
    pub input_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Window set of normal training windows.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub gan: GanArgs,
    #[arg(long)]
    pub seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Latent inversion settings.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct InversionArgs {
    /// Weight of the discriminator-feature loss in [0,1].
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Descent steps per restart.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub inv_lr: f64,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Window set of normal validation windows.
    #[arg(long)]
    pub data: PathBuf,
    /// Nearest-rank percentile of validation scores used as threshold.
    #[arg(long, default_value_t = 90.0)]
    pub percentile: f64,
    #[command(flatten)]
    pub inversion: InversionArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, env = "ACCGUARD_JOBS")]
    pub jobs: Option<usize>,
    /// Threshold JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Threshold JSON from `calibrate`; its inversion settings are reused.
    #[arg(long)]
    pub threshold: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, env = "ACCGUARD_JOBS")]
    pub jobs: Option<usize>,
    /// Score CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Score CSV from `detect`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Metrics JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReproArgs {
    /// Comma-separated attack kinds, or `all`.
    #[arg(long, default_value = "all")]
    pub attack: String,
    /// Comma-separated window lengths (s).
    #[arg(long, default_value = "2,4,6,8,10,12")]
    pub window_s: String,
    #[command(flatten)]
    pub windowing: WindowingArgs,
    #[command(flatten)]
    pub fleet: FleetArgs,
    #[command(flatten)]
    pub gan: GanArgs,
    #[command(flatten)]
    pub inversion: InversionArgs,
    #[arg(long, default_value_t = 90.0)]
    pub percentile: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, env = "ACCGUARD_JOBS")]
    pub jobs: Option<usize>,
    /// Report JSON with one row per (attack, window length).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written next to a previous output.
    pub manifest: PathBuf,
    /// Worker count for the replayed command; results do not depend on it.
    #[arg(long, env = "ACCGUARD_JOBS")]
    pub jobs: Option<usize>,
}
