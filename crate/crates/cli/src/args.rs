use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sfm_core::losses::CenterDenominator;
use sfm_core::metrics::{Distance, Space};

pub const SEED_ENV: &str = "SFM_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "sfm",
    version,
    about = "Hypersphere face shape model experiments",
    args_conflicts_with_subcommands = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,

    /// Worker threads; 1 gives bit-reproducible runs. Defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Re-run the command recorded in a manifest.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,

    /// Output directory for a replayed run, instead of the recorded one.
    #[arg(long, value_name = "DIR", requires = "manifest")]
    pub replay_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a labeled synthetic corpus with known ground truth.
    Synth(SynthArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Fit codes for a directory of meshes with a trained model.
    Fit(FitArgs),
    /// Separability metrics of a codes CSV.
    EvalCluster(EvalArgs),
    /// Interpolate between two codes and write OBJ frames.
    Interp(InterpArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Fit(_) => "fit",
            Command::EvalCluster(_) => "eval-cluster",
            Command::Interp(_) => "interp",
        }
    }

    pub fn out_dir(&self) -> &PathBuf {
        match self {
            Command::Synth(a) => &a.out,
            Command::Train(a) => &a.out,
            Command::Fit(a) => &a.out,
            Command::EvalCluster(a) => &a.out,
            Command::Interp(a) => &a.out,
        }
    }

    pub fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Command::Synth(a) => a.out = dir,
            Command::Train(a) => a.out = dir,
            Command::Fit(a) => a.out = dir,
            Command::EvalCluster(a) => a.out = dir,
            Command::Interp(a) => a.out = dir,
        }
    }

    /// Seed flag, if the command takes one.
    pub fn seed_mut(&mut self) -> Option<&mut Option<u64>> {
        match self {
            Command::Synth(a) => Some(&mut a.seed),
            Command::Train(a) => Some(&mut a.seed),
            Command::Fit(a) => Some(&mut a.seed),
            Command::EvalCluster(_) | Command::Interp(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub vertices: usize,
    #[arg(long, default_value_t = 20)]
    pub identities: usize,
    #[arg(long, default_value_t = 10)]
    pub per_id: usize,
    /// Dimension of the true model.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Within-identity angular spread, radians.
    #[arg(long, default_value_t = 0.1)]
    pub sigma_theta: f64,
    #[arg(long, default_value_t = 5.0)]
    pub scale_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub scale_std: f64,
    /// Per-coordinate vertex noise, mm.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// All losses.
    Sfm,
    /// Reconstruction and orthogonality only.
    SphereLinear,
    /// PCA initialization, no training.
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterDenominatorArg {
    PairMean,
    OrderedPairs,
}

impl From<CenterDenominatorArg> for CenterDenominator {
    fn from(v: CenterDenominatorArg) -> Self {
        match v {
            CenterDenominatorArg::PairMean => CenterDenominator::PairMean,
            CenterDenominatorArg::OrderedPairs => CenterDenominator::OrderedPairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Corpus directory with OBJ files and labels.csv.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = TrainMode::Sfm)]
    pub mode: TrainMode,
    #[arg(long, default_value_t = 199)]
    pub dim: usize,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.02)]
    pub lr_code: f64,
    #[arg(long, default_value_t = 0.005)]
    pub lr_basis: f64,
    #[arg(long, default_value_t = 0.1)]
    pub decay_factor: f64,
    #[arg(long, default_value_t = 20)]
    pub decay_every: u64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_m: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub logit_scale: f64,
    #[arg(long, value_enum, default_value_t = CenterDenominatorArg::PairMean)]
    pub center_denominator: CenterDenominatorArg,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of OBJ files; labels.csv is used when present.
    #[arg(long)]
    pub meshes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub decay_factor: f64,
    #[arg(long, default_value_t = 128)]
    pub decay_every: u64,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub codes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = Space::Scaled)]
    pub space: Space,
    /// Distance for the headline silhouette value.
    #[arg(long, default_value = "euclidean", value_parser = parse_distance)]
    pub distance: Distance,
    /// Report the summed `(a - b) / max(a, b)` form.
    #[arg(long = "paper-literal-silhouette", visible_alias = "summed-silhouette")]
    pub summed_silhouette: bool,
    /// Mean RMSE to show in the table row.
    #[arg(long)]
    pub rmse: Option<f64>,
    /// Row label.
    #[arg(long, default_value = "codes")]
    pub name: String,
}

fn parse_distance(s: &str) -> Result<Distance, String> {
    s.parse()
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct InterpArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Codes CSV holding the endpoints selected by --from / --to.
    #[arg(long, requires_all = ["from", "to"])]
    pub codes: Option<PathBuf>,
    /// Row index (0-based, excluding the header) of the first code.
    #[arg(long, requires = "codes")]
    pub from: Option<usize>,
    #[arg(long, requires = "codes")]
    pub to: Option<usize>,
    /// First code inline as `s,x_0,x_1,...`.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "codes", requires = "inline_to")]
    pub inline_from: Option<String>,
    #[arg(long, allow_hyphen_values = true, conflicts_with = "codes", requires = "inline_from")]
    pub inline_to: Option<String>,
    /// Number of frames including both endpoints.
    #[arg(long, default_value_t = 11, value_parser = clap::value_parser!(u64).range(2..))]
    pub frames: u64,
    #[arg(long)]
    pub out: PathBuf,
}
