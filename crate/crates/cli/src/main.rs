mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Photometric stereo with an order-agnostic fully convolutional network.
#[derive(Debug, Parser)]
#[command(name = "psfcn", version)]
pub struct Cli {
    /// Base seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset in the native layout.
    Render(RenderArgs),
    /// Train a network on a native dataset.
    Train(TrainArgs),
    /// Estimate the normal map of one sample.
    Predict(PredictArgs),
    /// Random-trial evaluation of a model or the L2 baseline.
    Eval(EvalArgs),
    /// Per-material comparison of a model against the L2 baseline.
    Sweep(SweepArgs),
    /// Integrate a normal map into a depth map.
    Recon(ReconArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Sphere,
    Blobby,
    Ellipsoids,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "blobby")]
    pub kind: KindArg,
    /// Number of shapes; with --brdf-grid each shape appears once per material.
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    /// Render every shape under the first N grid materials (N ≤ 100).
    #[arg(long, value_name = "N")]
    pub brdf_grid: Option<usize>,
    /// Random grid materials per shape, when --brdf-grid is absent.
    #[arg(long, default_value_t = 1)]
    pub brdfs_per_shape: usize,
    /// Lights per sample.
    #[arg(long, visible_alias = "lights", default_value_t = 32)]
    pub q: usize,
    /// Azimuth and elevation span in degrees.
    #[arg(long, default_value_t = 180.0)]
    pub span: f64,
    /// Image height and width.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Gaussian bumps per blobby shape, or lobes per ellipsoid shape.
    #[arg(long, default_value_t = 4)]
    pub bumps: usize,
    /// Sphere radius as a fraction of half the image size.
    #[arg(long, default_value_t = 0.9)]
    pub radius: f64,
    /// Add uniform ±0.05 noise before quantization.
    #[arg(long)]
    pub noise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FusionArg {
    Max,
    Avg,
    Conv,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Native dataset root; repeat to train on several.
    #[arg(long, env = "PSFCN_DATA_ROOT", required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "max")]
    pub fusion: FusionArg,
    /// Drop light directions from the input (3-channel network).
    #[arg(long)]
    pub uncalibrated: bool,
    #[arg(long, default_value_t = 0.25)]
    pub width_scale: f64,
    /// Image-light pairs per training sample.
    #[arg(long, default_value_t = 8)]
    pub q: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    /// Epochs between learning-rate halvings.
    #[arg(long, default_value_t = 10)]
    pub lr_period: usize,
    /// Train on whole samples without rescaling, noise or cropping.
    #[arg(long)]
    pub no_augment: bool,
    /// Training-data tag used in run labels.
    #[arg(long, default_value = "S")]
    pub data_tag: String,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Sample directory, native or DiLiGenT layout.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Image indices to use, in order (default: all).
    #[arg(long, value_delimiter = ',')]
    pub select: Option<Vec<usize>>,
    /// Required for uncalibrated models; light files are then ignored.
    #[arg(long)]
    pub uncalibrated: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = "PSFCN_DATA_ROOT")]
    pub data: PathBuf,
    #[arg(long, required_unless_present = "l2")]
    pub weights: Option<PathBuf>,
    /// Evaluate the least-squares baseline instead of a network.
    #[arg(long, conflicts_with = "weights")]
    pub l2: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Image-light pairs per trial (default: all).
    #[arg(long)]
    pub q_test: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Average only over pixels facing every light.
    #[arg(long)]
    pub fully_lit: bool,
    #[arg(long)]
    pub uncalibrated: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset rendered with --brdf-grid.
    #[arg(long, env = "PSFCN_DATA_ROOT")]
    pub data: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub fully_lit: bool,
}

#[derive(Debug, Args)]
pub struct ReconArgs {
    /// 16-bit normal map PNG.
    #[arg(long)]
    pub normals: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<psfcn::Error>() {
            if e.is_numerical() {
                return 3;
            }
            if e.is_data_error() {
                return 2;
            }
            return 1;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be ≥ 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
