//! `mar`: phantom generation, projection, degradation, reconstruction and
//! evaluation for saturation-constrained CT reconstruction.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 numerical divergence,
//! 4 I/O or file format.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mar_core::MarError;

#[derive(Parser, Debug)]
#[command(name = "mar", version, about = "Metal artifact reduction by saturation-constrained TV reconstruction")]
struct Cli {
    /// Worker threads (default: all cores). 1 gives bitwise-reproducible output.
    #[arg(long, global = true, env = "MAR_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Shepp-Logan phantom with a rectangular metal insert.
    Phantom(PhantomArgs),
    /// Parallel-beam sinogram of an image.
    Project(ProjectArgs),
    /// Saturate sinogram entries at a threshold.
    Cap(CapArgs),
    /// Add seeded Gaussian noise to a sinogram.
    Noise(NoiseArgs),
    /// Reconstruct an image from a sinogram.
    Reconstruct(ReconstructArgs),
    /// Peak signal-to-noise ratio between two images.
    Psnr(PsnrArgs),
    /// Write a grid file as an 8-bit PNG.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Top-left pixel of the insert as `row,col` (default: right of centre).
    #[arg(long, value_parser = parse_pair)]
    pub metal_pos: Option<(usize, usize)>,
    /// Insert extent as `rows,cols`.
    #[arg(long, value_parser = parse_pair, default_value = "10,10")]
    pub metal_size: (usize, usize),
    /// Density added inside the insert.
    #[arg(long, default_value_t = 3.0)]
    pub metal_value: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = mar_core::radon::DEFAULT_ANGLES)]
    pub angles: usize,
    /// Detector bins (default: just enough to cover the image diagonal).
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CapArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub cap: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Reference {
    Max,
    Mean,
}

#[derive(Args, Debug)]
pub struct NoiseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Standard deviation relative to the reference value, e.g. 0.05.
    #[arg(long)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Reference::Max)]
    pub reference: Reference,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Filtered back projection (Ram-Lak).
    Fbp,
    /// Unfiltered back projection.
    Bp,
    CpUnconstrained,
    CpSoft,
    CpHard,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TvNormArg {
    Isotropic,
    Anisotropic,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Saturation mask (0/1 grid); detected as `data >= cap` when absent.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Saturation threshold; input values above it are capped first.
    #[arg(long)]
    pub cap: Option<f64>,
    /// TV weight.
    #[arg(long, conflicts_with = "log_lambda")]
    pub lambda: Option<f64>,
    /// TV weight as a base-10 exponent, e.g. -4.1.
    #[arg(long, allow_negative_numbers = true)]
    pub log_lambda: Option<f64>,
    #[arg(long, default_value_t = 80_000)]
    pub iters: usize,
    /// Diagnostics interval in iterations (0: final record only).
    #[arg(long, default_value_t = 1000)]
    pub snapshot_every: usize,
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Image side length (default: taken from --ground-truth).
    #[arg(long)]
    pub size: Option<usize>,
    /// Grid spacing (default: from the sinogram header, else 1).
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long, value_enum, default_value_t = TvNormArg::Isotropic)]
    pub tv_norm: TvNormArg,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct PsnrArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    /// Clip both images to [0, peak] first.
    #[arg(long)]
    pub clip: bool,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Display window `lo,hi` (default: 0,1 for images, data range for sinograms).
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    pub window: Option<(f64, f64)>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(MarError),
}

impl From<MarError> for CliError {
    fn from(e: MarError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(MarError::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                MarError::InvalidArgument(_) | MarError::Config(_) => 2,
                MarError::Divergence { .. } => 3,
                MarError::Format { .. } | MarError::Io(_) | MarError::Png(_) => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Phantom(a) => commands::phantom(&a),
        Command::Project(a) => commands::project(&a),
        Command::Cap(a) => commands::cap(&a),
        Command::Noise(a) => commands::noise(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Psnr(a) => commands::psnr(&a),
        Command::Export(a) => commands::export(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
