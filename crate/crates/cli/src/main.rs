use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

mod commands;

/// Scan gray-value images for line-like dark anomalies (fissures).
#[derive(Parser, Debug)]
#[command(name = "fissure", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Heat map, significance mask and summary for one image
    Scan(ScanArgs),
    /// Synthetic noise image, optionally with a fissure
    Generate(GenerateArgs),
    /// Monte Carlo threshold, stored in the threshold cache
    Calibrate(CalibrateArgs),
    /// False-positive rate on null images
    SimulateFp(SimulateFpArgs),
    /// Detection rate under angle misspecification
    SimulateDetect(SimulateDetectArgs),
    /// Two-stage scan with a darkness pre-filter
    FastScan(FastScanArgs),
    /// Empirical checks of the limit theory
    Verify(VerifyArgs),
    /// Robust noise-level estimate of an image
    EstimateSigma(EstimateSigmaArgs),
}

/// Statistic, window, angles and noise-level source.
#[derive(Args, Debug, Clone, Serialize)]
pub struct StatArgs {
    /// Statistic: f1, f2, nb, fnb1 or fnb2
    #[arg(long, default_value = "fnb1")]
    pub stat: String,
    /// Window diameter (unit-square coordinates)
    #[arg(long, default_value_t = 0.1)]
    pub d: f64,
    /// Strip width
    #[arg(long, default_value_t = 0.02)]
    pub h: f64,
    /// Comma-separated angles in degrees
    #[arg(long, conflicts_with = "num_angles")]
    pub angles: Option<String>,
    /// Number of equidistant angles on [0, 180) degrees
    #[arg(long)]
    pub num_angles: Option<usize>,
    /// silverman or known:<v>
    #[arg(long, default_value = "silverman")]
    pub sigma: String,
}

/// Where the threshold comes from: an explicit value or a cache lookup.
#[derive(Args, Debug, Clone, Serialize)]
pub struct ThresholdArgs {
    /// Explicit threshold
    #[arg(long, conflicts_with = "threshold_cache")]
    pub beta: Option<f64>,
    /// JSON threshold cache to look the threshold up in
    #[arg(long)]
    pub threshold_cache: Option<PathBuf>,
    /// Only use cache records with this level
    #[arg(long)]
    pub level: Option<f64>,
    /// Only use cache records with this many replicates
    #[arg(long)]
    pub cal_reps: Option<usize>,
    /// Only use cache records with this seed
    #[arg(long)]
    pub cal_seed: Option<u64>,
    /// Only use cache records calibrated under this noise model
    #[arg(long)]
    pub cal_noise: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct ScanArgs {
    /// 8/16-bit grayscale PGM or PNG
    pub image: PathBuf,
    #[command(flatten)]
    pub stat: StatArgs,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    /// Image side length in pixels
    #[arg(long = "t", default_value_t = 100)]
    pub t: usize,
    #[arg(long, default_value = "gauss:1")]
    pub noise: String,
    #[arg(long)]
    pub seed: u64,
    /// Fissure amplitude; 0 gives a null image
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub length: f64,
    #[arg(long, default_value_t = 0.02)]
    pub width: f64,
    /// Fissure angle in degrees
    #[arg(long, default_value_t = 30.0)]
    pub fissure_angle: f64,
    /// Fissure center as x,y in unit-square coordinates
    #[arg(long, default_value = "0.5,0.5")]
    pub center: String,
    #[arg(long, default_value_t = 0.0)]
    pub baseline: f64,
    /// Also write the field as CSV
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub stat: StatArgs,
    #[arg(long = "t", default_value_t = 100)]
    pub t: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 2000)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "gauss:1")]
    pub noise: String,
    #[arg(long)]
    pub threshold_cache: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateFpArgs {
    #[command(flatten)]
    pub stat: StatArgs,
    /// Comma-separated numbers of equidistant angles, one study row each
    #[arg(long, conflicts_with_all = ["angles", "num_angles"])]
    pub p_list: Option<String>,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long = "t", default_value_t = 100)]
    pub t: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "gauss:1")]
    pub noise: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateDetectArgs {
    /// Statistic: f1, f2, nb, fnb1 or fnb2
    #[arg(long, default_value = "fnb1")]
    pub stat: String,
    #[arg(long, default_value_t = 0.1)]
    pub d: f64,
    #[arg(long, default_value_t = 0.02)]
    pub h: f64,
    #[arg(long, default_value = "silverman")]
    pub sigma: String,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long = "t", default_value_t = 100)]
    pub t: usize,
    /// Comma-separated fissure widths
    #[arg(long, default_value = "0.02")]
    pub widths: String,
    /// Comma-separated fissure amplitudes
    #[arg(long, default_value = "1.5")]
    pub amplitudes: String,
    /// Comma-separated angle offsets in degrees
    #[arg(long, default_value = "0,5,10,15,20,25")]
    pub offsets: String,
    #[arg(long, default_value_t = 1.0)]
    pub length: f64,
    /// Fissure angle in degrees
    #[arg(long, default_value_t = 30.0)]
    pub fissure_angle: f64,
    /// Detection rate an offset must reach to count as covered
    #[arg(long, default_value_t = 0.75)]
    pub target: f64,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "gauss:1")]
    pub noise: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct FastScanArgs {
    pub image: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub d: f64,
    #[arg(long, default_value_t = 0.02)]
    pub h: f64,
    #[arg(long, default_value = "silverman")]
    pub sigma: String,
    /// Comma-separated stage-1 angles in degrees
    #[arg(long, conflicts_with = "num_angles1")]
    pub angles1: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub num_angles1: usize,
    /// Comma-separated stage-2 angles in degrees
    #[arg(long, conflicts_with = "num_angles2")]
    pub angles2: Option<String>,
    #[arg(long, default_value_t = 9)]
    pub num_angles2: usize,
    /// Fraction of darkest pixels kept as candidates
    #[arg(long, default_value_t = 0.1)]
    pub darkness: f64,
    #[arg(long)]
    pub beta_liberal: Option<f64>,
    #[arg(long)]
    pub beta_conservative: Option<f64>,
    /// Cache holding an F1 record (liberal) and an FnB1 record (conservative)
    #[arg(long)]
    pub threshold_cache: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    pub liberal_level: f64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 20_240_601)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pub d: f64,
    #[arg(long, default_value_t = 0.1)]
    pub h: f64,
    #[arg(long = "t", default_value_t = 60)]
    pub t: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EstimateSigmaArgs {
    pub image: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let echo = serde_json::to_value(&cli.command).expect("arguments serialize");
    let res = match &cli.command {
        Command::Scan(a) => commands::scan(a, echo),
        Command::Generate(a) => commands::generate(a, echo),
        Command::Calibrate(a) => commands::calibrate(a, echo),
        Command::SimulateFp(a) => commands::simulate_fp(a, echo),
        Command::SimulateDetect(a) => commands::simulate_detect(a, echo),
        Command::FastScan(a) => commands::fast_scan(a, echo),
        Command::Verify(a) => commands::verify(a, echo),
        Command::EstimateSigma(a) => commands::estimate_sigma(a, echo),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
