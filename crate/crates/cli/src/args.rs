use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hsi::correlate::ShiftRegion;

/// Camera fingerprinting and image/video source identification.
///
/// Exit status: 0 match or success, 1 no match, 2 usage or input error,
/// 3 internal error.
#[derive(Parser, Debug)]
#[command(name = "hsi", version)]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate a fingerprint from a directory of images or frames.
    Fingerprint(FingerprintArgs),
    /// Scale search of a query fingerprint inside a reference fingerprint.
    Match(MatchArgs),
    /// Check a frame directory for in-camera stabilization.
    DetectStab(DetectStabArgs),
    /// Register frames against a reference and aggregate the accepted ones.
    Register(RegisterArgs),
    /// Full identification of a query video against reference images.
    Hsi(PipelineArgs),
    /// As `hsi`, for re-encoded or rescaled content.
    Link(PipelineArgs),
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Print the built-in device profiles.
    Profiles(ProfilesArgs),
}

impl Command {
    pub fn report_path(&self) -> Option<&Path> {
        match self {
            Command::Fingerprint(a) => a.report.as_deref(),
            Command::Match(a) => a.report.as_deref(),
            Command::DetectStab(a) => a.report.as_deref(),
            Command::Register(a) => a.report.as_deref(),
            Command::Hsi(a) | Command::Link(a) => a.report.as_deref(),
            Command::Simulate(a) => a.report.as_deref(),
            Command::Profiles(a) => a.out.as_deref(),
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum InputKind {
    Images,
    Video,
}

#[derive(Args, Debug)]
pub struct FingerprintArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub whiten: bool,
    /// Estimation settings (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "images")]
    pub kind: InputKind,
    /// Use only the first N files.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ProfileArgs {
    /// Device profile id (built-in, or from --profile-file).
    #[arg(long)]
    pub profile: Option<String>,
    /// JSON file with one profile or an array of profiles.
    #[arg(long)]
    pub profile_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    #[command(flatten)]
    pub profile: ProfileArgs,
    /// Explicit scales, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "scale_range")]
    pub scales: Option<Vec<f64>>,
    /// Scale interval `lo,hi`.
    #[arg(long, value_parser = parse_pair)]
    pub scale_range: Option<[f64; 2]>,
    /// `contained`, `all`, `central:F` or `window:X0,X1,Y0,Y1`.
    #[arg(long, value_parser = parse_region)]
    pub region: Option<ShiftRegion>,
    #[arg(long, default_value_t = hsi::search::DEFAULT_TAU_MATCH)]
    pub tau: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DetectStabArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long, default_value_t = hsi::search::DEFAULT_TAU_STAB)]
    pub tau: f64,
    /// Use only the first N frames.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RegisterArgs {
    /// Reference fingerprint file.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub frames: PathBuf,
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long, value_parser = parse_pair)]
    pub scale_range: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub rotation_range: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_region)]
    pub region: Option<ShiftRegion>,
    #[arg(long, default_value_t = hsi::search::DEFAULT_TAU_AGG)]
    pub tau_agg: f64,
    #[arg(long, default_value_t = 5)]
    pub limit: usize,
    /// Where to write the aggregated fingerprint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long)]
    pub ref_images: PathBuf,
    #[arg(long)]
    pub query_frames: PathBuf,
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Frame budget for the query fingerprint.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Pipeline settings (JSON); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProfilesArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let v: Vec<&str> = s.split(',').collect();
    if v.len() != 2 {
        return Err(format!("expected `lo,hi`, got `{s}`"));
    }
    let lo: f64 = v[0].trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = v[1].trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo <= hi) {
        return Err(format!("`{s}`: lower bound exceeds upper bound"));
    }
    Ok([lo, hi])
}

fn parse_region(s: &str) -> Result<ShiftRegion, String> {
    if s == "all" {
        return Ok(ShiftRegion::All);
    }
    if s == "contained" {
        return Ok(ShiftRegion::Contained);
    }
    if let Some(f) = s.strip_prefix("central:") {
        let fraction: f64 = f.parse().map_err(|e| format!("{e}"))?;
        return Ok(ShiftRegion::Central { fraction });
    }
    if let Some(w) = s.strip_prefix("window:") {
        let v: Vec<i64> = w
            .split(',')
            .map(|x| x.trim().parse::<i64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("{e}"))?;
        if let [x0, x1, y0, y1] = v[..] {
            return Ok(ShiftRegion::Window { x: [x0, x1], y: [y0, y1] });
        }
    }
    Err(format!("expected `contained`, `all`, `central:F` or `window:X0,X1,Y0,Y1`, got `{s}`"))
}
