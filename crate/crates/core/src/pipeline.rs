//! End-to-end attribution of a query video to the device that took a set of
//! still images: reference estimation, stabilization check, then either
//! direct estimation from the frames or per-frame registration and
//! aggregation, and a final match decision.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::correlate::{CorrelationConfig, Shift, ShiftRegion};
use crate::error::{HsiError, Result};
use crate::fingerprint::{estimate, whiten, EstimateConfig, Fingerprint, SourceKind};
use crate::geometry::DeviceProfile;
use crate::imagery::FrameSequence;
use crate::search::{
    aggregate_registered, match_planes, match_search, split_estimate, Decision, GridSteps, MatchConfig, MatchResult,
    RegistrationConfig, RegistrationResult, ScaleGrid, SearchSpace, StabilizationConfig, StabilizationReport,
    DEFAULT_TAU_AGG, DEFAULT_TAU_MATCH, DEFAULT_TAU_STAB,
};

pub const BLIND_SCALE: [f64; 2] = [0.35, 1.05];
pub const BLIND_ROTATION_DEG: [f64; 2] = [-2.0, 2.0];
pub const LINKAGE_SCALE: [f64; 2] = [0.25, 1.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub estimate: EstimateConfig,
    pub profile: Option<DeviceProfile>,
    /// Search space when no profile is given.
    pub blind: SearchSpace,
    /// Frames used for the stabilization check and direct estimation.
    pub frame_budget: usize,
    /// Frames registered on the stabilized branch.
    pub registered_frame_budget: usize,
    pub tau_match: f64,
    pub tau_agg: f64,
    pub tau_stab: f64,
    pub whiten: bool,
    pub steps: GridSteps,
    pub correlation: CorrelationConfig,
    pub report_path: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            estimate: EstimateConfig::default(),
            profile: None,
            blind: SearchSpace {
                scale: BLIND_SCALE,
                rotation_deg: BLIND_ROTATION_DEG,
                region: ShiftRegion::Contained,
            },
            frame_budget: 100,
            registered_frame_budget: 5,
            tau_match: DEFAULT_TAU_MATCH,
            tau_agg: DEFAULT_TAU_AGG,
            tau_stab: DEFAULT_TAU_STAB,
            whiten: false,
            steps: GridSteps::default(),
            correlation: CorrelationConfig::default(),
            report_path: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimate.denoise.validate()?;
        if !(self.estimate.eps > 0.0) {
            return Err(HsiError::field("estimate.eps", "must be positive"));
        }
        if self.frame_budget == 0 {
            return Err(HsiError::field("frame_budget", "must be at least 1"));
        }
        if self.registered_frame_budget == 0 {
            return Err(HsiError::field("registered_frame_budget", "must be at least 1"));
        }
        for (name, v) in [("tau_match", self.tau_match), ("tau_agg", self.tau_agg), ("tau_stab", self.tau_stab)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HsiError::field(name, "must be positive"));
            }
        }
        self.blind
            .validate()
            .map_err(|e| HsiError::field("blind", e.to_string()))?;
        self.steps.validate()?;
        self.correlation.validate()?;
        if let Some(p) = &self.profile {
            p.validate()?;
        }
        Ok(())
    }

    pub fn parse(json: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(json).map_err(|e| HsiError::field("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| HsiError::io(path, e))?)
    }

    fn match_cfg(&self) -> MatchConfig {
        MatchConfig {
            tau: self.tau_match,
            correlation: self.correlation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Hsi,
    Linkage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Direct,
    Registered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceSource {
    Profile,
    Blind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchPlan {
    pub source: SpaceSource,
    pub space: SearchSpace,
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timing {
    pub reference_s: f64,
    pub stabilization_s: f64,
    pub query_s: f64,
    pub match_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HsiReport {
    pub mode: Mode,
    pub decision: Decision,
    pub branch: Branch,
    pub stabilization: StabilizationReport,
    #[serde(rename = "match")]
    pub match_result: Option<MatchResult>,
    pub registrations: Vec<RegistrationResult>,
    pub reference_images: usize,
    pub frames_used: usize,
    pub diagnostic: Option<String>,
    pub search: SearchPlan,
    pub timing: Timing,
    pub config: PipelineConfig,
}

impl HsiReport {
    /// JSON with the timing block removed; identical inputs give identical
    /// text.
    pub fn canonical_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("timing");
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s).map_err(|e| HsiError::io(path, e))
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn maybe_whiten(fp: Fingerprint, on: bool) -> Result<Fingerprint> {
    if on {
        whiten(&fp)
    } else {
        Ok(fp)
    }
}

fn check_profile_dims(p: &DeviceProfile, refs: &FrameSequence, query: &FrameSequence) -> Result<()> {
    if p.image_res.dims() != refs.dims() || p.video_res.dims() != query.dims() {
        return Err(HsiError::invalid(format!(
            "profile {} expects {}x{} images and {}x{} video, got {}x{} and {}x{}",
            p.id,
            p.image_res.width,
            p.image_res.height,
            p.video_res.width,
            p.video_res.height,
            refs.dims().1,
            refs.dims().0,
            query.dims().1,
            query.dims().0,
        )));
    }
    Ok(())
}

/// Runs the full identification of `query_frames` against the device that
/// produced `ref_images`.
pub fn run_hsi(ref_images: &FrameSequence, query_frames: &FrameSequence, cfg: &PipelineConfig) -> Result<HsiReport> {
    run(ref_images, query_frames, cfg, Mode::Hsi)
}

/// As [`run_hsi`] for re-encoded or rescaled content: no profile geometry,
/// a wider blind scale range, and whitened fingerprints on both sides.
pub fn run_linkage(ref_images: &FrameSequence, query_frames: &FrameSequence, cfg: &PipelineConfig) -> Result<HsiReport> {
    let mut c = cfg.clone();
    c.profile = None;
    c.blind.scale = [
        c.blind.scale[0].min(LINKAGE_SCALE[0]),
        c.blind.scale[1].max(LINKAGE_SCALE[1]),
    ];
    c.whiten = true;
    run(ref_images, query_frames, &c, Mode::Linkage)
}

fn run(refs: &FrameSequence, query: &FrameSequence, cfg: &PipelineConfig, mode: Mode) -> Result<HsiReport> {
    cfg.validate()?;
    if refs.is_empty() {
        return Err(HsiError::InsufficientFrames { needed: 1, got: 0 });
    }
    if query.len() < 2 {
        return Err(HsiError::InsufficientFrames {
            needed: 2,
            got: query.len(),
        });
    }
    if let Some(p) = &cfg.profile {
        check_profile_dims(p, refs, query)?;
    }
    let start = Instant::now();
    let mut timing = Timing::default();

    let t = Instant::now();
    let k_ref = maybe_whiten(estimate(refs, &cfg.estimate, SourceKind::StillImages)?, cfg.whiten)?;
    timing.reference_s = secs(t);

    let t = Instant::now();
    let frames = query.take(cfg.frame_budget);
    let split = split_estimate(
        &frames,
        &StabilizationConfig {
            tau_stab: cfg.tau_stab,
            estimate: cfg.estimate.clone(),
            correlation: cfg.correlation,
        },
    )?;
    timing.stabilization_s = secs(t);

    let (source, space) = match &cfg.profile {
        Some(p) => (SpaceSource::Profile, SearchSpace::from(&p.search_ranges())),
        None => (SpaceSource::Blind, cfg.blind),
    };
    let stabilized = split.report.stabilized;
    let mut report = HsiReport {
        mode,
        decision: Decision::NoMatch,
        branch: if stabilized { Branch::Registered } else { Branch::Direct },
        stabilization: split.report,
        match_result: None,
        registrations: Vec::new(),
        reference_images: refs.len(),
        frames_used: 0,
        diagnostic: None,
        search: SearchPlan { source, space },
        timing: Timing::default(),
        config: cfg.clone(),
    };

    if !stabilized {
        let t = Instant::now();
        let mut acc = split.even;
        acc.merge(&split.odd)?;
        let k_query = maybe_whiten(
            acc.finalize(cfg.estimate.eps, SourceKind::VideoFrames, &cfg.estimate.denoise)?,
            cfg.whiten,
        )?;
        report.frames_used = frames.len();
        timing.query_s = secs(t);

        let t = Instant::now();
        let grid = ScaleGrid::for_range(space.scale, &cfg.steps)?;
        let m = match_search(&k_ref, &k_query, &grid, &space.region, &cfg.match_cfg())?;
        timing.match_s = secs(t);
        report.decision = m.decision;
        report.match_result = Some(m);
    } else {
        let t = Instant::now();
        let reg_frames = frames.take(cfg.registered_frame_budget);
        report.frames_used = reg_frames.len();
        let reg_cfg = RegistrationConfig {
            tau_agg: cfg.tau_agg,
            steps: cfg.steps,
            correlation: cfg.correlation,
            estimate: cfg.estimate.clone(),
        };
        let aggregated = match aggregate_registered(&reg_frames, &k_ref, &space, &reg_cfg) {
            Ok(a) => Some(a),
            Err(HsiError::NoRegistrableFrames { .. }) => None,
            Err(e) => return Err(e),
        };
        timing.query_s = secs(t);
        match aggregated {
            None => report.diagnostic = Some("no-registrable-frames".into()),
            Some(a) => {
                let t = Instant::now();
                let (r, q) = a.comparison_planes()?;
                let k_seen = maybe_whiten(a.predicted.with_plane(r)?, cfg.whiten)?;
                let k_query = maybe_whiten(a.fingerprint.with_plane(q)?, cfg.whiten)?;
                let m = match_planes(
                    k_seen.plane(),
                    k_query.plane(),
                    &ScaleGrid::explicit(&[1.0])?,
                    &ShiftRegion::point(Shift::ZERO),
                    &cfg.match_cfg(),
                )?;
                timing.match_s = secs(t);
                report.registrations = a.registrations;
                report.decision = m.decision;
                report.match_result = Some(m);
            }
        }
    }
    timing.total_s = secs(start);
    report.timing = timing;
    if let Some(path) = &cfg.report_path {
        report.write(path)?;
    }
    Ok(report)
}
