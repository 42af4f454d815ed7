//! Decision statistics over the geometric parameter space: the scale search
//! `P = max_r PCE(r)`, the false-alarm bound, stabilization detection, and
//! per-frame registration of stabilized video against an image reference.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::correlate::{pce, CorrelationConfig, Correlator, Centered, Shift, ShiftRegion, ShiftWindow};
use crate::denoise::image_residual;
use crate::error::{HsiError, Result};
use crate::fingerprint::{accumulate_frames, Accumulator, EstimateConfig, Fingerprint, SourceKind};
use crate::geometry::{apply_transform, resample, rotate, warp_to_source, SimilarityTransform, TransformRanges, MAX_ROTATION_DEG, MAX_SCALE};
use crate::imagery::FrameSequence;
use crate::plane::{pearson_masked, Plane};
use crate::report::sig6;

pub const DEFAULT_TAU_MATCH: f64 = 50.0;
pub const DEFAULT_TAU_AGG: f64 = 38.0;
pub const DEFAULT_TAU_STAB: f64 = 50.0;

/// Upper bound on the false-alarm rate of a max-PCE test over `k`
/// independent cells at threshold `tau`: `1 - (1 - Q(sqrt(tau)))^k`.
pub fn far(tau: f64, k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let q = std.sf(tau.max(0.0).sqrt());
    if k == 1 {
        return q;
    }
    // 1 - (1-q)^k without cancellation for tiny q
    -((k as f64) * (-q).ln_1p()).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSteps {
    pub coarse_scale: f64,
    pub fine_scale: f64,
    /// Half-width of the fine window around the coarse optimum.
    pub fine_half_width: f64,
    pub rotation_deg: f64,
    /// Halving passes that refine a registration between grid points.
    pub subgrid_passes: u32,
}

impl Default for GridSteps {
    fn default() -> Self {
        Self {
            coarse_scale: 0.05,
            fine_scale: 0.005,
            fine_half_width: 0.05,
            rotation_deg: 0.2,
            subgrid_passes: 2,
        }
    }
}

impl GridSteps {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("coarse_scale", self.coarse_scale),
            ("fine_scale", self.fine_scale),
            ("fine_half_width", self.fine_half_width),
            ("rotation_deg", self.rotation_deg),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HsiError::field(format!("steps.{name}"), "must be positive"));
            }
        }
        if self.subgrid_passes > 8 {
            return Err(HsiError::field("steps.subgrid_passes", "at most 8"));
        }
        Ok(())
    }
}

fn round9(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

/// Multiples of `step` inside `[lo, hi]`; the midpoint if there are none.
fn aligned(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let k0 = (lo / step - 1e-9).ceil() as i64;
    let k1 = (hi / step + 1e-9).floor() as i64;
    let v: Vec<f64> = (k0..=k1).map(|k| round9(k as f64 * step)).collect();
    if v.is_empty() {
        vec![round9((lo + hi) / 2.0)]
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Refinement {
    pub fine_step: f64,
    pub fine_half_width: f64,
}

/// Candidate scales, optionally refined around the best coarse value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleGrid {
    values: Vec<f64>,
    range: [f64; 2],
    refinement: Option<Refinement>,
}

impl ScaleGrid {
    /// Exactly these scales, in increasing order.
    pub fn explicit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(HsiError::invalid("scale grid is empty"));
        }
        if let Some(v) = values.iter().find(|&&v| !(v > 0.0 && v <= MAX_SCALE)) {
            return Err(HsiError::field("scale grid", format!("{v} outside (0, {MAX_SCALE}]")));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        Ok(Self {
            range: [v[0], v[v.len() - 1]],
            values: v,
            refinement: None,
        })
    }

    /// Grid over `[lo, hi]`. Intervals no wider than two fine half-widths
    /// are scanned at the fine step directly; wider ones get a coarse pass
    /// followed by a fine pass around its optimum.
    pub fn for_range([lo, hi]: [f64; 2], steps: &GridSteps) -> Result<Self> {
        steps.validate()?;
        if !(lo > 0.0 && lo <= hi && hi <= MAX_SCALE) {
            return Err(HsiError::field("scale range", format!("[{lo}, {hi}] invalid")));
        }
        if hi - lo <= 2.0 * steps.fine_half_width + 1e-12 {
            return Ok(Self {
                values: aligned(lo, hi, steps.fine_scale),
                range: [lo, hi],
                refinement: None,
            });
        }
        Ok(Self {
            values: aligned(lo, hi, steps.coarse_scale),
            range: [lo, hi],
            refinement: Some(Refinement {
                fine_step: steps.fine_scale,
                fine_half_width: steps.fine_half_width,
            }),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn range(&self) -> [f64; 2] {
        self.range
    }

    pub fn refinement(&self) -> Option<Refinement> {
        self.refinement
    }

    fn fine_around(&self, center: f64) -> Vec<f64> {
        match self.refinement {
            None => Vec::new(),
            Some(r) => aligned(
                (center - r.fine_half_width).max(self.range[0]),
                (center + r.fine_half_width).min(self.range[1]),
                r.fine_step,
            ),
        }
    }
}

/// Rotation candidates: multiples of `step` in the range.
pub fn rotation_grid([lo, hi]: [f64; 2], step: f64) -> Vec<f64> {
    aligned(lo, hi, step)
}

/// Best cell found at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridScore {
    #[serde(serialize_with = "sig6")]
    pub scale: f64,
    #[serde(serialize_with = "sig6")]
    pub rotation_deg: f64,
    #[serde(serialize_with = "sig6")]
    pub pce: f64,
    pub shift: Shift,
    #[serde(serialize_with = "sig6")]
    pub peak_rho: f64,
    /// Shifts in the search region at this grid point.
    pub cells: u64,
}

/// Total order used for argmax: larger PCE, then smaller scale, smaller
/// |rotation|, smaller shift.
fn ranks_above(a: &GridScore, b: &GridScore) -> bool {
    use std::cmp::Ordering::*;
    let ord = b
        .pce
        .total_cmp(&a.pce)
        .then(a.scale.total_cmp(&b.scale))
        .then(a.rotation_deg.abs().total_cmp(&b.rotation_deg.abs()))
        .then(a.rotation_deg.total_cmp(&b.rotation_deg))
        .then(a.shift.cmp(&b.shift));
    ord == Less
}

fn best_of<'a>(scores: impl IntoIterator<Item = &'a GridScore>) -> Option<GridScore> {
    scores.into_iter().fold(None, |best, s| match best {
        Some(b) if !ranks_above(s, &b) => Some(b),
        _ => Some(*s),
    })
}

/// Runs `eval` over the grid scales (and the fine pass, if any) in parallel.
/// `eval` returns `None` for scales where the search region is empty.
fn staged<F>(grid: &ScaleGrid, eval: F) -> Result<Vec<GridScore>>
where
    F: Fn(f64) -> Result<Option<GridScore>> + Sync,
{
    let run = |scales: &[f64]| -> Result<Vec<GridScore>> {
        let out: Vec<Option<GridScore>> = scales.par_iter().map(|&s| eval(s)).collect::<Result<_>>()?;
        Ok(out.into_iter().flatten().collect())
    };
    let mut scores = run(grid.values())?;
    if grid.refinement.is_some() {
        if let Some(best) = best_of(&scores) {
            let seen: Vec<f64> = scores.iter().map(|s| s.scale).collect();
            let fine: Vec<f64> = grid
                .fine_around(best.scale)
                .into_iter()
                .filter(|v| !seen.contains(v))
                .collect();
            scores.extend(run(&fine)?);
        }
    }
    scores.sort_by(|a, b| a.scale.total_cmp(&b.scale).then(a.rotation_deg.total_cmp(&b.rotation_deg)));
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Match,
    NoMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    pub tau: f64,
    pub correlation: CorrelationConfig,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU_MATCH,
            correlation: CorrelationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleScore {
    #[serde(serialize_with = "sig6")]
    pub r: f64,
    #[serde(serialize_with = "sig6")]
    pub pce: f64,
    pub shift: Shift,
    #[serde(serialize_with = "sig6")]
    pub peak_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    #[serde(serialize_with = "sig6")]
    pub p_stat: f64,
    #[serde(serialize_with = "sig6")]
    pub r_peak: f64,
    pub s_peak: Shift,
    #[serde(serialize_with = "sig6")]
    pub peak_rho: f64,
    pub pce_infinite: bool,
    pub per_scale: Vec<ScaleScore>,
    pub decision: Decision,
    #[serde(serialize_with = "sig6")]
    pub threshold_used: f64,
    #[serde(serialize_with = "sig6")]
    pub far_bound: f64,
    pub k_tested: u64,
}

fn decide(pce: f64, rho: f64, tau: f64) -> Decision {
    if pce > tau && rho > 0.0 {
        Decision::Match
    } else {
        Decision::NoMatch
    }
}

/// Scale search of `query` inside the rescaled `reference`.
pub fn match_search(
    reference: &Fingerprint,
    query: &Fingerprint,
    grid: &ScaleGrid,
    region: &ShiftRegion,
    cfg: &MatchConfig,
) -> Result<MatchResult> {
    match_planes(reference.plane(), query.plane(), grid, region, cfg)
}

pub fn match_planes(
    reference: &Plane,
    query: &Plane,
    grid: &ScaleGrid,
    region: &ShiftRegion,
    cfg: &MatchConfig,
) -> Result<MatchResult> {
    cfg.correlation.validate()?;
    let corr = Correlator::new(query)?;
    let scores = staged(grid, |s| {
        let y = resample(reference, s)?;
        let Ok(w) = region.resolve(query.dims(), y.dims()) else {
            return Ok(None);
        };
        let surf = corr.surface(&Centered::new(&y)?, &w, cfg.correlation.energy_margin);
        let p = pce(&surf, &cfg.correlation)?;
        Ok(Some(GridScore {
            scale: s,
            rotation_deg: 0.0,
            pce: p.pce,
            shift: p.peak_shift,
            peak_rho: p.peak_rho,
            cells: w.len() as u64,
        }))
    })?;
    let best = best_of(&scores).ok_or_else(|| {
        HsiError::invalid("no candidate scale leaves an admissible shift for the query")
    })?;
    let k: u64 = scores.iter().map(|s| s.cells).sum();
    Ok(MatchResult {
        p_stat: best.pce,
        r_peak: best.scale,
        s_peak: best.shift,
        peak_rho: best.peak_rho,
        pce_infinite: best.pce.is_infinite(),
        per_scale: scores
            .iter()
            .map(|s| ScaleScore {
                r: s.scale,
                pce: s.pce,
                shift: s.shift,
                peak_rho: s.peak_rho,
            })
            .collect(),
        decision: decide(best.pce, best.peak_rho, cfg.tau),
        threshold_used: cfg.tau,
        far_bound: far(cfg.tau, k),
        k_tested: k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilizationConfig {
    pub tau_stab: f64,
    pub estimate: EstimateConfig,
    pub correlation: CorrelationConfig,
}

impl Default for StabilizationConfig {
    fn default() -> Self {
        Self {
            tau_stab: DEFAULT_TAU_STAB,
            estimate: EstimateConfig::default(),
            correlation: CorrelationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilizationReport {
    #[serde(serialize_with = "sig6")]
    pub split_pce: f64,
    #[serde(serialize_with = "sig6")]
    pub split_peak_rho: f64,
    pub stabilized: bool,
    pub half_sizes: (usize, usize),
    #[serde(serialize_with = "sig6")]
    pub threshold_used: f64,
}

/// Even/odd half fingerprints and their comparison.
pub struct SplitEstimate {
    pub report: StabilizationReport,
    pub even: Accumulator,
    pub odd: Accumulator,
}

pub fn split_estimate(frames: &FrameSequence, cfg: &StabilizationConfig) -> Result<SplitEstimate> {
    if frames.len() < 2 {
        return Err(HsiError::InsufficientFrames {
            needed: 2,
            got: frames.len(),
        });
    }
    cfg.correlation.validate()?;
    let evens: Vec<usize> = (0..frames.len()).step_by(2).collect();
    let odds: Vec<usize> = (1..frames.len()).step_by(2).collect();
    let even = accumulate_frames(frames, &evens, &cfg.estimate)?;
    let odd = accumulate_frames(frames, &odds, &cfg.estimate)?;
    let ke = even.finalize(cfg.estimate.eps, SourceKind::VideoFrames, &cfg.estimate.denoise)?;
    let ko = odd.finalize(cfg.estimate.eps, SourceKind::VideoFrames, &cfg.estimate.denoise)?;
    let corr = Correlator::new(ke.plane())?;
    let surf = corr.surface(
        &Centered::new(ko.plane())?,
        &ShiftWindow::point(Shift::ZERO),
        cfg.correlation.energy_margin,
    );
    let p = pce(&surf, &cfg.correlation)?;
    let aligned = p.peak_rho > 0.0 && p.pce >= cfg.tau_stab;
    Ok(SplitEstimate {
        report: StabilizationReport {
            split_pce: p.pce,
            split_peak_rho: p.peak_rho,
            stabilized: !aligned,
            half_sizes: (evens.len(), odds.len()),
            threshold_used: cfg.tau_stab,
        },
        even,
        odd,
    })
}

/// Splits the frames by index parity, estimates a fingerprint from each
/// half and compares them with no geometric search. Misaligned halves
/// (low PCE) reveal in-camera stabilization.
pub fn detect_stabilization(frames: &FrameSequence, cfg: &StabilizationConfig) -> Result<StabilizationReport> {
    split_estimate(frames, cfg).map(|s| s.report)
}

/// Parameter intervals for a registration search. Translation is searched
/// over `region` (crop offsets in the scaled, rotated reference).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub scale: [f64; 2],
    pub rotation_deg: [f64; 2],
    pub region: ShiftRegion,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let [s0, s1] = self.scale;
        if !(s0 > 0.0 && s0 <= s1 && s1 <= MAX_SCALE) {
            return Err(HsiError::field("scale", format!("[{s0}, {s1}] invalid")));
        }
        let [r0, r1] = self.rotation_deg;
        if !(r0 <= r1 && r0 >= -MAX_ROTATION_DEG && r1 <= MAX_ROTATION_DEG) {
            return Err(HsiError::field("rotation_deg", format!("[{r0}, {r1}] invalid")));
        }
        Ok(())
    }
}

impl From<&TransformRanges> for SearchSpace {
    fn from(r: &TransformRanges) -> Self {
        Self {
            scale: r.scale,
            rotation_deg: r.rotation_deg,
            region: ShiftRegion::Window { x: r.crop_x, y: r.crop_y },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    pub tau_agg: f64,
    pub steps: GridSteps,
    pub correlation: CorrelationConfig,
    pub estimate: EstimateConfig,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            tau_agg: DEFAULT_TAU_AGG,
            steps: GridSteps::default(),
            correlation: CorrelationConfig::default(),
            estimate: EstimateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegistrationResult {
    pub transform: SimilarityTransform,
    #[serde(serialize_with = "sig6")]
    pub pce: f64,
    #[serde(serialize_with = "sig6")]
    pub peak_rho: f64,
    pub accepted: bool,
    pub k_tested: u64,
}

/// Registers frame residuals against an image-domain reference over a
/// (scale, rotation) grid, resolving translation from the correlation peak.
/// Transformed references are cached and shared across frames.
pub struct Registrar<'a> {
    reference: &'a Plane,
    region: ShiftRegion,
    space: SearchSpace,
    scales: ScaleGrid,
    rotations: Vec<f64>,
    cfg: RegistrationConfig,
    cache: Mutex<HashMap<(u64, u64), Arc<(Centered, (usize, usize))>>>,
}

impl<'a> Registrar<'a> {
    pub fn new(reference: &'a Plane, space: &SearchSpace, cfg: &RegistrationConfig) -> Result<Self> {
        space.validate()?;
        cfg.correlation.validate()?;
        Ok(Self {
            reference,
            region: space.region,
            space: *space,
            scales: ScaleGrid::for_range(space.scale, &cfg.steps)?,
            rotations: rotation_grid(space.rotation_deg, cfg.steps.rotation_deg),
            cfg: cfg.clone(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn scales(&self) -> &ScaleGrid {
        &self.scales
    }

    pub fn rotations(&self) -> &[f64] {
        &self.rotations
    }

    fn transformed(&self, scale: f64, rot: f64) -> Result<Arc<(Centered, (usize, usize))>> {
        let key = (scale.to_bits(), rot.to_bits());
        if let Some(v) = self.cache.lock().expect("registrar cache poisoned").get(&key) {
            return Ok(v.clone());
        }
        let (y, _) = rotate(&resample(self.reference, scale)?, rot)?;
        let v = Arc::new((Centered::new(&y)?, y.dims()));
        Ok(self
            .cache
            .lock()
            .expect("registrar cache poisoned")
            .entry(key)
            .or_insert(v)
            .clone())
    }

    /// Best overlap NCC within two pixels of `near`, and where it lies.
    /// Only shifts at which the frame lies inside the transformed reference
    /// count, and the rotation's blank corners are left out, so values at
    /// different scales and angles are comparable.
    fn local_peak(&self, residual: &Plane, scale: f64, rot: f64, near: Shift) -> Result<Option<(f64, Shift)>> {
        let (y, ym) = rotate(&resample(self.reference, scale)?, rot)?;
        let (qr, qc) = residual.dims();
        if qr > y.rows() || qc > y.cols() {
            return Ok(None);
        }
        let inside = ShiftWindow::new(0, (y.cols() - qc) as i64, 0, (y.rows() - qr) as i64);
        let w = inside.intersect(&ShiftWindow::new(near.x - 2, near.x + 2, near.y - 2, near.y + 2));
        let mut out: Option<(f64, Shift)> = None;
        if w.is_empty() {
            return Ok(out);
        }
        for sy in w.y[0]..=w.y[1] {
            for sx in w.x[0]..=w.x[1] {
                let (r0, c0) = (sy as usize, sx as usize);
                let v = pearson_masked(residual, &y.sub_plane(r0, c0, qr, qc)?, &ym.sub_plane(r0, c0, qr, qc)?)?;
                if out.map_or(true, |(b, _)| v > b) {
                    out = Some((v, Shift::new(sx, sy)));
                }
            }
        }
        Ok(out)
    }

    /// Halving search around the grid optimum on overlap correlation. The
    /// grid decides acceptance; this only sharpens the transform used to
    /// pull the residual back.
    fn refine(&self, residual: &Plane, best: &GridScore) -> Result<(f64, f64, Shift)> {
        let fallback = (best.scale, best.rotation_deg, best.shift);
        let Some((rho, shift)) = self.local_peak(residual, best.scale, best.rotation_deg, best.shift)? else {
            return Ok(fallback);
        };
        let steps = &self.cfg.steps;
        let mut cur = (rho, best.scale, best.rotation_deg, shift);
        let (mut hs, mut hr) = (steps.fine_scale, steps.rotation_deg);
        let [slo, shi] = self.space.scale;
        let [rlo, rhi] = self.space.rotation_deg;
        for _ in 0..steps.subgrid_passes {
            hs /= 2.0;
            hr /= 2.0;
            let mut cand = Vec::with_capacity(8);
            for ds in [-1.0, 0.0, 1.0] {
                for dr in [-1.0, 0.0, 1.0] {
                    let (s, r) = (round9(cur.1 + ds * hs), round9(cur.2 + dr * hr));
                    if (ds, dr) != (0.0, 0.0) && s >= slo && s <= shi && r >= rlo && r <= rhi {
                        cand.push((s, r));
                    }
                }
            }
            let near = cur.3;
            let found: Vec<Option<(f64, Shift)>> = cand
                .par_iter()
                .map(|&(s, r)| self.local_peak(residual, s, r, near))
                .collect::<Result<_>>()?;
            for (&(s, r), f) in cand.iter().zip(found) {
                if let Some((rho, sh)) = f {
                    if rho > cur.0 {
                        cur = (rho, s, r, sh);
                    }
                }
            }
        }
        Ok((cur.1, cur.2, cur.3))
    }

    pub fn register(&self, residual: &Plane) -> Result<RegistrationResult> {
        let corr = Correlator::new(residual)?;
        let cc = &self.cfg.correlation;
        let scores = staged(&self.scales, |s| {
            let per_rot: Vec<GridScore> = self
                .rotations
                .par_iter()
                .map(|&rot| -> Result<Option<GridScore>> {
                    let t = self.transformed(s, rot)?;
                    let Ok(w) = self.region.resolve(residual.dims(), t.1) else {
                        return Ok(None);
                    };
                    let p = pce(&corr.surface(&t.0, &w, cc.energy_margin), cc)?;
                    Ok(Some(GridScore {
                        scale: s,
                        rotation_deg: rot,
                        pce: p.pce,
                        shift: p.peak_shift,
                        peak_rho: p.peak_rho,
                        cells: w.len() as u64,
                    }))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            let cells = per_rot.iter().map(|g| g.cells).sum();
            Ok(best_of(&per_rot).map(|b| GridScore { cells, ..b }))
        })?;
        let best = best_of(&scores)
            .ok_or_else(|| HsiError::invalid("registration grid has no admissible point"))?;
        let (scale, rotation_deg, shift) = self.refine(residual, &best)?;
        Ok(RegistrationResult {
            transform: SimilarityTransform::new(scale, rotation_deg, shift.x, shift.y),
            pce: best.pce,
            peak_rho: best.peak_rho,
            accepted: best.pce > self.cfg.tau_agg && best.peak_rho > 0.0,
            k_tested: scores.iter().map(|s| s.cells).sum(),
        })
    }
}

/// Registers one frame residual against `reference` within `ranges`.
pub fn register_frame(
    residual: &Plane,
    reference: &Fingerprint,
    ranges: &TransformRanges,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    Registrar::new(reference.plane(), &SearchSpace::from(ranges), cfg)?.register(residual)
}

pub struct Aggregate {
    pub fingerprint: Fingerprint,
    /// The reference as the accepted frames would have sampled it, pulled
    /// back and weighted exactly like `fingerprint`.
    pub predicted: Fingerprint,
    pub registrations: Vec<RegistrationResult>,
    /// Bounding box of the reference cells covered by an accepted frame,
    /// as (row0, col0, rows, cols).
    pub footprint: (usize, usize, usize, usize),
}

impl Aggregate {
    /// Predicted reference and aggregate, cut to the footprint and brought
    /// back to the median registered scale. Downscaled PRNU aliases
    /// differently on every sampling grid, so the aggregate is compared with
    /// the reference passed through the same frame grids rather than with
    /// the reference itself; at the frames' own resolution the peak has the
    /// width the PCE neighbourhood is sized for.
    pub fn comparison_planes(&self) -> Result<(Plane, Plane)> {
        let mut scales: Vec<f64> = self
            .registrations
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.transform.scale)
            .collect();
        if scales.is_empty() {
            return Err(HsiError::invalid("aggregate has no accepted registrations"));
        }
        scales.sort_by(f64::total_cmp);
        let s = scales[(scales.len() - 1) / 2].min(1.0);
        let (r0, c0, rows, cols) = self.footprint;
        Ok((
            resample(&self.predicted.plane().sub_plane(r0, c0, rows, cols)?, s)?,
            resample(&self.fingerprint.plane().sub_plane(r0, c0, rows, cols)?, s)?,
        ))
    }
}

fn support_box(den: &Plane) -> (usize, usize, usize, usize) {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..den.rows() {
        for (c, &v) in den.row(r).iter().enumerate() {
            if v > 0.0 {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    if r0 == usize::MAX {
        return (0, 0, den.rows(), den.cols());
    }
    (r0, c0, r1 - r0 + 1, c1 - c0 + 1)
}

/// Registers every frame against `reference` over `space`, pulls the accepted frames'
/// residuals back into the reference geometry and combines them with the
/// MLE. Pixels a frame does not cover stay out of the sums.
pub fn aggregate_registered(
    frames: &FrameSequence,
    reference: &Fingerprint,
    space: &SearchSpace,
    cfg: &RegistrationConfig,
) -> Result<Aggregate> {
    if frames.is_empty() {
        return Err(HsiError::InsufficientFrames { needed: 1, got: 0 });
    }
    let registrar = Registrar::new(reference.plane(), space, cfg)?;
    let ref_dims = reference.dims();
    let sat = cfg.estimate.saturation_threshold;
    let mut acc = Accumulator::new(ref_dims.0, ref_dims.1);
    let mut pred = Accumulator::new(ref_dims.0, ref_dims.1);
    let mut registrations = Vec::with_capacity(frames.len());
    let batch = rayon::current_num_threads().max(1);
    let indices: Vec<usize> = (0..frames.len()).collect();
    for chunk in indices.chunks(batch) {
        let out: Vec<(RegistrationResult, Option<(Accumulator, Accumulator)>)> = chunk
            .par_iter()
            .map(|&i| -> Result<_> {
                let img = frames.load(i)?;
                let w = image_residual(&img, &cfg.estimate.denoise)?;
                let r = registrar.register(&w)?;
                if !r.accepted {
                    return Ok((r, None));
                }
                let (ww, m) = warp_to_source(&w, &r.transform, ref_dims)?;
                let (wi, _) = warp_to_source(&img.luma, &r.transform, ref_dims)?;
                let (seen, _) = apply_transform(reference.plane(), &r.transform, w.dims())?;
                let (seen, _) = warp_to_source(&seen, &r.transform, ref_dims)?;
                let seen = Plane::from_fn(ref_dims.0, ref_dims.1, |row, col| seen.get(row, col) * wi.get(row, col));
                let mask = match sat {
                    Some(t) => Plane::from_fn(ref_dims.0, ref_dims.1, |row, col| {
                        if m.get(row, col) == 1.0 && wi.get(row, col) < t {
                            1.0
                        } else {
                            0.0
                        }
                    }),
                    None => m,
                };
                let mut a = Accumulator::new(ref_dims.0, ref_dims.1);
                a.accumulate(&wi, &ww, Some(&mask))?;
                let mut p = Accumulator::new(ref_dims.0, ref_dims.1);
                p.accumulate(&wi, &seen, Some(&mask))?;
                Ok((r, Some((a, p))))
            })
            .collect::<Result<_>>()?;
        for (r, a) in out {
            registrations.push(r);
            if let Some((a, p)) = a {
                acc.merge(&a)?;
                pred.merge(&p)?;
            }
        }
    }
    if acc.count() == 0 {
        return Err(HsiError::NoRegistrableFrames { tau: cfg.tau_agg });
    }
    let footprint = support_box(&acc.denominator());
    let fingerprint = acc.finalize(cfg.estimate.eps, SourceKind::RegisteredFrames, &cfg.estimate.denoise)?;
    let predicted = pred.finalize(cfg.estimate.eps, SourceKind::RegisteredFrames, &cfg.estimate.denoise)?;
    Ok(Aggregate {
        fingerprint,
        predicted,
        registrations,
        footprint,
    })
}
