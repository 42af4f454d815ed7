use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use hsi::correlate::ShiftRegion;
use hsi::error::{HsiError, Result};
use hsi::fingerprint::{self, estimate, whiten, EstimateConfig, SourceKind};
use hsi::geometry::{builtin_profiles, find_profile, load_profiles, DeviceProfile};
use hsi::imagery::open_sequence;
use hsi::pipeline::{run_hsi, run_linkage, PipelineConfig, BLIND_SCALE};
use hsi::search::{
    aggregate_registered, detect_stabilization, match_search, Decision, GridSteps, MatchConfig, RegistrationConfig,
    ScaleGrid, SearchSpace, StabilizationConfig,
};
use hsi::simulator::{generate_dataset, DatasetSpec};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::args::{
    Command, DetectStabArgs, FingerprintArgs, InputKind, MatchArgs, PipelineArgs, ProfileArgs, ProfilesArgs,
    RegisterArgs, SimulateArgs,
};

pub enum Outcome {
    Success,
    Negative,
}

fn from_decision(d: Decision) -> Outcome {
    match d {
        Decision::Match => Outcome::Success,
        Decision::NoMatch => Outcome::Negative,
    }
}

pub fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Fingerprint(a) => cmd_fingerprint(a),
        Command::Match(a) => cmd_match(a),
        Command::DetectStab(a) => cmd_detect_stab(a),
        Command::Register(a) => cmd_register(a),
        Command::Hsi(a) => cmd_pipeline(a, false),
        Command::Link(a) => cmd_pipeline(a, true),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Profiles(a) => cmd_profiles(a),
    }
}

fn emit(value: &Value, path: Option<&Path>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    match path {
        Some(p) => fs::write(p, s).map_err(|e| HsiError::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(s.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| HsiError::Io {
                    path: "<stdout>".into(),
                    source: e,
                })
        }
    }
}

fn error_kind(e: &HsiError) -> &'static str {
    match e {
        HsiError::Decode { .. } => "decode",
        HsiError::InvalidInput(_) => "invalid-input",
        HsiError::NoFrames(_) => "no-frames",
        HsiError::InconsistentSequence { .. } => "inconsistent-sequence",
        HsiError::Degenerate(_) => "degenerate",
        HsiError::EmptyAccumulator => "empty-accumulator",
        HsiError::Format { .. } => "format",
        HsiError::UnsupportedVersion(_) => "unsupported-version",
        HsiError::InsufficientFrames { .. } => "insufficient-frames",
        HsiError::NoRegistrableFrames { .. } => "no-registrable-frames",
        HsiError::UnknownProfile { .. } => "unknown-profile",
        HsiError::InvalidField { .. } => "invalid-field",
        HsiError::Io { .. } => "io",
        HsiError::Json(_) => "json",
    }
}

/// Best effort: a failed command still leaves a machine-readable report.
pub fn write_error_report(path: Option<&Path>, e: &HsiError) {
    if let Some(p) = path {
        let v = json!({ "error": { "kind": error_kind(e), "message": e.to_string() } });
        let _ = emit(&v, Some(p));
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| HsiError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&s).map_err(|e| HsiError::InvalidField {
        field: what.into(),
        reason: format!("{}: {e}", path.display()),
    })
}

fn resolve_profile(p: &ProfileArgs) -> Result<Option<DeviceProfile>> {
    let list = match &p.profile_file {
        Some(f) => load_profiles(f)?,
        None => builtin_profiles(),
    };
    match (&p.profile, &p.profile_file) {
        (Some(id), _) => Ok(Some(find_profile(&list, id)?.clone())),
        (None, Some(_)) if list.len() == 1 => Ok(Some(list[0].clone())),
        (None, Some(f)) => Err(HsiError::InvalidField {
            field: "profile".into(),
            reason: format!("{} holds {} profiles; choose one with --profile", f.display(), list.len()),
        }),
        (None, None) => Ok(None),
    }
}

fn timing(t: Instant) -> Value {
    json!({ "total_s": t.elapsed().as_secs_f64() })
}

fn cmd_fingerprint(a: FingerprintArgs) -> Result<Outcome> {
    let t = Instant::now();
    let cfg: EstimateConfig = match &a.config {
        Some(p) => read_json(p, "config")?,
        None => EstimateConfig::default(),
    };
    cfg.denoise.validate()?;
    let mut seq = open_sequence(&a.images)?;
    if let Some(n) = a.limit {
        seq = seq.take(n);
    }
    let kind = match a.kind {
        InputKind::Images => SourceKind::StillImages,
        InputKind::Video => SourceKind::VideoFrames,
    };
    let mut fp = estimate(&seq, &cfg, kind)?;
    if a.whiten {
        fp = whiten(&fp)?;
    }
    fingerprint::save(&fp, &a.out)?;
    let (rows, cols) = fp.dims();
    emit(
        &json!({
            "command": "fingerprint",
            "out": a.out,
            "num_inputs": fp.num_inputs,
            "rows": rows,
            "cols": cols,
            "source_kind": fp.source_kind,
            "postprocess": fp.postprocess,
            "config": cfg,
            "timing": timing(t),
        }),
        a.report.as_deref(),
    )?;
    Ok(Outcome::Success)
}

fn cmd_match(a: MatchArgs) -> Result<Outcome> {
    let t = Instant::now();
    let reference = fingerprint::load(&a.reference)?;
    let query = fingerprint::load(&a.query)?;
    let profile = resolve_profile(&a.profile)?;
    let ranges = profile.as_ref().map(|p| p.search_ranges());
    let grid = match (&a.scales, a.scale_range, &ranges) {
        (Some(s), _, _) => ScaleGrid::explicit(s)?,
        (None, Some(r), _) => ScaleGrid::for_range(r, &GridSteps::default())?,
        (None, None, Some(r)) => ScaleGrid::for_range(r.scale, &GridSteps::default())?,
        (None, None, None) => ScaleGrid::for_range(BLIND_SCALE, &GridSteps::default())?,
    };
    let region = a.region.unwrap_or(match &ranges {
        Some(r) => ShiftRegion::Window { x: r.crop_x, y: r.crop_y },
        None => ShiftRegion::Contained,
    });
    let cfg = MatchConfig {
        tau: a.tau,
        ..Default::default()
    };
    let result = match_search(&reference, &query, &grid, &region, &cfg)?;
    let decision = result.decision;
    emit(
        &json!({
            "command": "match",
            "reference": a.reference,
            "query": a.query,
            "profile": profile.map(|p| p.id),
            "grid": grid,
            "region": region,
            "config": cfg,
            "result": result,
            "timing": timing(t),
        }),
        a.report.as_deref(),
    )?;
    Ok(from_decision(decision))
}

fn cmd_detect_stab(a: DetectStabArgs) -> Result<Outcome> {
    let t = Instant::now();
    let mut seq = open_sequence(&a.frames)?;
    if let Some(n) = a.limit {
        seq = seq.take(n);
    }
    let cfg = StabilizationConfig {
        tau_stab: a.tau,
        ..Default::default()
    };
    let r = detect_stabilization(&seq, &cfg)?;
    emit(
        &json!({
            "command": "detect-stab",
            "frames": a.frames,
            "frames_used": seq.len(),
            "config": cfg,
            "result": r,
            "timing": timing(t),
        }),
        a.report.as_deref(),
    )?;
    Ok(Outcome::Success)
}

fn cmd_register(a: RegisterArgs) -> Result<Outcome> {
    let t = Instant::now();
    let reference = fingerprint::load(&a.reference)?;
    let seq = open_sequence(&a.frames)?.take(a.limit);
    let profile = resolve_profile(&a.profile)?;
    let mut space = match &profile {
        Some(p) => SearchSpace::from(&p.search_ranges()),
        None => PipelineConfig::default().blind,
    };
    if let Some(s) = a.scale_range {
        space.scale = s;
    }
    if let Some(r) = a.rotation_range {
        space.rotation_deg = r;
    }
    if let Some(r) = a.region {
        space.region = r;
    }
    let cfg = RegistrationConfig {
        tau_agg: a.tau_agg,
        ..Default::default()
    };
    let (outcome, registrations, accepted) = match aggregate_registered(&seq, &reference, &space, &cfg) {
        Ok(agg) => {
            if let Some(out) = &a.out {
                fingerprint::save(&agg.fingerprint, out)?;
            }
            (Outcome::Success, json!(agg.registrations), agg.fingerprint.num_inputs)
        }
        Err(HsiError::NoRegistrableFrames { .. }) => (Outcome::Negative, Value::Null, 0),
        Err(e) => return Err(e),
    };
    emit(
        &json!({
            "command": "register",
            "reference": a.reference,
            "frames": a.frames,
            "frames_used": seq.len(),
            "frames_accepted": accepted,
            "profile": profile.map(|p| p.id),
            "space": space,
            "config": cfg,
            "registrations": registrations,
            "out": a.out,
            "timing": timing(t),
        }),
        a.report.as_deref(),
    )?;
    Ok(outcome)
}

fn cmd_pipeline(a: PipelineArgs, linkage: bool) -> Result<Outcome> {
    let mut cfg: PipelineConfig = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = resolve_profile(&a.profile)? {
        cfg.profile = Some(p);
    }
    if let Some(tau) = a.tau {
        cfg.tau_match = tau;
    }
    if let Some(n) = a.frames {
        cfg.frame_budget = n;
    }
    let refs = open_sequence(&a.ref_images)?;
    let query = open_sequence(&a.query_frames)?;
    let report = if linkage {
        run_linkage(&refs, &query, &cfg)?
    } else {
        run_hsi(&refs, &query, &cfg)?
    };
    let mut v = serde_json::to_value(&report)?;
    if let Some(o) = v.as_object_mut() {
        o.insert("command".into(), json!(if linkage { "link" } else { "hsi" }));
    }
    emit(&v, a.report.as_deref())?;
    Ok(from_decision(report.decision))
}

fn cmd_simulate(a: SimulateArgs) -> Result<Outcome> {
    let t = Instant::now();
    let spec = DatasetSpec::load(&a.spec)?;
    let manifest = generate_dataset(&spec, &a.out)?;
    emit(
        &json!({
            "command": "simulate",
            "spec": a.spec,
            "out": a.out,
            "devices": manifest.devices,
            "timing": timing(t),
        }),
        a.report.as_deref(),
    )?;
    Ok(Outcome::Success)
}

fn cmd_profiles(a: ProfilesArgs) -> Result<Outcome> {
    emit(&serde_json::to_value(builtin_profiles())?, a.out.as_deref())?;
    Ok(Outcome::Success)
}
