//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test -p hsi-cli --test acceptance -- 3 5`.

use std::fs;
use std::panic;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use hsi::correlate::{ncc_surface, pce, CorrelationConfig, CorrelationSurface, Shift, ShiftRegion};
use hsi::error::{HsiError, Result};
use hsi::fingerprint::{accumulate_frames, estimate, Accumulator, EstimateConfig, Fingerprint, SourceKind};
use hsi::geometry::{builtin_profiles, find_profile, SimilarityTransform};
use hsi::pipeline::{run_hsi, run_linkage, Branch, PipelineConfig};
use hsi::plane::{pearson, Plane, Resolution};
use hsi::search::{
    detect_stabilization, far, match_search, Decision, GridSteps, MatchConfig, ScaleGrid, StabilizationConfig,
};
use hsi::simulator::{synth_images, synth_video, Geometry, Jitter, Scene, SmpStage, SyntheticDevice};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

type Check = fn() -> Result<Verdict>;

const CRITERIA: &[(u32, &str, f64, Check)] = &[
    (1, "NCC oracle parity", 30.0, ncc_parity),
    (2, "PCE closed forms", 5.0, pce_closed_forms),
    (3, "MLE sanity", 180.0, mle_sanity),
    (4, "non-stabilized separation", 600.0, nonstabilized_separation),
    (5, "geometry recovery", 600.0, geometry_recovery),
    (6, "stabilized branch", 1200.0, stabilized_branch),
    (7, "stabilization detector", 300.0, stabilization_detector),
    (8, "FAR bound", 600.0, far_bound),
    (9, "linkage trend", 1200.0, linkage_trend),
    (10, "determinism", 120.0, determinism),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for &(id, name, limit, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = match panic::catch_unwind(check) {
            Ok(Ok(v)) => v,
            Ok(Err(e)) => Verdict {
                pass: false,
                detail: format!("error: {e}"),
            },
            Err(_) => Verdict {
                pass: false,
                detail: "panicked".into(),
            },
        };
        let secs = t.elapsed().as_secs_f64();
        let pass = v.pass && secs < limit;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {id:>2} {name}: {} [{secs:.1} s of {limit:.0} s]",
            if pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Plane {
    Plane::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Textbook NCC at one shift: query cell (r, c) meets reference cell
/// (r + dy, c + dx); cells falling off the reference contribute nothing.
fn direct_ncc(x: &Plane, y: &Plane, dx: i64, dy: i64) -> f64 {
    let mean = |p: &Plane| p.data().iter().sum::<f64>() / p.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let norm = |p: &Plane, m: f64| p.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>().sqrt();
    let mut acc = 0.0;
    for r in 0..x.rows() as i64 {
        let ry = r + dy;
        if ry < 0 || ry >= y.rows() as i64 {
            continue;
        }
        for c in 0..x.cols() as i64 {
            let cy = c + dx;
            if cy < 0 || cy >= y.cols() as i64 {
                continue;
            }
            acc += (x.get(r as usize, c as usize) - mx) * (y.get(ry as usize, cy as usize) - my);
        }
    }
    acc / (norm(x, mx) * norm(y, my))
}

fn ncc_parity() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut mismatched, mut cells) = (0.0f64, 0, 0usize);
    let mut extent_ok = true;
    for i in 0..50 {
        let mut dim = || rng.gen_range(16..=64usize);
        let (xr, xc) = (dim(), dim());
        let (yr, yc) = if i % 5 == 0 { (xr, xc) } else { (dim(), dim()) };
        if (xr, xc) != (yr, yc) {
            mismatched += 1;
        }
        let x = uniform(xr, xc, &mut rng);
        let y = uniform(yr, yc, &mut rng);
        let s = ncc_surface(&x, &y, &ShiftRegion::All)?;
        let e = s.extent;
        extent_ok &= e.x == [1 - xc as i64, yc as i64 - 1] && e.y == [1 - xr as i64, yr as i64 - 1];
        for dy in e.y[0]..=e.y[1] {
            for dx in e.x[0]..=e.x[1] {
                let fast = s.at(Shift::new(dx, dy)).expect("inside extent");
                worst = worst.max((fast - direct_ncc(&x, &y, dx, dy)).abs());
                cells += 1;
            }
        }
    }
    verdict(
        worst <= 1e-6 && extent_ok,
        format!("max |fft - direct| {worst:.2e} over {cells} shifts, 50 pairs ({mismatched} mismatched), full overlap extent {extent_ok}"),
    )
}

fn surface(values: Plane) -> CorrelationSurface {
    CorrelationSurface::from_plane(values, Shift::ZERO)
}

fn pce_closed_forms() -> Result<Verdict> {
    let cfg = CorrelationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let mut spike_err = 0.0f64;
    for _ in 0..50 {
        let (rows, cols) = (rng.gen_range(15..60), rng.gen_range(15..60));
        let e: f64 = rng.gen_range(0.01..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let p = e.abs() + rng.gen_range(0.01..5.0);
        let mut v = Plane::filled(rows, cols, e);
        v.set(rng.gen_range(0..rows), rng.gen_range(0..cols), p);
        spike_err = spike_err.max((pce(&surface(v), &cfg)?.pce - p * p / (e * e)).abs());
    }

    let mut constant_ok = true;
    for _ in 0..20 {
        let c = rng.gen_range(-1.0..1.0);
        let v = Plane::filled(rng.gen_range(15..40), rng.gen_range(15..40), c);
        constant_ok &= pce(&surface(v), &cfg)?.pce == 1.0;
    }

    let (mut scale_exact, mut scale_rel) = (true, 0.0f64);
    let (mut shift_exact, mut shift_peak) = (true, true);
    for _ in 0..50 {
        let n = 48;
        let mut v = uniform(n, n, &mut rng);
        v.set(20, 20, 3.0);
        let base = pce(&surface(v.clone()), &cfg)?.pce;
        let k = rng.gen_range(-20..=20);
        scale_exact &= pce(&surface(v.scaled(2f64.powi(k))), &cfg)?.pce == base;
        let c = rng.gen_range(1e-3..1e3);
        scale_rel = scale_rel.max((pce(&surface(v.scaled(c)), &cfg)?.pce / base - 1.0).abs());

        let (dx, dy) = (rng.gen_range(-10..=10i64), rng.gen_range(-10..=10i64));
        let wrap = |i: usize, d: i64| (i as i64 - d).rem_euclid(n as i64) as usize;
        let rolled = Plane::from_fn(n, n, |r, c| v.get(wrap(r, dy), wrap(c, dx)));
        let moved = pce(&surface(rolled), &cfg)?;
        shift_exact &= moved.pce == base;
        shift_peak &= moved.peak_shift == Shift::new(20 + dx, 20 + dy);
    }
    let pass = spike_err <= 1e-9 && constant_ok && scale_exact && scale_rel <= 1e-12 && shift_exact && shift_peak;
    verdict(
        pass,
        format!(
            "spike max err {spike_err:.1e}, constant=1 {constant_ok}, 2^k scaling exact {scale_exact} \
             (arbitrary factors rel {scale_rel:.1e}), peak translation exact {}",
            shift_exact && shift_peak
        ),
    )
}

fn mle_sanity() -> Result<Verdict> {
    let ns = [1usize, 5, 20, 50];
    let cfg = EstimateConfig::default();
    let mut sums = [0.0; 4];
    for seed in 0..10u64 {
        let sensor = Resolution::new(1024, 768);
        let dev = SyntheticDevice::new(
            format!("mle{seed}"),
            1000 + seed,
            sensor,
            Geometry {
                transform: SimilarityTransform::IDENTITY,
                output: sensor,
            },
        );
        let k = dev.k_true();
        let mut acc = Accumulator::new(768, 1024);
        let mut done = 0;
        for (j, &n) in ns.iter().enumerate() {
            // each batch draws fresh images; only the running total matters
            let batch = synth_images(&dev, n - done, Scene::Flat, seed * 100 + j as u64)?;
            let idx: Vec<usize> = (0..batch.len()).collect();
            acc.merge(&accumulate_frames(&batch, &idx, &cfg)?)?;
            done = n;
            let fp = acc.finalize(cfg.eps, SourceKind::StillImages, &cfg.denoise)?;
            sums[j] += pearson(fp.plane(), &k)?;
        }
    }
    let means = sums.map(|s| s / 10.0);
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        monotone && means[2] > 0.5,
        format!(
            "mean corr N=1 {:.3}, 5 {:.3}, 20 {:.3}, 50 {:.3}; monotone {monotone}",
            means[0], means[1], means[2], means[3]
        ),
    )
}

fn nonstabilized_separation() -> Result<Verdict> {
    let geometry = [
        (0.5, 10, 40),
        (0.55, 30, 60),
        (0.6, 0, 90),
        (0.45, 20, 30),
        (0.52, 40, 50),
        (0.58, 5, 70),
    ];
    let devices: Vec<SyntheticDevice> = geometry
        .iter()
        .enumerate()
        .map(|(i, &(s, x, y))| {
            SyntheticDevice::new(
                format!("ns{i}"),
                400 + i as u64,
                Resolution::new(640, 480),
                Geometry {
                    transform: SimilarityTransform::new(s, 0.0, x, y),
                    output: Resolution::new(256, 144),
                },
            )
        })
        .collect();
    let refs = devices
        .iter()
        .map(|d| synth_images(d, 20, Scene::Flat, 1))
        .collect::<Result<Vec<_>>>()?;
    let queries = devices
        .iter()
        .map(|d| Ok(synth_video(d, 50, Scene::Texture, 2)?.frames))
        .collect::<Result<Vec<_>>>()?;
    let (mut correct, mut min_match, mut max_mismatch) = (0, f64::INFINITY, 0.0f64);
    for (i, d) in devices.iter().enumerate() {
        let cfg = PipelineConfig {
            profile: d.profile(),
            ..Default::default()
        };
        let own = run_hsi(&refs[i], &queries[i], &cfg)?;
        let other = run_hsi(&refs[i], &queries[(i + 1) % devices.len()], &cfg)?;
        let p = |r: &hsi::pipeline::HsiReport| r.match_result.as_ref().map_or(0.0, |m| m.p_stat);
        correct += (own.decision == Decision::Match) as usize + (other.decision == Decision::NoMatch) as usize;
        min_match = min_match.min(p(&own));
        max_mismatch = max_mismatch.max(p(&other));
    }
    verdict(
        correct == 12 && min_match > 4.0 * max_mismatch,
        format!("{correct}/12 correct at tau 50, min matching P {min_match:.1}, max mismatching P {max_mismatch:.1}"),
    )
}

const TABLE2: [&str; 10] = ["C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9", "C17"];

fn geometry_recovery() -> Result<Verdict> {
    let profiles = builtin_profiles();
    let cfg = EstimateConfig::default();
    let mut rows = Vec::new();
    let mut all = true;
    for (row, id) in TABLE2.iter().enumerate() {
        let prof = find_profile(&profiles, id)?;
        let t = prof.nominal;
        let mut hits = 0;
        for seed in 0..10u64 {
            let dev = SyntheticDevice::new(
                *id,
                7000 + 100 * row as u64 + seed,
                prof.image_res,
                Geometry {
                    transform: t,
                    output: prof.video_res,
                },
            );
            // the sensor pattern itself stands in for the image reference
            let reference = Fingerprint::new(dev.k_true(), 1, SourceKind::StillImages, cfg.denoise.clone())?;
            let frames = synth_video(&dev, 2, Scene::Texture, seed)?.frames;
            let query = estimate(&frames, &cfg, SourceKind::VideoFrames)?;
            let r = prof.search_ranges();
            let grid = ScaleGrid::for_range(r.scale, &GridSteps::default())?;
            let region = ShiftRegion::Window { x: r.crop_x, y: r.crop_y };
            let m = match_search(&reference, &query, &grid, &region, &MatchConfig::default())?;
            if (m.r_peak - t.scale).abs() <= 0.005 + 1e-9 && m.s_peak == Shift::new(t.crop_x, t.crop_y) {
                hits += 1;
            }
        }
        all &= hits >= 9;
        rows.push(format!("{id} {hits}/10"));
    }
    verdict(all, rows.join(", "))
}

fn stabilized_device(i: u64) -> SyntheticDevice {
    let mut d = SyntheticDevice::new(
        format!("st{i}"),
        600 + i,
        Resolution::new(512, 384),
        Geometry {
            transform: SimilarityTransform::new(0.5, 0.0, 24, 40),
            output: Resolution::new(208, 112),
        },
    );
    d.jitter = Some(Jitter::STABILIZER);
    d
}

fn stabilized_branch() -> Result<Verdict> {
    let devices: Vec<SyntheticDevice> = (0..3).map(stabilized_device).collect();
    let refs = devices
        .iter()
        .map(|d| synth_images(d, 20, Scene::Flat, 1))
        .collect::<Result<Vec<_>>>()?;
    let steps = GridSteps::default();
    let (mut tp, mut fp, mut registered) = (0, 0, 0);
    let (mut accepted, mut recovered) = (0, 0);
    for trial in 0..20u64 {
        let d = (trial % 3) as usize;
        let cfg = PipelineConfig {
            profile: devices[d].profile(),
            ..Default::default()
        };
        let own = synth_video(&devices[d], 5, Scene::Texture, 100 + trial)?;
        let r = run_hsi(&refs[d], &own.frames, &cfg)?;
        tp += (r.decision == Decision::Match) as usize;
        registered += (r.branch == Branch::Registered) as usize;
        for (reg, truth) in r.registrations.iter().zip(&own.transforms) {
            if reg.accepted {
                accepted += 1;
                let t = &reg.transform;
                if (t.scale - truth.scale).abs() <= steps.fine_scale
                    && (t.rotation_deg - truth.rotation_deg).abs() <= steps.rotation_deg
                    && (t.crop_x - truth.crop_x).abs() <= 1
                    && (t.crop_y - truth.crop_y).abs() <= 1
                {
                    recovered += 1;
                }
            }
        }
        let other = synth_video(&devices[(d + 1) % 3], 5, Scene::Texture, 200 + trial)?;
        let r = run_hsi(&refs[d], &other.frames, &cfg)?;
        fp += (r.decision == Decision::Match) as usize;
    }
    let tpr = tp as f64 / 20.0;
    let fpr = fp as f64 / 20.0;
    let rec = if accepted == 0 { 0.0 } else { recovered as f64 / accepted as f64 };
    verdict(
        tpr >= 0.8 && fp == 0 && rec >= 0.8,
        format!(
            "TPR {tpr:.2}, FPR {fpr:.2}, jitter recovered in {recovered}/{accepted} accepted frames ({:.0}%), \
             registered branch on {registered}/20 matching queries",
            100.0 * rec
        ),
    )
}

fn stabilization_detector() -> Result<Verdict> {
    let cfg = StabilizationConfig::default();
    let (mut correct, mut rigid_ok, mut jitter_ok) = (0, 0, 0);
    for i in 0..40u64 {
        let mut d = stabilized_device(100 + i);
        let jittered = i % 2 == 1;
        if !jittered {
            d.jitter = None;
        }
        let v = synth_video(&d, 20, Scene::Texture, i)?;
        let r = detect_stabilization(&v.frames, &cfg)?;
        if r.stabilized == jittered {
            correct += 1;
            if jittered {
                jitter_ok += 1;
            } else {
                rigid_ok += 1;
            }
        }
    }
    let acc = correct as f64 / 40.0;
    verdict(
        acc >= 0.95,
        format!("accuracy {acc:.3} (rigid {rigid_ok}/20, jittered {jitter_ok}/20) at tau_stab 50"),
    )
}

fn far_bound() -> Result<Verdict> {
    let cfg = EstimateConfig::default();
    let scales: Vec<f64> = (0..11).map(|i| 0.975 + 0.005 * i as f64).collect();
    let grid = ScaleGrid::explicit(&scales)?;
    let region = ShiftRegion::Window { x: [0, 4], y: [3, 3] };
    let (mut k, mut over38, mut over50, mut max_p) = (0u64, 0, 0, 0.0f64);
    for i in 0..1000u64 {
        let a = SyntheticDevice::new(
            "a",
            20_000 + 2 * i,
            Resolution::new(128, 128),
            Geometry {
                transform: SimilarityTransform::IDENTITY,
                output: Resolution::new(128, 128),
            },
        );
        let b = SyntheticDevice::new(
            "b",
            20_001 + 2 * i,
            Resolution::new(128, 128),
            Geometry {
                transform: SimilarityTransform::new(1.0, 0.0, 2, 3),
                output: Resolution::new(120, 120),
            },
        );
        let reference = estimate(&synth_images(&a, 5, Scene::Flat, i)?, &cfg, SourceKind::StillImages)?;
        let query = estimate(&synth_video(&b, 5, Scene::Texture, i)?.frames, &cfg, SourceKind::VideoFrames)?;
        let m = match_search(&reference, &query, &grid, &region, &MatchConfig::default())?;
        k = m.k_tested;
        let alarm = |tau: f64| m.p_stat > tau && m.peak_rho > 0.0;
        over38 += alarm(38.0) as usize;
        over50 += alarm(50.0) as usize;
        max_p = max_p.max(m.p_stat);
    }
    let (r38, r50) = (over38 as f64 / 1000.0, over50 as f64 / 1000.0);
    let (b38, b50) = (far(38.0, k), far(50.0, k));
    let half = far(0.0, 1) == 0.5;
    verdict(
        k == 55 && r38 <= b38 && r50 <= b50 && half,
        format!(
            "k {k}; tau 38: {over38}/1000 alarms vs bound {b38:.2e}; tau 50: {over50}/1000 vs {b50:.2e}; \
             max P {max_p:.1}; far(0,1) = 0.5 {half}"
        ),
    )
}

fn linkage_trend() -> Result<Verdict> {
    let (mut sum100, mut sum300, mut wins) = (0.0, 0.0, 0);
    for seed in 0..10u64 {
        let mut d = SyntheticDevice::new(
            format!("smp{seed}"),
            900 + seed,
            Resolution::new(800, 600),
            Geometry {
                transform: SimilarityTransform::new(0.5, 0.0, 40, 60),
                output: Resolution::new(320, 180),
            },
        );
        d.compression_quality = Some(90);
        d.smp = Some(SmpStage {
            downscale: 0.5,
            quality: 80,
        });
        let refs = synth_images(&d, 20, Scene::Flat, seed)?;
        let frames = synth_video(&d, 300, Scene::Texture, seed)?.frames;
        let p = |budget: usize| -> Result<f64> {
            let cfg = PipelineConfig {
                frame_budget: budget,
                ..Default::default()
            };
            let r = run_linkage(&refs, &frames, &cfg)?;
            Ok(r.match_result.map_or(0.0, |m| m.p_stat))
        };
        let (a, b) = (p(100)?, p(300)?);
        sum100 += a;
        sum300 += b;
        wins += (b > a) as usize;
    }
    let (m100, m300) = (sum100 / 10.0, sum300 / 10.0);
    verdict(
        m300 > m100,
        format!("mean matching P at 100 frames {m100:.1}, at 300 frames {m300:.1} ({wins}/10 seeds higher)"),
    )
}

fn run_cli(args: &[&str]) -> std::result::Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_hsi"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    match o.status.code() {
        Some(0) | Some(1) => Ok(()),
        c => Err(format!("hsi {args:?} exited {c:?}: {}", String::from_utf8_lossy(&o.stderr))),
    }
}

fn without_timing(path: &Path) -> Value {
    let mut v: Value = serde_json::from_slice(&fs::read(path).expect("report")).expect("report json");
    if let Some(o) = v.as_object_mut() {
        o.remove("timing");
    }
    v
}

const DETERMINISM_SPEC: &str = r#"{
  "devices": [
    {"id": "rigid", "seed": 11, "sensor": {"width": 320, "height": 240},
     "video_geometry": {"transform": {"scale": 0.6, "rotation_deg": 0, "crop_x": 8, "crop_y": 20},
                        "output": {"width": 160, "height": 96}}},
    {"id": "jitter", "seed": 12, "sensor": {"width": 320, "height": 240},
     "video_geometry": {"transform": {"scale": 0.5, "rotation_deg": 0, "crop_x": 16, "crop_y": 24},
                        "output": {"width": 128, "height": 80}},
     "jitter": {"max_shift": 8, "max_rot_deg": 0.5, "max_scale_dev": 0.01}}
  ],
  "reference_images": 8,
  "query_frames": 12,
  "seed": 3
}"#;

fn io_err(e: std::io::Error) -> HsiError {
    HsiError::Io {
        path: "acceptance".into(),
        source: e,
    }
}

fn determinism() -> Result<Verdict> {
    let dir = tempfile::tempdir().map_err(io_err)?;
    let root = dir.path();
    let s = |p: &Path| p.to_str().expect("utf-8 path").to_string();
    let spec = root.join("spec.json");
    fs::write(&spec, DETERMINISM_SPEC).map_err(io_err)?;
    let data = root.join("data");
    let mut problems = Vec::new();
    let mut cli = |args: Vec<String>| {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        if let Err(e) = run_cli(&args) {
            problems.push(e);
        }
    };
    cli(vec!["simulate".into(), "--spec".into(), s(&spec), "--out".into(), s(&data)]);

    let runs = [("1", "a"), ("1", "b"), ("4", "c")];
    for (threads, tag) in runs {
        for id in ["rigid", "jitter"] {
            let dev = data.join(id);
            let manifest: Value = serde_json::from_slice(&fs::read(dev.join("manifest.json")).map_err(io_err)?)?;
            let profile = root.join(format!("{id}.profile.json"));
            fs::write(&profile, serde_json::to_vec(&manifest["profile"])?).map_err(io_err)?;
            cli(vec![
                "--threads".into(),
                threads.into(),
                "fingerprint".into(),
                "--images".into(),
                s(&dev.join("reference")),
                "--out".into(),
                s(&root.join(format!("{id}-{tag}.hsifp"))),
            ]);
            cli(vec![
                "--threads".into(),
                threads.into(),
                "hsi".into(),
                "--ref-images".into(),
                s(&dev.join("reference")),
                "--query-frames".into(),
                s(&dev.join("query")),
                "--profile-file".into(),
                s(&profile),
                "--report".into(),
                s(&root.join(format!("{id}-{tag}.json"))),
            ]);
        }
    }
    let mut same = 0;
    let mut compared = 0;
    let mut branches = Vec::new();
    if problems.is_empty() {
        for id in ["rigid", "jitter"] {
            let fp = |tag: &str| fs::read(root.join(format!("{id}-{tag}.hsifp"))).expect("fingerprint");
            let rep = |tag: &str| without_timing(&root.join(format!("{id}-{tag}.json")));
            for tag in ["b", "c"] {
                compared += 2;
                same += (fp("a") == fp(tag)) as usize + (rep("a") == rep(tag)) as usize;
            }
            branches.push(format!("{id}: {}", rep("a")["branch"]));
        }
    }
    verdict(
        problems.is_empty() && compared == 8 && same == compared,
        if problems.is_empty() {
            format!(
                "{same}/{compared} fingerprint/report comparisons identical across reruns and --threads 1 vs 4 ({})",
                branches.join(", ")
            )
        } else {
            problems.join("; ")
        },
    )
}
