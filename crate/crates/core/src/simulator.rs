//! Synthetic devices with a known PRNU pattern and acquisition geometry.
//!
//! Frames are rendered directly in the output geometry: the pattern is
//! warped into the image/video plane and the scene, multiplicative PRNU and
//! readout noise are combined there, followed by optional block-DCT
//! recompression and a platform-style downscale + re-encode stage.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise::DenoiseConfig;
use crate::error::{HsiError, Result};
use crate::fingerprint::{self, Fingerprint, SourceKind};
use crate::geometry::{apply_transform, resample, scaled_dims, DeviceProfile, SimilarityTransform, TransformRanges};
use crate::imagery::{write_gray_png, FrameSequence};
use crate::plane::{Plane, Resolution};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_READOUT_SIGMA: f64 = 2.0;

const TAG_PATTERN: u64 = 1;
const TAG_IMAGE: u64 = 2;
const TAG_VIDEO: u64 = 3;
const TAG_JITTER: u64 = 4;

/// Independent stream for `(device seed, tag, a, b)`; output does not depend
/// on the order in which streams are drawn.
fn stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, tag, a, b].into_iter().enumerate() {
        key[i * 8..i * 8 + 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scene {
    /// Constant level with gentle shading.
    #[default]
    Flat,
    /// Band-limited random texture.
    Texture,
    /// Linear gradient in a random direction.
    Ramp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jitter {
    pub max_shift: i64,
    pub max_rot_deg: f64,
    pub max_scale_dev: f64,
}

impl Jitter {
    pub const STABILIZER: Jitter = Jitter {
        max_shift: 8,
        max_rot_deg: 0.5,
        max_scale_dev: 0.01,
    };

    fn validate(&self) -> Result<()> {
        if self.max_shift < 0 || !(self.max_rot_deg >= 0.0) || !(self.max_scale_dev >= 0.0) {
            return Err(HsiError::field("jitter", "bounds must be non-negative"));
        }
        Ok(())
    }

    fn draw(&self, base: &SimilarityTransform, rng: &mut ChaCha8Rng) -> SimilarityTransform {
        let dx = rng.gen_range(-self.max_shift..=self.max_shift);
        let dy = rng.gen_range(-self.max_shift..=self.max_shift);
        let rot = rng.gen_range(-1.0..=1.0) * self.max_rot_deg;
        let ds = rng.gen_range(-1.0..=1.0) * self.max_scale_dev;
        SimilarityTransform::new(base.scale + ds, base.rotation_deg + rot, base.crop_x + dx, base.crop_y + dy)
    }
}

/// A transform together with the size of the plane it produces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub transform: SimilarityTransform,
    pub output: Resolution,
}

/// Re-upload emulation: downscale then re-encode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmpStage {
    pub downscale: f64,
    pub quality: u8,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_sigma() -> f64 {
    DEFAULT_READOUT_SIGMA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDevice {
    pub id: String,
    pub seed: u64,
    pub sensor: Resolution,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_sigma")]
    pub readout_sigma: f64,
    /// Still-image geometry; full sensor when absent.
    #[serde(default)]
    pub image_geometry: Option<Geometry>,
    pub video_geometry: Geometry,
    #[serde(default)]
    pub jitter: Option<Jitter>,
    #[serde(default)]
    pub compression_quality: Option<u8>,
    #[serde(default)]
    pub smp: Option<SmpStage>,
}

impl SyntheticDevice {
    pub fn new(id: impl Into<String>, seed: u64, sensor: Resolution, video: Geometry) -> Self {
        Self {
            id: id.into(),
            seed,
            sensor,
            alpha: DEFAULT_ALPHA,
            readout_sigma: DEFAULT_READOUT_SIGMA,
            image_geometry: None,
            video_geometry: video,
            jitter: None,
            compression_quality: None,
            smp: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty()
            || !self
                .id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(HsiError::field("id", "must be non-empty [A-Za-z0-9_-]"));
        }
        if self.sensor.width < 8 || self.sensor.height < 8 {
            return Err(HsiError::field("sensor", "must be at least 8x8"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(HsiError::field("alpha", "must be positive"));
        }
        if !(self.readout_sigma >= 0.0 && self.readout_sigma.is_finite()) {
            return Err(HsiError::field("readout_sigma", "must be non-negative"));
        }
        for (name, g) in [("image_geometry", self.image_geometry()), ("video_geometry", self.video_geometry)] {
            g.transform
                .validate()
                .map_err(|e| HsiError::field(name, e.to_string()))?;
            if g.output.width < 8 || g.output.height < 8 {
                return Err(HsiError::field(format!("{name}.output"), "must be at least 8x8"));
            }
        }
        if let Some(j) = &self.jitter {
            j.validate()?;
        }
        for (name, q) in [
            ("compression_quality", self.compression_quality),
            ("smp.quality", self.smp.map(|s| s.quality)),
        ] {
            if matches!(q, Some(q) if !(1..=100).contains(&q)) {
                return Err(HsiError::field(name, "must be in 1..=100"));
            }
        }
        if let Some(s) = &self.smp {
            if !(s.downscale > 0.0 && s.downscale <= 1.0) {
                return Err(HsiError::field("smp.downscale", "must be in (0, 1]"));
            }
        }
        Ok(())
    }

    pub fn image_geometry(&self) -> Geometry {
        self.image_geometry.unwrap_or(Geometry {
            transform: SimilarityTransform::IDENTITY,
            output: self.sensor,
        })
    }

    pub fn stabilized(&self) -> bool {
        self.jitter.is_some()
    }

    /// The ground-truth pattern: zero mean, unit variance, sensor dims.
    pub fn k_true(&self) -> Plane {
        let (rows, cols) = self.sensor.dims();
        let mut rng = stream(self.seed, TAG_PATTERN, 0, 0);
        let p = Plane::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
        let (m, sd) = (p.mean(), p.variance().sqrt());
        p.map(|v| (v - m) / sd)
    }

    fn output_dims(&self, g: &Geometry) -> (usize, usize) {
        let dims = g.output.dims();
        match &self.smp {
            Some(s) => scaled_dims(dims.0, dims.1, s.downscale),
            None => dims,
        }
    }

    /// The image-to-video relation as a profile, expressed in the geometry
    /// of the delivered images and frames. Only defined when stills cover
    /// the full sensor.
    pub fn profile(&self) -> Option<DeviceProfile> {
        if self.image_geometry().transform != SimilarityTransform::IDENTITY {
            return None;
        }
        let v = self.video_geometry.transform;
        let d = self.smp.map_or(1.0, |s| s.downscale);
        let crop = |c: i64| (c as f64 * d).round() as i64;
        let nominal = SimilarityTransform::new(v.scale, v.rotation_deg, crop(v.crop_x), crop(v.crop_y));
        let ranges = match &self.jitter {
            None => TransformRanges::degenerate(&nominal),
            Some(j) => {
                let dc = (j.max_shift as f64 * d).ceil() as i64;
                TransformRanges {
                    scale: [nominal.scale - j.max_scale_dev, nominal.scale + j.max_scale_dev],
                    rotation_deg: [nominal.rotation_deg - j.max_rot_deg, nominal.rotation_deg + j.max_rot_deg],
                    crop_x: [nominal.crop_x - dc, nominal.crop_x + dc],
                    crop_y: [nominal.crop_y - dc, nominal.crop_y + dc],
                }
            }
        };
        let res = |dims: (usize, usize)| Resolution::new(dims.1, dims.0);
        Some(DeviceProfile {
            id: self.id.clone(),
            model: "synthetic".into(),
            image_res: res(self.output_dims(&self.image_geometry())),
            video_res: res(self.output_dims(&self.video_geometry)),
            stabilized: self.stabilized(),
            nominal,
            ranges,
        })
    }

    fn render(&self, k: &Plane, t: &SimilarityTransform, out: Resolution, scene: Scene, rng: &mut ChaCha8Rng) -> Result<Plane> {
        let dims = out.dims();
        let (kw, _) = apply_transform(k, t, dims)?;
        let s = scene_plane(scene, dims, rng);
        let mut img = Plane::from_fn(dims.0, dims.1, |r, c| {
            let n: f64 = StandardNormal.sample(rng);
            let v = s.get(r, c) * (1.0 + self.alpha * kw.get(r, c)) + self.readout_sigma * n;
            v.round().clamp(0.0, 255.0)
        });
        if let Some(q) = self.compression_quality {
            img = dct_quantize(&img, q);
        }
        if let Some(smp) = &self.smp {
            img = dct_quantize(&resample(&img, smp.downscale)?, smp.quality);
        }
        Ok(img)
    }
}

fn scene_plane(scene: Scene, (rows, cols): (usize, usize), rng: &mut ChaCha8Rng) -> Plane {
    match scene {
        Scene::Flat => {
            let level = 128.0 + rng.gen_range(-8.0..8.0);
            let gx = rng.gen_range(-10.0..10.0);
            let gy = rng.gen_range(-10.0..10.0);
            Plane::from_fn(rows, cols, |r, c| {
                level + gx * (c as f64 / cols as f64 - 0.5) + gy * (r as f64 / rows as f64 - 0.5)
            })
        }
        Scene::Ramp => {
            let (s, co) = rng.gen_range(0.0..std::f64::consts::TAU).sin_cos();
            let proj = |r: usize, c: usize| co * c as f64 / cols as f64 + s * r as f64 / rows as f64;
            let corners = [proj(0, 0), proj(0, cols - 1), proj(rows - 1, 0), proj(rows - 1, cols - 1)];
            let lo = corners.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Plane::from_fn(rows, cols, |r, c| 40.0 + 170.0 * (proj(r, c) - lo) / (hi - lo).max(1e-12))
        }
        Scene::Texture => {
            const CELL: f64 = 24.0;
            let gr = (rows as f64 / CELL).ceil() as usize + 2;
            let gc = (cols as f64 / CELL).ceil() as usize + 2;
            let grid: Vec<f64> = (0..gr * gc).map(|_| rng.gen_range(50.0..200.0)).collect();
            Plane::from_fn(rows, cols, |r, c| {
                let (y, x) = (r as f64 / CELL, c as f64 / CELL);
                let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                let (fy, fx) = (y - y0 as f64, x - x0 as f64);
                let g = |i: usize, j: usize| grid[i * gc + j];
                (1.0 - fy) * ((1.0 - fx) * g(y0, x0) + fx * g(y0, x0 + 1))
                    + fy * ((1.0 - fx) * g(y0 + 1, x0) + fx * g(y0 + 1, x0 + 1))
            })
        }
    }
}

const JPEG_LUMA: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., 12., 12., 14., 19., 26., 58., 60., 55., 14., 13., 16., 24., 40., 57.,
    69., 56., 14., 17., 22., 29., 51., 87., 80., 62., 18., 22., 37., 56., 68., 109., 103., 77., 24., 35., 55., 64.,
    81., 104., 113., 92., 49., 64., 78., 87., 103., 121., 120., 101., 72., 92., 95., 98., 112., 100., 103., 99.,
];

fn quant_table(quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as f64;
    let s = if q < 50.0 { (5000.0 / q).floor() } else { 200.0 - 2.0 * q };
    JPEG_LUMA.map(|t| ((t * s + 50.0) / 100.0).floor().clamp(1.0, 255.0))
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    m
}

/// 8x8 block DCT quantization with the baseline luminance table at
/// `quality`; a stand-in for JPEG/codec recompression. Edges are padded by
/// replication. Output is rounded and clipped to 0..=255.
pub fn dct_quantize(p: &Plane, quality: u8) -> Plane {
    let (rows, cols) = p.dims();
    let table = quant_table(quality);
    let m = dct_basis();
    let mut out = vec![0.0; rows * cols];
    let mut block = [[0.0; 8]; 8];
    for br in (0..rows).step_by(8) {
        for bc in (0..cols).step_by(8) {
            for (y, row) in block.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    *v = p.get((br + y).min(rows - 1), (bc + x).min(cols - 1)) - 128.0;
                }
            }
            let f = mat_mul(&mat_mul(&m, &block), &transpose(&m));
            let mut fq = [[0.0; 8]; 8];
            for u in 0..8 {
                for v in 0..8 {
                    let t = table[u * 8 + v];
                    fq[u][v] = (f[u][v] / t).round() * t;
                }
            }
            let g = mat_mul(&mat_mul(&transpose(&m), &fq), &m);
            for (y, row) in g.iter().enumerate() {
                for (x, v) in row.iter().enumerate() {
                    if br + y < rows && bc + x < cols {
                        out[(br + y) * cols + bc + x] = (v + 128.0).round().clamp(0.0, 255.0);
                    }
                }
            }
        }
    }
    Plane::new(rows, cols, out).expect("finite")
}

fn mat_mul(a: &[[f64; 8]; 8], b: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for i in 0..8 {
        for k in 0..8 {
            let aik = a[i][k];
            for j in 0..8 {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

fn transpose(a: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let mut t = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            t[j][i] = a[i][j];
        }
    }
    t
}

fn image_with(dev: &SyntheticDevice, k: &Plane, scene: Scene, seed: u64, index: u64) -> Result<Plane> {
    let g = dev.image_geometry();
    dev.render(k, &g.transform, g.output, scene, &mut stream(dev.seed, TAG_IMAGE, seed, index))
}

/// One still image.
pub fn synth_image(dev: &SyntheticDevice, scene: Scene, seed: u64) -> Result<Plane> {
    dev.validate()?;
    image_with(dev, &dev.k_true(), scene, seed, 0)
}

/// `n` still images; image `i` uses its own stream, so `synth_image(dev,
/// scene, seed)` equals the first of these.
pub fn synth_images(dev: &SyntheticDevice, n: usize, scene: Scene, seed: u64) -> Result<FrameSequence> {
    dev.validate()?;
    let k = dev.k_true();
    let planes = (0..n as u64)
        .into_par_iter()
        .map(|i| image_with(dev, &k, scene, seed, i))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::from_planes(planes)
}

pub struct SyntheticVideo {
    pub frames: FrameSequence,
    /// Applied sensor-to-frame transform of each frame, before any
    /// re-upload downscale.
    pub transforms: Vec<SimilarityTransform>,
}

/// Per-frame transforms of a video: the nominal video geometry, plus a
/// uniform jitter draw per frame for stabilized devices.
pub fn video_transforms(dev: &SyntheticDevice, n_frames: usize, seed: u64) -> Vec<SimilarityTransform> {
    let base = dev.video_geometry.transform;
    (0..n_frames as u64)
        .map(|i| match &dev.jitter {
            None => base,
            Some(j) => j.draw(&base, &mut stream(dev.seed, TAG_JITTER, seed, i)),
        })
        .collect()
}

pub fn synth_video(dev: &SyntheticDevice, n_frames: usize, scene: Scene, seed: u64) -> Result<SyntheticVideo> {
    if n_frames == 0 {
        return Err(HsiError::field("n_frames", "must be at least 1"));
    }
    dev.validate()?;
    let k = dev.k_true();
    let transforms = video_transforms(dev, n_frames, seed);
    let out = dev.video_geometry.output;
    let planes = transforms
        .par_iter()
        .enumerate()
        .map(|(i, t)| dev.render(&k, t, out, scene, &mut stream(dev.seed, TAG_VIDEO, seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticVideo {
        frames: FrameSequence::from_planes(planes)?,
        transforms,
    })
}

fn default_ref_count() -> usize {
    20
}

fn default_query_frames() -> usize {
    50
}

fn default_query_scene() -> Scene {
    Scene::Texture
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub devices: Vec<SyntheticDevice>,
    #[serde(default = "default_ref_count")]
    pub reference_images: usize,
    #[serde(default)]
    pub reference_scene: Scene,
    #[serde(default = "default_query_frames")]
    pub query_frames: usize,
    #[serde(default = "default_query_scene")]
    pub query_scene: Scene,
    /// Stream selector for the generated content.
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    pub fn parse(json: &str) -> Result<Self> {
        let spec: DatasetSpec =
            serde_json::from_str(json).map_err(|e| HsiError::field("spec", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| HsiError::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(HsiError::field("devices", "must not be empty"));
        }
        for (i, d) in self.devices.iter().enumerate() {
            d.validate().map_err(|e| match e {
                HsiError::InvalidField { field, reason } => HsiError::InvalidField {
                    field: format!("devices[{i}].{field}"),
                    reason,
                },
                other => other,
            })?;
            if self.devices[..i].iter().any(|o| o.id == d.id) {
                return Err(HsiError::field(format!("devices[{i}].id"), format!("duplicate id {}", d.id)));
            }
        }
        if self.reference_images == 0 {
            return Err(HsiError::field("reference_images", "must be at least 1"));
        }
        if self.query_frames == 0 {
            return Err(HsiError::field("query_frames", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub file: String,
    pub transform: SimilarityTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceManifest {
    pub device: SyntheticDevice,
    pub profile: Option<DeviceProfile>,
    pub k_true_file: String,
    pub reference_dir: String,
    pub reference_images: Vec<String>,
    pub reference_scene: Scene,
    pub query_dir: String,
    pub query_scene: Scene,
    pub query_frames: Vec<FrameTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub devices: Vec<String>,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| HsiError::io(path, e))
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| HsiError::io(p, e))
}

fn write_frames(seq: &FrameSequence, dir: &Path, prefix: &str) -> Result<Vec<String>> {
    mkdir(dir)?;
    (0..seq.len())
        .into_par_iter()
        .map(|i| {
            let name = format!("{prefix}_{i:04}.png");
            write_gray_png(&seq.luma(i)?, &dir.join(&name))?;
            Ok(name)
        })
        .collect()
}

/// Writes one subtree per device under `out`:
/// `<id>/reference/*.png`, `<id>/query/*.png`, `<id>/k_true.hsifp` and
/// `<id>/manifest.json`, plus a top-level `manifest.json`.
pub fn generate_dataset(spec: &DatasetSpec, out: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    mkdir(out)?;
    for dev in &spec.devices {
        let root = out.join(&dev.id);
        mkdir(&root)?;
        let refs = synth_images(dev, spec.reference_images, spec.reference_scene, spec.seed)?;
        let reference_images = write_frames(&refs, &root.join("reference"), "img")?;
        drop(refs);
        let video = synth_video(dev, spec.query_frames, spec.query_scene, spec.seed)?;
        let names = write_frames(&video.frames, &root.join("query"), "frame")?;
        let k = Fingerprint::new(dev.k_true(), 1, SourceKind::StillImages, DenoiseConfig::default())?;
        fingerprint::save(&k, &root.join("k_true.hsifp"))?;
        let manifest = DeviceManifest {
            device: dev.clone(),
            profile: dev.profile(),
            k_true_file: "k_true.hsifp".into(),
            reference_dir: "reference".into(),
            reference_images,
            reference_scene: spec.reference_scene,
            query_dir: "query".into(),
            query_scene: spec.query_scene,
            query_frames: names
                .into_iter()
                .zip(video.transforms)
                .map(|(file, transform)| FrameTruth { file, transform })
                .collect(),
        };
        write_json(&manifest, &root.join("manifest.json"))?;
    }
    let manifest = DatasetManifest {
        spec: spec.clone(),
        devices: spec.devices.iter().map(|d| d.id.clone()).collect(),
    };
    write_json(&manifest, &out.join("manifest.json"))?;
    Ok(manifest)
}

pub fn device_dir(out: &Path, id: &str) -> PathBuf {
    out.join(id)
}
