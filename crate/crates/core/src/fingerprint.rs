//! Maximum-likelihood fingerprint estimation
//!
//! ```text
//! K = sum_i W_i * I_i / (sum_i I_i^2 + eps)
//! ```
//!
//! plus whitening and the `.hsifp` file format.
//!
//! The two sums are kept in 2^-24 fixed point, so accumulation is exactly
//! associative: any frame order or split across workers gives the same bits.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise::{image_residual, DenoiseConfig};
use crate::error::{HsiError, Result};
use crate::fft::Fft2;
use crate::geometry::SimilarityTransform;
use crate::imagery::{saturation_mask, FrameSequence, DEFAULT_SATURATION_THRESHOLD};
use crate::plane::Plane;

const FIXED_ONE: f64 = (1u64 << 24) as f64;
/// Largest per-pixel term magnitude the fixed-point sums accept.
const MAX_TERM: f64 = (1u64 << 38) as f64;

pub const DEFAULT_EPS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    StillImages,
    VideoFrames,
    RegisteredFrames,
}

impl SourceKind {
    fn code(self) -> u8 {
        match self {
            SourceKind::StillImages => 0,
            SourceKind::VideoFrames => 1,
            SourceKind::RegisteredFrames => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(SourceKind::StillImages),
            1 => Some(SourceKind::VideoFrames),
            2 => Some(SourceKind::RegisteredFrames),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Postprocess {
    pub whitened: bool,
    /// Whitening was asked for on an all-zero plane and did nothing.
    pub whiten_degenerate: bool,
}

impl Postprocess {
    const WHITENED: u8 = 0x01;
    const WHITEN_DEGENERATE: u8 = 0x02;

    pub fn bits(&self) -> u8 {
        (if self.whitened { Self::WHITENED } else { 0 })
            | (if self.whiten_degenerate { Self::WHITEN_DEGENERATE } else { 0 })
    }

    fn from_bits(b: u8) -> Option<Self> {
        if b & !(Self::WHITENED | Self::WHITEN_DEGENERATE) != 0 {
            return None;
        }
        Some(Self {
            whitened: b & Self::WHITENED != 0,
            whiten_degenerate: b & Self::WHITEN_DEGENERATE != 0,
        })
    }
}

/// A fingerprint estimate. Plane values are held at `f32` precision so the
/// file round trip is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    plane: Plane,
    pub num_inputs: u32,
    pub source_kind: SourceKind,
    pub denoise_cfg: DenoiseConfig,
    pub postprocess: Postprocess,
    pub geometry_note: Option<SimilarityTransform>,
}

fn to_f32_plane(p: Plane) -> Plane {
    let (rows, cols) = p.dims();
    let data = p.into_vec().into_iter().map(|v| v as f32 as f64).collect();
    Plane::from_vec(rows, cols, data)
}

impl Fingerprint {
    pub fn new(plane: Plane, num_inputs: u32, source_kind: SourceKind, denoise_cfg: DenoiseConfig) -> Result<Self> {
        if num_inputs == 0 {
            return Err(HsiError::field("num_inputs", "must be at least 1"));
        }
        if plane.data().iter().any(|v| v.abs() > f32::MAX as f64) {
            return Err(HsiError::invalid("fingerprint value exceeds f32 range"));
        }
        Ok(Self {
            plane: to_f32_plane(plane),
            num_inputs,
            source_kind,
            denoise_cfg,
            postprocess: Postprocess::default(),
            geometry_note: None,
        })
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn dims(&self) -> (usize, usize) {
        self.plane.dims()
    }

    /// Same metadata, new values.
    pub fn with_plane(&self, plane: Plane) -> Result<Self> {
        let mut fp = Fingerprint::new(plane, self.num_inputs, self.source_kind, self.denoise_cfg.clone())?;
        fp.postprocess = self.postprocess;
        fp.geometry_note = self.geometry_note;
        Ok(fp)
    }
}

/// The two MLE sums over a set of frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accumulator {
    rows: usize,
    cols: usize,
    num: Vec<i64>,
    den: Vec<i64>,
    count: u32,
}

fn to_fixed(v: f64) -> Result<i64> {
    if !(v.abs() < MAX_TERM) {
        return Err(HsiError::invalid(format!(
            "accumulator term {v} exceeds the supported magnitude {MAX_TERM}"
        )));
    }
    Ok((v * FIXED_ONE).round() as i64)
}

fn overflow() -> HsiError {
    HsiError::invalid("accumulator overflow")
}

impl Accumulator {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            num: vec![0; rows * cols],
            den: vec![0; rows * cols],
            count: 0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    /// Adds `mask * W * I` to the numerator and `mask * I^2` to the
    /// denominator. The mask must hold only 0 and 1.
    pub fn accumulate(&mut self, img: &Plane, residual: &Plane, mask: Option<&Plane>) -> Result<()> {
        if img.dims() != self.dims() {
            return Err(HsiError::invalid(format!(
                "accumulate: image {}x{} vs accumulator {}x{}",
                img.cols(),
                img.rows(),
                self.cols,
                self.rows
            )));
        }
        img.check_same_dims(residual, "accumulate residual")?;
        if let Some(m) = mask {
            img.check_same_dims(m, "accumulate mask")?;
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(HsiError::invalid("accumulate: mask must be binary"));
            }
        }
        let ones = std::iter::repeat(1.0);
        let mvals: Box<dyn Iterator<Item = f64>> = match mask {
            Some(m) => Box::new(m.data().iter().copied()),
            None => Box::new(ones),
        };
        // Convert first so a rejected term leaves the sums untouched.
        let mut terms = Vec::with_capacity(img.len());
        for ((&i, &w), m) in img.data().iter().zip(residual.data()).zip(mvals) {
            if m == 0.0 {
                terms.push((0, 0));
            } else {
                terms.push((to_fixed(w * i)?, to_fixed(i * i)?));
            }
        }
        let mut num = self.num.clone();
        let mut den = self.den.clone();
        for ((n, d), (tn, td)) in num.iter_mut().zip(den.iter_mut()).zip(terms) {
            *n = n.checked_add(tn).ok_or_else(overflow)?;
            *d = d.checked_add(td).ok_or_else(overflow)?;
        }
        self.num = num;
        self.den = den;
        self.count = self.count.checked_add(1).ok_or_else(overflow)?;
        Ok(())
    }

    /// Adds another accumulator's sums. Commutative and associative.
    pub fn merge(&mut self, other: &Accumulator) -> Result<()> {
        if other.dims() != self.dims() {
            return Err(HsiError::invalid("merge: accumulator dimension mismatch"));
        }
        for (a, b) in self.num.iter_mut().zip(&other.num) {
            *a = a.checked_add(*b).ok_or_else(overflow)?;
        }
        for (a, b) in self.den.iter_mut().zip(&other.den) {
            *a = a.checked_add(*b).ok_or_else(overflow)?;
        }
        self.count = self.count.checked_add(other.count).ok_or_else(overflow)?;
        Ok(())
    }

    pub fn numerator(&self) -> Plane {
        Plane::from_vec(self.rows, self.cols, self.num.iter().map(|&v| v as f64 / FIXED_ONE).collect())
    }

    pub fn denominator(&self) -> Plane {
        Plane::from_vec(self.rows, self.cols, self.den.iter().map(|&v| v as f64 / FIXED_ONE).collect())
    }

    /// `numerator / (denominator + eps)`.
    pub fn finalize(&self, eps: f64, source_kind: SourceKind, denoise_cfg: &DenoiseConfig) -> Result<Fingerprint> {
        if self.count == 0 {
            return Err(HsiError::EmptyAccumulator);
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(HsiError::field("eps", "must be positive"));
        }
        let data = self
            .num
            .iter()
            .zip(&self.den)
            .map(|(&n, &d)| (n as f64 / FIXED_ONE) / (d as f64 / FIXED_ONE + eps))
            .collect();
        Fingerprint::new(Plane::from_vec(self.rows, self.cols, data), self.count, source_kind, denoise_cfg.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub denoise: DenoiseConfig,
    pub eps: f64,
    /// Pixels at or above this luminance are left out of the sums.
    pub saturation_threshold: Option<f64>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            denoise: DenoiseConfig::default(),
            eps: DEFAULT_EPS,
            saturation_threshold: Some(DEFAULT_SATURATION_THRESHOLD),
        }
    }
}

/// Accumulator holding one frame of `seq`.
pub fn frame_accumulator(seq: &FrameSequence, index: usize, cfg: &EstimateConfig) -> Result<Accumulator> {
    let img = seq.load(index)?;
    let residual = image_residual(&img, &cfg.denoise)?;
    let mask = cfg.saturation_threshold.map(|t| saturation_mask(&img.luma, t));
    let (rows, cols) = img.dims();
    let mut acc = Accumulator::new(rows, cols);
    acc.accumulate(&img.luma, &residual, mask.as_ref())?;
    Ok(acc)
}

/// Sums over the frames at `indices`, extracting residuals in parallel.
pub fn accumulate_frames(seq: &FrameSequence, indices: &[usize], cfg: &EstimateConfig) -> Result<Accumulator> {
    cfg.denoise.validate()?;
    let (rows, cols) = seq.dims();
    indices
        .par_iter()
        .try_fold(
            || Accumulator::new(rows, cols),
            |mut acc, &i| {
                acc.merge(&frame_accumulator(seq, i, cfg)?)?;
                Ok(acc)
            },
        )
        .try_reduce(
            || Accumulator::new(rows, cols),
            |mut a, b| {
                a.merge(&b)?;
                Ok(a)
            },
        )
}

/// Fingerprint from every frame of `seq`.
pub fn estimate(seq: &FrameSequence, cfg: &EstimateConfig, kind: SourceKind) -> Result<Fingerprint> {
    if seq.is_empty() {
        return Err(HsiError::EmptyAccumulator);
    }
    let indices: Vec<usize> = (0..seq.len()).collect();
    accumulate_frames(seq, &indices, cfg)?.finalize(cfg.eps, kind, &cfg.denoise)
}

pub const WHITEN_MIN_SIDE: usize = 16;
const WHITEN_SMOOTH: usize = 7;

fn remove_row_col_means(data: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        let m = row.iter().sum::<f64>() / cols as f64;
        row.iter_mut().for_each(|v| *v -= m);
    }
    let mut col_means = vec![0.0; cols];
    for r in 0..rows {
        for (m, v) in col_means.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
            *m += v;
        }
    }
    for r in 0..rows {
        for (v, m) in data[r * cols..(r + 1) * cols].iter_mut().zip(&col_means) {
            *v -= m / rows as f64;
        }
    }
}

/// Circular `k x k` box mean of a row-major buffer.
fn circular_box(data: &[f64], rows: usize, cols: usize, k: usize) -> Vec<f64> {
    let h = (k / 2) as i64;
    let wrap = |i: i64, n: usize| i.rem_euclid(n as i64) as usize;
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        for c in 0..cols {
            tmp[r * cols + c] = (-h..=h).map(|d| row[wrap(c as i64 + d, cols)]).sum::<f64>();
        }
    }
    let mut out = vec![0.0; rows * cols];
    let norm = 1.0 / (k * k) as f64;
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = (-h..=h).map(|d| tmp[wrap(r as i64 + d, rows) * cols + c]).sum::<f64>() * norm;
        }
    }
    out
}

/// Removes row and column means, flattens the magnitude spectrum by its
/// local average, and scales to unit variance.
pub fn whiten(fp: &Fingerprint) -> Result<Fingerprint> {
    let (rows, cols) = fp.dims();
    if rows < WHITEN_MIN_SIDE || cols < WHITEN_MIN_SIDE {
        return Err(HsiError::invalid(format!(
            "whitening needs at least {WHITEN_MIN_SIDE}x{WHITEN_MIN_SIDE}, got {cols}x{rows}"
        )));
    }
    let mut out = fp.clone();
    if fp.plane.data().iter().all(|&v| v == 0.0) {
        out.postprocess.whiten_degenerate = true;
        return Ok(out);
    }
    let mut data = fp.plane.data().to_vec();
    remove_row_col_means(&mut data, rows, cols);

    let plan = Fft2::plan(rows, cols);
    let mut spec = plan.forward(&data);
    let half = cols / 2 + 1;
    // Full-size magnitude via Hermitian symmetry.
    let mut mag = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (k, rr) = if c < half { (c, r) } else { (cols - c, (rows - r) % rows) };
            mag[r * cols + c] = spec[k * rows + rr].norm();
        }
    }
    let smooth = circular_box(&mag, rows, cols, WHITEN_SMOOTH);
    let floor = 1e-12 * smooth.iter().fold(0.0f64, |a, &b| a.max(b));
    for k in 0..half {
        for r in 0..rows {
            spec[k * rows + r] /= smooth[r * cols + k] + floor;
        }
    }
    let mut data = plan.inverse(spec);
    remove_row_col_means(&mut data, rows, cols);
    let var = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
    if !(var > 0.0) {
        out.postprocess.whiten_degenerate = true;
        return Ok(out);
    }
    let inv = 1.0 / var.sqrt();
    data.iter_mut().for_each(|v| *v *= inv);
    let mut w = fp.with_plane(Plane::from_vec(rows, cols, data))?;
    w.postprocess.whitened = true;
    Ok(w)
}

const MAGIC: &[u8; 5] = b"HSIFP";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 6 + 4 + 4 + 4 + 1 + 1 + 2;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    denoise: DenoiseConfig,
    geometry_note: Option<SimilarityTransform>,
}

pub fn to_bytes(fp: &Fingerprint) -> Result<Vec<u8>> {
    let (rows, cols) = fp.dims();
    let meta = serde_json::to_vec(&Metadata {
        denoise: fp.denoise_cfg.clone(),
        geometry_note: fp.geometry_note,
    })?;
    let meta_len = u16::try_from(meta.len()).map_err(|_| HsiError::invalid("fingerprint metadata too long"))?;
    let dim = |v: usize, name: &str| u32::try_from(v).map_err(|_| HsiError::invalid(format!("{name} too large")));
    let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + rows * cols * 4);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&dim(rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&dim(cols, "cols")?.to_le_bytes());
    out.extend_from_slice(&fp.num_inputs.to_le_bytes());
    out.push(fp.source_kind.code());
    out.push(fp.postprocess.bits());
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&meta);
    for &v in fp.plane.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(HsiError::Format {
                offset: self.buf.len(),
                reason: format!("truncated while reading {what}: need {n} bytes at {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Fingerprint> {
    let mut rd = Reader { buf, pos: 0 };
    let magic_len = MAGIC.len().min(buf.len());
    if let Some(i) = (0..magic_len).find(|&i| buf[i] != MAGIC[i]) {
        return Err(HsiError::Format {
            offset: i,
            reason: "bad magic, not a fingerprint file".into(),
        });
    }
    rd.take(MAGIC.len(), "magic")?;
    let version = rd.take(1, "version")?[0];
    if version != FORMAT_VERSION {
        return Err(HsiError::UnsupportedVersion(version));
    }
    let rows = rd.u32("rows")? as usize;
    let cols = rd.u32("cols")? as usize;
    if rows == 0 || cols == 0 {
        return Err(HsiError::Format {
            offset: 6,
            reason: format!("zero dimension {cols}x{rows}"),
        });
    }
    let num_inputs = rd.u32("num_inputs")?;
    if num_inputs == 0 {
        return Err(HsiError::Format {
            offset: 14,
            reason: "num_inputs is zero".into(),
        });
    }
    let kind_at = rd.pos;
    let source_kind = SourceKind::from_code(rd.take(1, "source kind")?[0]).ok_or_else(|| HsiError::Format {
        offset: kind_at,
        reason: format!("unknown source kind {}", buf[kind_at]),
    })?;
    let flags_at = rd.pos;
    let postprocess = Postprocess::from_bits(rd.take(1, "flags")?[0]).ok_or_else(|| HsiError::Format {
        offset: flags_at,
        reason: format!("unknown postprocess flags {:#04x}", buf[flags_at]),
    })?;
    let meta_len = u16::from_le_bytes(rd.take(2, "metadata length")?.try_into().expect("2 bytes")) as usize;
    let meta_at = rd.pos;
    let meta: Metadata = serde_json::from_slice(rd.take(meta_len, "metadata")?).map_err(|e| HsiError::Format {
        offset: meta_at,
        reason: format!("metadata: {e}"),
    })?;
    let n = rows.checked_mul(cols).filter(|n| *n <= usize::MAX / 4).ok_or_else(|| HsiError::Format {
        offset: 6,
        reason: "dimensions overflow".into(),
    })?;
    let data_at = rd.pos;
    let raw = rd.take(n * 4, "plane data")?;
    let mut data = Vec::with_capacity(n);
    for (i, ch) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(ch.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(HsiError::Format {
                offset: data_at + 4 * i,
                reason: "non-finite value".into(),
            });
        }
        data.push(v as f64);
    }
    if rd.pos != buf.len() {
        return Err(HsiError::Format {
            offset: rd.pos,
            reason: format!("{} trailing bytes", buf.len() - rd.pos),
        });
    }
    Ok(Fingerprint {
        plane: Plane::from_vec(rows, cols, data),
        num_inputs,
        source_kind,
        denoise_cfg: meta.denoise,
        postprocess,
        geometry_note: meta.geometry_note,
    })
}

pub fn save(fp: &Fingerprint, path: &Path) -> Result<()> {
    let bytes = to_bytes(fp)?;
    let mut f = std::fs::File::create(path).map_err(|e| HsiError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| HsiError::io(path, e))
}

pub fn load(path: &Path) -> Result<Fingerprint> {
    let bytes = std::fs::read(path).map_err(|e| HsiError::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::pearson;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(rows: usize, cols: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn fp_of(p: Plane) -> Fingerprint {
        Fingerprint::new(p, 3, SourceKind::StillImages, DenoiseConfig::default()).unwrap()
    }

    #[test]
    fn single_term_sums() {
        let img = Plane::filled(4, 5, 100.0);
        let w = Plane::from_fn(4, 5, |r, c| r as f64 - c as f64 * 0.5);
        let mut acc = Accumulator::new(4, 5);
        acc.accumulate(&img, &w, None).unwrap();
        assert_eq!(acc.numerator(), w.scaled(100.0));
        assert_eq!(acc.denominator(), Plane::filled(4, 5, 10000.0));
        acc.accumulate(&img, &w, None).unwrap();
        assert_eq!(acc.numerator(), w.scaled(200.0));
        assert_eq!(acc.count(), 2);
    }

    #[test]
    fn masked_pixels_are_untouched() {
        let img = Plane::filled(2, 2, 10.0);
        let w = Plane::filled(2, 2, 1.0);
        let mask = Plane::new(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let mut acc = Accumulator::new(2, 2);
        acc.accumulate(&img, &w, Some(&mask)).unwrap();
        assert_eq!(acc.numerator().data(), &[10.0, 0.0, 10.0, 10.0]);
        assert_eq!(acc.denominator().data(), &[100.0, 0.0, 100.0, 100.0]);
        let bad = Plane::filled(2, 2, 0.5);
        assert!(acc.accumulate(&img, &w, Some(&bad)).is_err());
        assert!(acc.accumulate(&Plane::zeros(3, 2), &w, None).is_err());
        assert_eq!(acc.count(), 1);
    }

    #[test]
    fn finalize_single_constant_image() {
        let c = 128.0;
        let w = noise(8, 8, 1);
        let mut acc = Accumulator::new(8, 8);
        acc.accumulate(&Plane::filled(8, 8, c), &w, None).unwrap();
        let fp = acc.finalize(1.0, SourceKind::StillImages, &DenoiseConfig::default()).unwrap();
        for (k, wv) in fp.plane().data().iter().zip(w.data()) {
            let want = (wv * c) / (c * c + 1.0);
            assert!((k - want).abs() < 1e-6 * want.abs().max(1e-3));
        }
        assert_eq!(fp.num_inputs, 1);
    }

    #[test]
    fn dark_pixels_give_zero() {
        let mut acc = Accumulator::new(2, 2);
        acc.accumulate(&Plane::zeros(2, 2), &Plane::filled(2, 2, 3.0), None).unwrap();
        let fp = acc.finalize(1.0, SourceKind::StillImages, &DenoiseConfig::default()).unwrap();
        assert!(fp.plane().data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            Accumulator::new(2, 2).finalize(1.0, SourceKind::StillImages, &DenoiseConfig::default()),
            Err(HsiError::EmptyAccumulator)
        ));
    }

    #[test]
    fn order_and_grouping_do_not_matter() {
        let imgs: Vec<Plane> = (0..6).map(|i| noise(6, 7, i).map(|v| 120.0 + 30.0 * v)).collect();
        let res: Vec<Plane> = (0..6).map(|i| noise(6, 7, 100 + i)).collect();
        let mut a = Accumulator::new(6, 7);
        for i in 0..6 {
            a.accumulate(&imgs[i], &res[i], None).unwrap();
        }
        let mut b1 = Accumulator::new(6, 7);
        let mut b2 = Accumulator::new(6, 7);
        for i in [5, 3, 1] {
            b1.accumulate(&imgs[i], &res[i], None).unwrap();
        }
        for i in [4, 0, 2] {
            b2.accumulate(&imgs[i], &res[i], None).unwrap();
        }
        b2.merge(&b1).unwrap();
        assert_eq!(a, b2);
    }

    #[test]
    fn huge_terms_rejected() {
        let mut acc = Accumulator::new(1, 2);
        let err = acc.accumulate(&Plane::filled(1, 2, 1e20), &Plane::filled(1, 2, 1.0), None);
        assert!(err.is_err());
        assert_eq!(acc.count(), 0);
    }

    #[test]
    fn whiten_removes_row_and_column_offsets() {
        let base = noise(32, 40, 7);
        let offs = Plane::from_fn(32, 40, |r, c| base.get(r, c) + 3.0 * r as f64 - 0.5 * c as f64);
        let w = whiten(&fp_of(offs)).unwrap();
        assert!(w.postprocess.whitened);
        let p = w.plane();
        for r in 0..32 {
            assert!(p.row(r).iter().sum::<f64>().abs() / 40.0 < 1e-6);
        }
        for c in 0..40 {
            assert!((0..32).map(|r| p.get(r, c)).sum::<f64>().abs() / 32.0 < 1e-6);
        }
        assert!((p.variance() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn whiten_keeps_white_noise() {
        let n = noise(128, 96, 8);
        let w = whiten(&fp_of(n.clone())).unwrap();
        assert!(pearson(&n, w.plane()).unwrap() > 0.95);
    }

    #[test]
    fn whiten_flattens_a_periodic_artifact() {
        let n = noise(64, 64, 9);
        let art = Plane::from_fn(64, 64, |r, c| n.get(r, c) + 4.0 * ((r % 8) as f64 - 3.5) * ((c % 8) as f64 - 3.5) / 12.0);
        let w = whiten(&fp_of(art.clone())).unwrap();
        let before = pearson(&n, &art).unwrap();
        let after = pearson(&n, w.plane()).unwrap();
        assert!(after > before + 0.05, "{before} -> {after}");
    }

    #[test]
    fn whiten_zero_and_small_planes() {
        let w = whiten(&fp_of(Plane::zeros(16, 16))).unwrap();
        assert!(w.postprocess.whiten_degenerate && !w.postprocess.whitened);
        assert!(w.plane().data().iter().all(|&v| v == 0.0));
        assert!(whiten(&fp_of(Plane::zeros(15, 16))).is_err());
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let mut fp = fp_of(noise(9, 11, 10).scaled(0.01));
        fp.geometry_note = Some(SimilarityTransform::new(0.59, 0.1, 0, 307));
        fp.postprocess.whitened = true;
        fp.source_kind = SourceKind::RegisteredFrames;
        fp.denoise_cfg.sigma0_sq = 0.1 + 0.2;
        let bytes = to_bytes(&fp).unwrap();
        assert_eq!(&bytes[..6], b"HSIFP\x01");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, fp);
        for (a, b) in back.plane().data().iter().zip(fp.plane().data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn format_errors() {
        let bytes = to_bytes(&fp_of(noise(4, 4, 11))).unwrap();
        let err = from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, HsiError::Format { offset, .. } if offset == bytes.len() - 3), "{err}");

        let mut v = bytes.clone();
        v[5] = 2;
        assert!(matches!(from_bytes(&v), Err(HsiError::UnsupportedVersion(2))));

        let mut v = bytes.clone();
        v[2] = b'x';
        assert!(matches!(from_bytes(&v), Err(HsiError::Format { offset: 2, .. })));

        let mut v = bytes.clone();
        v.push(0);
        assert!(matches!(from_bytes(&v), Err(HsiError::Format { .. })));

        assert!(matches!(from_bytes(b"HSI"), Err(HsiError::Format { offset: 3, .. })));
        let mut v = bytes.clone();
        v[18] = 9;
        assert!(matches!(from_bytes(&v), Err(HsiError::Format { offset: 18, .. })));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.hsifp");
        let fp = fp_of(noise(20, 30, 12));
        save(&fp, &path).unwrap();
        assert_eq!(load(&path).unwrap(), fp);
        assert!(matches!(load(&dir.path().join("missing")), Err(HsiError::Io { .. })));
    }

    #[test]
    fn estimate_from_sequence_is_deterministic() {
        let frames: Vec<Plane> = (0..4).map(|i| noise(32, 32, 20 + i).map(|v| 120.0 + 10.0 * v)).collect();
        let seq = FrameSequence::from_planes(frames).unwrap();
        let cfg = EstimateConfig::default();
        let a = estimate(&seq, &cfg, SourceKind::VideoFrames).unwrap();
        let b = estimate(&seq, &cfg, SourceKind::VideoFrames).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_inputs, 4);
        let rev = seq.subset(&[3, 2, 1, 0]).unwrap();
        assert_eq!(estimate(&rev, &cfg, SourceKind::VideoFrames).unwrap(), a);
    }
}
