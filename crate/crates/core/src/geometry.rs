//! Similarity transforms linking the still-image sensor geometry to the video
//! geometry, and the per-model device presets.
//!
//! A transform is always applied as scale, then rotate about the plane
//! center, then crop. Crop offsets are the upper-left corner of the output
//! window inside the scaled (and rotated) plane; negative offsets mean the
//! output is wider than the source.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HsiError, Result};
use crate::plane::{Plane, Resolution};

pub const MAX_SCALE: f64 = 4.0;
pub const MAX_ROTATION_DEG: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityTransform {
    pub scale: f64,
    /// Counter-clockwise, degrees.
    pub rotation_deg: f64,
    pub crop_x: i64,
    pub crop_y: i64,
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        scale: 1.0,
        rotation_deg: 0.0,
        crop_x: 0,
        crop_y: 0,
    };

    pub fn new(scale: f64, rotation_deg: f64, crop_x: i64, crop_y: i64) -> Self {
        Self {
            scale,
            rotation_deg,
            crop_x,
            crop_y,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        check_rotation(self.rotation_deg)
    }

    /// Dimensions of the plane after the scaling step.
    pub fn scaled_dims(&self, (rows, cols): (usize, usize)) -> (usize, usize) {
        scaled_dims(rows, cols, self.scale)
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale <= MAX_SCALE) {
        return Err(HsiError::field(
            "scale",
            format!("{scale} outside (0, {MAX_SCALE}]"),
        ));
    }
    Ok(())
}

fn check_rotation(deg: f64) -> Result<()> {
    if !(deg.abs() <= MAX_ROTATION_DEG) {
        return Err(HsiError::field(
            "rotation_deg",
            format!("{deg} outside [-{MAX_ROTATION_DEG}, {MAX_ROTATION_DEG}]"),
        ));
    }
    Ok(())
}

pub fn scaled_dims(rows: usize, cols: usize, scale: f64) -> (usize, usize) {
    (
        (rows as f64 * scale).round() as usize,
        (cols as f64 * scale).round() as usize,
    )
}

/// Keys cubic convolution kernel with a = -0.5.
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Four source taps and weights for each output sample along one axis.
fn cubic_taps(n_in: usize, n_out: usize, scale: f64) -> Vec<([usize; 4], [f64; 4])> {
    let last = n_in as i64 - 1;
    (0..n_out)
        .map(|j| {
            let src = (j as f64 + 0.5) / scale - 0.5;
            let i0 = src.floor();
            let t = src - i0;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let i = i0 as i64 - 1 + k as i64;
                idx[k] = i.clamp(0, last) as usize;
                w[k] = cubic(t - (k as f64 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

/// Bicubic resampling to `round(dims * scale)`.
pub fn resample(p: &Plane, scale: f64) -> Result<Plane> {
    check_scale(scale)?;
    let (rows, cols) = p.dims();
    let (out_rows, out_cols) = scaled_dims(rows, cols, scale);
    if out_rows < 2 || out_cols < 2 {
        return Err(HsiError::invalid(format!(
            "resampling {cols}x{rows} by {scale} gives {out_cols}x{out_rows}, need at least 2x2"
        )));
    }
    if scale == 1.0 {
        return Ok(p.clone());
    }
    let xt = cubic_taps(cols, out_cols, scale);
    let yt = cubic_taps(rows, out_rows, scale);

    let src = p.data();
    let mut horiz = vec![0.0; rows * out_cols];
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        let out = &mut horiz[r * out_cols..(r + 1) * out_cols];
        for (o, (idx, w)) in out.iter_mut().zip(&xt) {
            *o = row[idx[0]] * w[0] + row[idx[1]] * w[1] + row[idx[2]] * w[2] + row[idx[3]] * w[3];
        }
    }
    let mut data = vec![0.0; out_rows * out_cols];
    for (r, (idx, w)) in yt.iter().enumerate() {
        let out = &mut data[r * out_cols..(r + 1) * out_cols];
        let rows4 = idx.map(|i| &horiz[i * out_cols..(i + 1) * out_cols]);
        for c in 0..out_cols {
            out[c] = rows4[0][c] * w[0] + rows4[1][c] * w[1] + rows4[2][c] * w[2] + rows4[3][c] * w[3];
        }
    }
    Ok(Plane::from_vec(out_rows, out_cols, data))
}

const EDGE_TOL: f64 = 1e-9;

/// Bilinear sample at continuous `(x, y)`; `None` outside the pixel-center hull.
#[inline]
fn bilinear(p: &Plane, x: f64, y: f64) -> Option<f64> {
    let (rows, cols) = p.dims();
    let (xmax, ymax) = ((cols - 1) as f64, (rows - 1) as f64);
    if x < -EDGE_TOL || y < -EDGE_TOL || x > xmax + EDGE_TOL || y > ymax + EDGE_TOL {
        return None;
    }
    let x = x.clamp(0.0, xmax);
    let y = y.clamp(0.0, ymax);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(cols - 1), (y0 + 1).min(rows - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = p.get(y0, x0) * (1.0 - fx) + p.get(y0, x1) * fx;
    let bot = p.get(y1, x0) * (1.0 - fx) + p.get(y1, x1) * fx;
    Some(top * (1.0 - fy) + bot * fy)
}

/// Rotates counter-clockwise (as displayed, y pointing down) about the plane
/// center. Returns the rotated plane and a 0/1 validity mask.
pub fn rotate(p: &Plane, deg: f64) -> Result<(Plane, Plane)> {
    check_rotation(deg)?;
    let (rows, cols) = p.dims();
    if deg == 0.0 {
        return Ok((p.clone(), Plane::filled(rows, cols, 1.0)));
    }
    let (sin, cos) = deg.to_radians().sin_cos();
    let (cx, cy) = ((cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; rows * cols];
    let mut mask = vec![0.0; rows * cols];
    for r in 0..rows {
        let dy = r as f64 - cy;
        for c in 0..cols {
            let dx = c as f64 - cx;
            let sx = cx + dx * cos - dy * sin;
            let sy = cy + dx * sin + dy * cos;
            if let Some(v) = bilinear(p, sx, sy) {
                out[r * cols + c] = v;
                mask[r * cols + c] = 1.0;
            }
        }
    }
    Ok((
        Plane::from_vec(rows, cols, out),
        Plane::from_vec(rows, cols, mask),
    ))
}

/// Extracts the `out_rows x out_cols` window whose upper-left corner sits at
/// `(crop_x, crop_y)` in `p`. Cells outside `p` are zero and masked out.
pub fn apply_crop(
    p: &Plane,
    crop_x: i64,
    crop_y: i64,
    (out_rows, out_cols): (usize, usize),
) -> Result<(Plane, Plane)> {
    if out_rows == 0 || out_cols == 0 {
        return Err(HsiError::invalid("crop output dimensions must be positive"));
    }
    let (rows, cols) = p.dims();
    let r_lo = crop_y.max(0);
    let r_hi = (crop_y + out_rows as i64).min(rows as i64);
    let c_lo = crop_x.max(0);
    let c_hi = (crop_x + out_cols as i64).min(cols as i64);
    if r_lo >= r_hi || c_lo >= c_hi {
        return Err(HsiError::invalid(format!(
            "crop window {out_cols}x{out_rows} at ({crop_x},{crop_y}) misses the {cols}x{rows} source"
        )));
    }
    let mut out = vec![0.0; out_rows * out_cols];
    let mut mask = vec![0.0; out_rows * out_cols];
    let width = (c_hi - c_lo) as usize;
    for sr in r_lo..r_hi {
        let orow = (sr - crop_y) as usize;
        let ocol = (c_lo - crop_x) as usize;
        let dst = orow * out_cols + ocol;
        out[dst..dst + width].copy_from_slice(&p.row(sr as usize)[c_lo as usize..c_hi as usize]);
        mask[dst..dst + width].fill(1.0);
    }
    Ok((
        Plane::from_vec(out_rows, out_cols, out),
        Plane::from_vec(out_rows, out_cols, mask),
    ))
}

/// Scale, rotate and crop `p` into an `out_dims` plane. Returns the result
/// and its validity mask.
pub fn apply_transform(
    p: &Plane,
    t: &SimilarityTransform,
    out_dims: (usize, usize),
) -> Result<(Plane, Plane)> {
    t.validate()?;
    let scaled = resample(p, t.scale)?;
    let (rotated, rmask) = rotate(&scaled, t.rotation_deg)?;
    let (out, mask) = apply_crop(&rotated, t.crop_x, t.crop_y, out_dims)?;
    if t.rotation_deg == 0.0 {
        return Ok((out, mask));
    }
    let (rm, _) = apply_crop(&rmask, t.crop_x, t.crop_y, out_dims)?;
    let combined = mask
        .data()
        .iter()
        .zip(rm.data())
        .map(|(a, b)| a * b)
        .collect();
    Ok((out, Plane::from_vec(out_dims.0, out_dims.1, combined)))
}

/// Maps a pixel of the source (reference) plane to continuous coordinates
/// in the transformed output plane.
#[derive(Debug, Clone, Copy)]
pub struct PointMap {
    scale: f64,
    sin: f64,
    cos: f64,
    cx: f64,
    cy: f64,
    crop_x: f64,
    crop_y: f64,
}

impl PointMap {
    pub fn new(t: &SimilarityTransform, source_dims: (usize, usize)) -> Self {
        let (srows, scols) = t.scaled_dims(source_dims);
        let (sin, cos) = t.rotation_deg.to_radians().sin_cos();
        Self {
            scale: t.scale,
            sin,
            cos,
            cx: (scols as f64 - 1.0) / 2.0,
            cy: (srows as f64 - 1.0) / 2.0,
            crop_x: t.crop_x as f64,
            crop_y: t.crop_y as f64,
        }
    }

    /// `(x, y)` in output coordinates of source pixel `(row, col)`.
    #[inline]
    pub fn map(&self, row: usize, col: usize) -> (f64, f64) {
        let sx = (col as f64 + 0.5) * self.scale - 0.5;
        let sy = (row as f64 + 0.5) * self.scale - 0.5;
        let (dx, dy) = (sx - self.cx, sy - self.cy);
        let x = self.cx + dx * self.cos + dy * self.sin;
        let y = self.cy - dx * self.sin + dy * self.cos;
        (x - self.crop_x, y - self.crop_y)
    }
}

/// Pulls an output-geometry plane (e.g. a video frame residual) back into the
/// source geometry of size `source_dims`, by bilinear sampling at the mapped
/// position of every source pixel. Unreachable pixels are zero and masked.
pub fn warp_to_source(
    out_plane: &Plane,
    t: &SimilarityTransform,
    source_dims: (usize, usize),
) -> Result<(Plane, Plane)> {
    t.validate()?;
    let map = PointMap::new(t, source_dims);
    let (rows, cols) = source_dims;
    let mut data = vec![0.0; rows * cols];
    let mut mask = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = map.map(r, c);
            if let Some(v) = bilinear(out_plane, x, y) {
                data[r * cols + c] = v;
                mask[r * cols + c] = 1.0;
            }
        }
    }
    Ok((
        Plane::from_vec(rows, cols, data),
        Plane::from_vec(rows, cols, mask),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformRanges {
    pub scale: [f64; 2],
    pub rotation_deg: [f64; 2],
    pub crop_x: [i64; 2],
    pub crop_y: [i64; 2],
}

impl TransformRanges {
    pub fn degenerate(t: &SimilarityTransform) -> Self {
        Self {
            scale: [t.scale, t.scale],
            rotation_deg: [t.rotation_deg, t.rotation_deg],
            crop_x: [t.crop_x, t.crop_x],
            crop_y: [t.crop_y, t.crop_y],
        }
    }

    pub fn contains(&self, t: &SimilarityTransform) -> bool {
        let tol = 1e-12;
        self.scale[0] - tol <= t.scale
            && t.scale <= self.scale[1] + tol
            && self.rotation_deg[0] - tol <= t.rotation_deg
            && t.rotation_deg <= self.rotation_deg[1] + tol
            && (self.crop_x[0]..=self.crop_x[1]).contains(&t.crop_x)
            && (self.crop_y[0]..=self.crop_y[1]).contains(&t.crop_y)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("scale", self.scale), ("rotation_deg", self.rotation_deg)] {
            if !(lo <= hi) {
                return Err(HsiError::field(
                    format!("ranges.{name}"),
                    format!("min {lo} > max {hi}"),
                ));
            }
        }
        for (name, [lo, hi]) in [("crop_x", self.crop_x), ("crop_y", self.crop_y)] {
            if lo > hi {
                return Err(HsiError::field(
                    format!("ranges.{name}"),
                    format!("min {lo} > max {hi}"),
                ));
            }
        }
        check_scale(self.scale[0])
            .and(check_scale(self.scale[1]))
            .map_err(|_| HsiError::field("ranges.scale", "bounds outside (0, 4]"))?;
        check_rotation(self.rotation_deg[0])
            .and(check_rotation(self.rotation_deg[1]))
            .map_err(|_| HsiError::field("ranges.rotation_deg", "bounds outside [-45, 45]"))
    }

    /// Expands every interval by `frac` of its width on each side.
    /// Degenerate scale and crop intervals get the fixed `pad_*` instead;
    /// rotation stays put when degenerate.
    pub fn widened(&self, frac: f64, pad_scale: f64, pad_crop: i64) -> Self {
        let widen_f = |[lo, hi]: [f64; 2], pad: f64| {
            let w = hi - lo;
            if w == 0.0 {
                [lo - pad, hi + pad]
            } else {
                [lo - frac * w, hi + frac * w]
            }
        };
        let widen_i = |[lo, hi]: [i64; 2]| {
            let w = (hi - lo) as f64;
            if w == 0.0 {
                [lo - pad_crop, hi + pad_crop]
            } else {
                let d = (frac * w).ceil() as i64;
                [lo - d, hi + d]
            }
        };
        let scale = widen_f(self.scale, pad_scale);
        Self {
            scale: [scale[0].max(1e-3), scale[1].min(MAX_SCALE)],
            rotation_deg: widen_f(self.rotation_deg, 0.0),
            crop_x: widen_i(self.crop_x),
            crop_y: widen_i(self.crop_y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub id: String,
    #[serde(default)]
    pub model: String,
    pub image_res: Resolution,
    pub video_res: Resolution,
    pub stabilized: bool,
    pub nominal: SimilarityTransform,
    pub ranges: TransformRanges,
}

/// Widening applied to measured ranges for search defaults, as a fraction of
/// the interval width per side.
pub const RANGE_WIDEN_PER_SIDE: f64 = 0.1;
/// Search half-width for models with a single measured scale.
pub const DEGENERATE_SCALE_PAD: f64 = 0.025;
/// Search half-width in pixels for models with a single measured crop.
pub const DEGENERATE_CROP_PAD: i64 = 24;

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        self.nominal.validate()?;
        self.ranges.validate()?;
        if !self.ranges.contains(&self.nominal) {
            return Err(HsiError::field("ranges", "do not contain the nominal transform"));
        }
        if !self.stabilized && self.ranges.rotation_deg != [0.0, 0.0] {
            return Err(HsiError::field(
                "ranges.rotation_deg",
                "must be [0, 0] for a non-stabilized device",
            ));
        }
        if self.image_res.width == 0
            || self.image_res.height == 0
            || self.video_res.width == 0
            || self.video_res.height == 0
        {
            return Err(HsiError::field("image_res/video_res", "must be positive"));
        }
        Ok(())
    }

    /// Parameter intervals used when searching for this device.
    pub fn search_ranges(&self) -> TransformRanges {
        self.ranges
            .widened(RANGE_WIDEN_PER_SIDE, DEGENERATE_SCALE_PAD, DEGENERATE_CROP_PAD)
    }

    /// Maps a plane of `image_res` dims into the video geometry with the
    /// nominal transform.
    pub fn apply_nominal(&self, p: &Plane) -> Result<(Plane, Plane)> {
        apply_transform(p, &self.nominal, self.video_res.dims())
    }
}

fn fixed(
    id: &str,
    model: &str,
    image: (usize, usize),
    video: (usize, usize),
    scale: f64,
    crop: (i64, i64),
) -> DeviceProfile {
    let nominal = SimilarityTransform::new(scale, 0.0, crop.0, crop.1);
    DeviceProfile {
        id: id.into(),
        model: model.into(),
        image_res: Resolution::new(image.0, image.1),
        video_res: Resolution::new(video.0, video.1),
        stabilized: false,
        ranges: TransformRanges::degenerate(&nominal),
        nominal,
    }
}

#[allow(clippy::too_many_arguments)]
fn stabilized(
    id: &str,
    model: &str,
    image: (usize, usize),
    scale: [f64; 3],
    cx: [i64; 3],
    cy: [i64; 3],
    rot: [f64; 3],
) -> DeviceProfile {
    DeviceProfile {
        id: id.into(),
        model: model.into(),
        image_res: Resolution::new(image.0, image.1),
        video_res: Resolution::new(1920, 1080),
        stabilized: true,
        nominal: SimilarityTransform::new(scale[1], rot[1], cx[1], cy[1]),
        ranges: TransformRanges {
            scale: [scale[0], scale[2]],
            rotation_deg: [rot[0], rot[2]],
            crop_x: [cx[0], cx[2]],
            crop_y: [cy[0], cy[2]],
        },
    }
}

/// The eighteen measured device models. Stabilized entries use the median
/// as nominal and the observed min/max as ranges.
pub fn builtin_profiles() -> Vec<DeviceProfile> {
    vec![
        fixed("C1", "Galaxy S3", (3264, 2448), (1920, 1080), 0.59, (0, 307)),
        fixed("C2", "Galaxy S3 Mini", (2560, 1920), (1280, 720), 0.5, (0, 228)),
        fixed("C3", "Galaxy S3 Mini", (2560, 1920), (1280, 720), 0.5, (0, 228)),
        fixed("C4", "Galaxy S4 Mini", (3264, 1836), (1920, 1080), 0.59, (0, 0)),
        fixed("C5", "Galaxy Tab 3 10.1", (2048, 1536), (1280, 720), 1.0, (408, 354)),
        fixed("C6", "Galaxy Tab A 10.1", (2592, 1944), (1280, 720), 0.49, (0, 246)),
        fixed("C7", "Galaxy Trend Plus", (2560, 1920), (1280, 720), 0.5, (0, 240)),
        fixed("C8", "Ascend G6", (3264, 2448), (1280, 720), 0.39, (0, 306)),
        fixed("C9", "Ipad 2", (960, 720), (1280, 720), 1.0, (-160, 0)),
        stabilized("C10", "Ipad Mini", (2592, 1936), [0.806, 0.815, 0.821], [243, 256, 261], [86, 100, 103], [-0.2, 0.0, 0.2]),
        stabilized("C11", "Iphone 4s", (3264, 2448), [0.748, 0.750, 0.753], [380, 388, 392], [250, 258, 265], [-0.2, 0.0, 0.2]),
        stabilized("C12", "Iphone 5", (3264, 2448), [0.684, 0.689, 0.691], [287, 294, 304], [135, 147, 165], [-0.2, 0.0, 0.6]),
        stabilized("C13", "Iphone 5c", (3264, 2448), [0.681, 0.686, 0.691], [301, 318, 327], [160, 181, 195], [-0.4, 0.0, 1.0]),
        stabilized("C14", "Iphone 5c", (3264, 2448), [0.686, 0.686, 0.689], [261, 301, 304], [119, 161, 165], [-0.4, 0.0, 0.0]),
        stabilized("C15", "Iphone 6", (3264, 2448), [0.696, 0.703, 0.713], [298, 322, 345], [172, 190, 218], [-0.2, 0.2, 1.6]),
        stabilized("C16", "Iphone 6", (3264, 2448), [0.703, 0.706, 0.708], [315, 323, 333], [178, 187, 201], [-0.2, 0.2, 0.4]),
        fixed("C17", "Lumia 640", (3264, 1840), (1920, 1080), 0.59, (0, 1)),
        stabilized("C18", "Xperia Z1c", (5248, 3936), [0.381, 0.384, 0.387], [548, 562, 574], [116, 121, 126], [0.0, 0.0, 0.0]),
    ]
}

pub fn find_profile<'a>(profiles: &'a [DeviceProfile], id: &str) -> Result<&'a DeviceProfile> {
    profiles
        .iter()
        .find(|p| p.id.eq_ignore_ascii_case(id))
        .ok_or_else(|| HsiError::UnknownProfile {
            id: id.to_string(),
            known: profiles
                .iter()
                .map(|p| p.id.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProfileFile {
    One(DeviceProfile),
    Many(Vec<DeviceProfile>),
}

/// Parses one profile or a JSON array of profiles.
pub fn parse_profiles(json: &str) -> Result<Vec<DeviceProfile>> {
    // untagged enums swallow field errors, so try each shape for its message
    let list = match serde_json::from_str::<ProfileFile>(json) {
        Ok(ProfileFile::One(p)) => vec![p],
        Ok(ProfileFile::Many(v)) => v,
        Err(_) => {
            let trimmed = json.trim_start();
            if trimmed.starts_with('[') {
                serde_json::from_str::<Vec<DeviceProfile>>(json)?
            } else {
                vec![serde_json::from_str::<DeviceProfile>(json)?]
            }
        }
    };
    for p in &list {
        p.validate()
            .map_err(|e| HsiError::invalid(format!("profile {}: {e}", p.id)))?;
    }
    Ok(list)
}

pub fn load_profiles(path: &Path) -> Result<Vec<DeviceProfile>> {
    let text = std::fs::read_to_string(path).map_err(|e| HsiError::io(path, e))?;
    parse_profiles(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(rows: usize, cols: usize) -> Plane {
        Plane::from_fn(rows, cols, |r, c| {
            let (x, y) = (c as f64 / cols as f64, r as f64 / rows as f64);
            100.0 + 50.0 * (6.0 * x).sin() * (4.0 * y).cos() + 20.0 * x * y
        })
    }

    fn interior_rms(a: &Plane, b: &Plane, margin: usize) -> f64 {
        let (rows, cols) = a.dims();
        let mut s = 0.0;
        let mut n = 0;
        for r in margin..rows - margin {
            for c in margin..cols - margin {
                let d = a.get(r, c) - b.get(r, c);
                s += d * d;
                n += 1;
            }
        }
        (s / n as f64).sqrt()
    }

    #[test]
    fn cubic_kernel_interpolates() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        let sum: f64 = (0..4).map(|k| cubic(0.3 - (k as f64 - 1.0))).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resample_identity_and_constant() {
        let p = smooth(20, 30);
        assert_eq!(resample(&p, 1.0).unwrap(), p);
        let c = resample(&Plane::filled(40, 60, 7.0), 0.5).unwrap();
        assert_eq!(c.dims(), (20, 30));
        assert!(c.data().iter().all(|v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn resample_dims_round() {
        let p = Plane::zeros(2448, 3264);
        let (r, c) = scaled_dims(p.rows(), p.cols(), 0.59);
        assert_eq!((r, c), (1444, 1926));
        assert!(resample(&Plane::zeros(3, 3), 0.3).is_err());
        assert_eq!(resample(&Plane::zeros(3, 3), 0.5).unwrap().dims(), (2, 2));
        assert!(resample(&Plane::zeros(3, 3), 4.5).is_err());
    }

    #[test]
    fn resample_round_trip_smooth() {
        let p = smooth(200, 240);
        let (lo, hi) = p.min_max();
        for s in [0.4, 0.59, 0.75, 1.0] {
            let down = resample(&p, s).unwrap();
            let back = resample(&down, 1.0 / s).unwrap();
            // dims can come back one pixel larger after double rounding
            let (r, c) = p.dims();
            assert!(back.rows() >= r && back.rows() <= r + 1 && back.cols() >= c && back.cols() <= c + 1);
            let back = back.sub_plane(0, 0, r, c).unwrap();
            let rms = interior_rms(&p, &back, 10);
            assert!(rms < 0.02 * (hi - lo), "scale {s}: rms {rms}");
        }
    }

    #[test]
    fn rotate_round_trip_and_mask() {
        let p = smooth(120, 160);
        let (lo, hi) = p.min_max();
        let (a, _) = rotate(&p, 0.2).unwrap();
        let (b, _) = rotate(&a, -0.2).unwrap();
        assert!(interior_rms(&p, &b, 8) < 0.01 * (hi - lo));

        let (same, m) = rotate(&p, 0.0).unwrap();
        assert_eq!(same, p);
        assert_eq!(m.mean(), 1.0);

        for deg in [0.5f64, 2.0, 5.0] {
            let (_, m) = rotate(&p, deg).unwrap();
            let bound = 1.0 - 4.0 * deg.to_radians().tan();
            assert!(m.mean() >= bound, "deg {deg}: {} < {bound}", m.mean());
        }
        assert!(rotate(&p, 90.0).is_err());
    }

    #[test]
    fn rotate_is_counter_clockwise() {
        // A bright pixel right of center moves up (smaller row) under CCW rotation.
        let mut p = Plane::zeros(21, 21);
        p.set(10, 15, 1.0);
        let (r, _) = rotate(&p, 30.0).unwrap();
        let (mut best, mut at) = (0.0, (0, 0));
        for row in 0..21 {
            for col in 0..21 {
                if r.get(row, col) > best {
                    best = r.get(row, col);
                    at = (row, col);
                }
            }
        }
        assert!(at.0 < 10 && at.1 > 10, "peak at {at:?}");
    }

    #[test]
    fn crop_identity_and_negative_offsets() {
        let p = smooth(10, 12);
        let (c, m) = apply_crop(&p, 0, 0, (10, 12)).unwrap();
        assert_eq!(c, p);
        assert_eq!(m.mean(), 1.0);

        let wide = Plane::filled(720, 1280, 3.0);
        let (c, m) = apply_crop(&wide, -160, 0, (720, 1600)).unwrap();
        assert_eq!(c.dims(), (720, 1600));
        for r in [0, 719] {
            for col in (0..160).chain(1440..1600) {
                assert_eq!(c.get(r, col), 0.0);
                assert_eq!(m.get(r, col), 0.0);
            }
            assert_eq!(c.get(r, 160), 3.0);
            assert_eq!(c.get(r, 1439), 3.0);
        }
        assert!(apply_crop(&p, 20, 0, (5, 5)).is_err());
        assert!(apply_crop(&p, 0, 0, (0, 5)).is_err());
    }

    #[test]
    fn crop_values_follow_definition() {
        let p = Plane::from_fn(8, 9, |r, c| (r * 100 + c) as f64);
        let (c, _) = apply_crop(&p, 2, 3, (4, 5)).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                assert_eq!(c.get(i, j), p.get(i + 3, j + 2));
            }
        }
    }

    #[test]
    fn c1_nominal_gives_video_dims() {
        let profiles = builtin_profiles();
        let c1 = find_profile(&profiles, "C1").unwrap();
        let img = Plane::zeros(2448, 3264);
        let (v, m) = c1.apply_nominal(&img).unwrap();
        assert_eq!(v.dims(), (1080, 1920));
        assert_eq!(m.mean(), 1.0);
    }

    #[test]
    fn builtin_profiles_match_tables() {
        let profiles = builtin_profiles();
        assert_eq!(profiles.len(), 18);
        for p in &profiles {
            p.validate().unwrap();
        }
        let c5 = find_profile(&profiles, "C5").unwrap();
        assert_eq!(c5.nominal, SimilarityTransform::new(1.0, 0.0, 408, 354));
        let c11 = find_profile(&profiles, "C11").unwrap();
        assert_eq!(c11.ranges.scale, [0.748, 0.753]);
        assert_eq!(c11.ranges.rotation_deg, [-0.2, 0.2]);
        let c2 = find_profile(&profiles, "C2").unwrap();
        let c3 = find_profile(&profiles, "C3").unwrap();
        assert_eq!(c2.nominal, c3.nominal);
        assert_eq!(c2.ranges, c3.ranges);
        assert_eq!(profiles.iter().filter(|p| p.stabilized).count(), 8);
    }

    #[test]
    fn nominal_transform_dims_all_fixed_profiles() {
        // The crop window is anchored by its corner; only the scaled plane
        // has to overlap it for the transform to be defined.
        for p in builtin_profiles().iter().filter(|p| !p.stabilized) {
            let (irows, icols) = p.image_res.dims();
            let (srows, scols) = p.nominal.scaled_dims((irows, icols));
            let (vrows, vcols) = p.video_res.dims();
            assert!(p.nominal.crop_x < scols as i64 && p.nominal.crop_x + vcols as i64 > 0);
            assert!(p.nominal.crop_y < srows as i64 && p.nominal.crop_y + vrows as i64 > 0);
        }
        let profiles = builtin_profiles();
        for id in ["C2", "C9", "C17"] {
            let p = find_profile(&profiles, id).unwrap();
            let (v, _) = p.apply_nominal(&Plane::zeros(p.image_res.height, p.image_res.width)).unwrap();
            assert_eq!(v.dims(), p.video_res.dims(), "{id}");
        }
    }

    #[test]
    fn search_ranges_widen() {
        let profiles = builtin_profiles();
        let c11 = find_profile(&profiles, "C11").unwrap().search_ranges();
        assert!((c11.scale[0] - 0.7475).abs() < 1e-12);
        assert!((c11.scale[1] - 0.7535).abs() < 1e-12);
        assert_eq!(c11.crop_x, [378, 394]);
        let c1 = find_profile(&profiles, "C1").unwrap().search_ranges();
        assert!((c1.scale[0] - 0.565).abs() < 1e-12);
        assert_eq!(c1.crop_y, [283, 331]);
        assert_eq!(c1.rotation_deg, [0.0, 0.0]);
    }

    #[test]
    fn profile_json_round_trip_and_errors() {
        let profiles = builtin_profiles();
        let text = serde_json::to_string(&profiles).unwrap();
        assert_eq!(parse_profiles(&text).unwrap(), profiles);
        let one = serde_json::to_string(&profiles[9]).unwrap();
        assert_eq!(parse_profiles(&one).unwrap(), vec![profiles[9].clone()]);

        let mut bad = profiles[0].clone();
        bad.ranges.rotation_deg = [-1.0, 1.0];
        let err = parse_profiles(&serde_json::to_string(&bad).unwrap()).unwrap_err();
        assert!(err.to_string().contains("rotation_deg"), "{err}");

        let err = parse_profiles(r#"{"id":"X","bogus":1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");

        let err = find_profile(&profiles, "C99").unwrap_err();
        assert!(err.to_string().contains("C18"));
    }

    #[test]
    fn warp_back_inverts_forward_transform() {
        let src = smooth(160, 200);
        let (lo, hi) = src.min_max();
        let t = SimilarityTransform::new(0.75, 0.3, 10, 6);
        let out_dims = (90, 120);
        let (fwd, _) = apply_transform(&src, &t, out_dims).unwrap();
        let (back, mask) = warp_to_source(&fwd, &t, src.dims()).unwrap();
        let mut s = 0.0;
        let mut n = 0;
        let erode = |r: usize, c: usize| {
            (r.saturating_sub(2)..(r + 3).min(160))
                .all(|rr| (c.saturating_sub(2)..(c + 3).min(200)).all(|cc| mask.get(rr, cc) == 1.0))
        };
        for r in 0..160 {
            for c in 0..200 {
                if erode(r, c) {
                    let d = back.get(r, c) - src.get(r, c);
                    s += d * d;
                    n += 1;
                }
            }
        }
        assert!(n > 5000, "only {n} valid pixels");
        assert!((s / n as f64).sqrt() < 0.01 * (hi - lo));
    }

    #[test]
    fn point_map_identity() {
        let m = PointMap::new(&SimilarityTransform::IDENTITY, (10, 10));
        assert_eq!(m.map(3, 7), (7.0, 3.0));
        let m = PointMap::new(&SimilarityTransform::new(1.0, 0.0, 2, -3), (10, 10));
        assert_eq!(m.map(3, 7), (5.0, 6.0));
    }
}
