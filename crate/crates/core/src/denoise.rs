//! Noise residual extraction `W = I - F(I)`.
//!
//! The default filter is a separable 8-tap Daubechies wavelet decomposition
//! whose detail subbands are attenuated by a local Wiener gain. The local
//! signal variance is the minimum over several square windows of
//! `mean(d^2) - sigma0^2`, clamped at zero. Both the wavelet and the window
//! statistics use half-sample symmetric extension at the borders.

use serde::{Deserialize, Serialize};

use crate::error::{HsiError, Result};
use crate::imagery::{LoadedImage, LUMA_WEIGHTS};
use crate::plane::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    WaveletWiener,
    GaussianHighpass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseConfig {
    pub levels: usize,
    pub sigma0_sq: f64,
    pub window_sizes: Vec<usize>,
    pub filter_kind: FilterKind,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            sigma0_sq: 9.0,
            window_sizes: vec![3, 5, 7, 9],
            filter_kind: FilterKind::WaveletWiener,
        }
    }
}

impl DenoiseConfig {
    pub fn gaussian_highpass() -> Self {
        Self {
            filter_kind: FilterKind::GaussianHighpass,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(HsiError::field("levels", "must be at least 1"));
        }
        if !(self.sigma0_sq > 0.0 && self.sigma0_sq.is_finite()) {
            return Err(HsiError::field("sigma0_sq", "must be positive"));
        }
        if self.window_sizes.is_empty() {
            return Err(HsiError::field("window_sizes", "must not be empty"));
        }
        if let Some(w) = self
            .window_sizes
            .iter()
            .find(|&&w| w < 3 || w % 2 == 0)
        {
            return Err(HsiError::field(
                "window_sizes",
                format!("{w} is not an odd size >= 3"),
            ));
        }
        Ok(())
    }
}

/// Denoised outputs are rounded to multiples of 2^-24. With inputs on the
/// same grid (any 8-bit image), `img - denoised` and the sum back are exact.
const OUTPUT_QUANTUM: f64 = (1u64 << 24) as f64;

#[inline]
fn quantize(v: f64) -> f64 {
    (v * OUTPUT_QUANTUM).round() / OUTPUT_QUANTUM
}

pub fn denoise(img: &Plane, cfg: &DenoiseConfig) -> Result<Plane> {
    cfg.validate()?;
    let out = match cfg.filter_kind {
        FilterKind::WaveletWiener => wavelet_wiener(img, cfg)?,
        FilterKind::GaussianHighpass => binomial_blur(img),
    };
    Ok(out.map(quantize))
}

pub fn noise_residual(img: &Plane, cfg: &DenoiseConfig) -> Result<Plane> {
    let den = denoise(img, cfg)?;
    img.sub(&den)
}

/// Residual of a decoded image. Color inputs are filtered per channel and
/// the channel residuals combined with the luma weights.
pub fn image_residual(img: &LoadedImage, cfg: &DenoiseConfig) -> Result<Plane> {
    match &img.rgb {
        None => noise_residual(&img.luma, cfg),
        Some(channels) => {
            let mut acc = vec![0.0; img.luma.len()];
            for (ch, w) in channels.iter().zip(LUMA_WEIGHTS) {
                let r = noise_residual(ch, cfg)?;
                for (a, v) in acc.iter_mut().zip(r.data()) {
                    *a += w * v;
                }
            }
            let (rows, cols) = img.dims();
            Ok(Plane::from_vec(rows, cols, acc))
        }
    }
}

// ---------------------------------------------------------------------------
// Small row-major matrix used inside the transform.

#[derive(Clone)]
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        const B: usize = 32;
        for r0 in (0..self.rows).step_by(B) {
            for c0 in (0..self.cols).step_by(B) {
                for r in r0..(r0 + B).min(self.rows) {
                    for c in c0..(c0 + B).min(self.cols) {
                        out.data[c * self.rows + r] = self.data[r * self.cols + c];
                    }
                }
            }
        }
        out
    }
}

/// Half-sample symmetric reflection of an arbitrary index into `0..n`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n2 = 2 * n as isize;
    let m = i.rem_euclid(n2);
    if m < n as isize {
        m as usize
    } else {
        (n2 - 1 - m) as usize
    }
}

// ---------------------------------------------------------------------------
// Daubechies-4 (8 taps) analysis/synthesis.

const DEC_LO: [f64; 8] = [
    -0.010_597_401_784_997_278,
    0.032_883_011_666_982_945,
    0.030_841_381_835_986_965,
    -0.187_034_811_718_881_14,
    -0.027_983_769_416_983_85,
    0.630_880_767_929_590_4,
    0.714_846_570_552_541_5,
    0.230_377_813_308_855_23,
];

const TAPS: usize = DEC_LO.len();

fn dec_hi() -> [f64; TAPS] {
    let mut h = [0.0; TAPS];
    for (k, v) in h.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        *v = sign * DEC_LO[TAPS - 1 - k];
    }
    h
}

fn coeff_len(n: usize) -> usize {
    (n + TAPS - 1) / 2
}

/// One analysis step along every row: returns (approximation, detail).
fn analyze_rows(m: &Mat) -> (Mat, Mat) {
    let hi = dec_hi();
    let n = m.cols;
    let nc = coeff_len(n);
    let pad = TAPS - 1;
    let mut lo_out = Mat::zeros(m.rows, nc);
    let mut hi_out = Mat::zeros(m.rows, nc);
    let mut ext = vec![0.0; n + 2 * pad];
    for r in 0..m.rows {
        let row = &m.data[r * n..(r + 1) * n];
        for (k, e) in ext.iter_mut().enumerate() {
            *e = row[reflect(k as isize - pad as isize, n)];
        }
        let lo_row = &mut lo_out.data[r * nc..(r + 1) * nc];
        let hi_row = &mut hi_out.data[r * nc..(r + 1) * nc];
        for i in 0..nc {
            // full-convolution index 2i+1, shifted by the padding
            let base = 2 * i + 1 + pad;
            let (mut a, mut d) = (0.0, 0.0);
            for j in 0..TAPS {
                let x = ext[base - j];
                a += DEC_LO[j] * x;
                d += hi[j] * x;
            }
            lo_row[i] = a;
            hi_row[i] = d;
        }
    }
    (lo_out, hi_out)
}

/// Inverse of [`analyze_rows`], producing rows of length `n`.
fn synthesize_rows(lo: &Mat, hi: &Mat, n: usize) -> Mat {
    let dh = dec_hi();
    let mut rec_lo = DEC_LO;
    rec_lo.reverse();
    let mut rec_hi = dh;
    rec_hi.reverse();
    let nc = lo.cols;
    let mut out = Mat::zeros(lo.rows, n);
    for r in 0..lo.rows {
        let a = &lo.data[r * nc..(r + 1) * nc];
        let d = &hi.data[r * nc..(r + 1) * nc];
        let row = &mut out.data[r * n..(r + 1) * n];
        for m in 0..nc {
            let (am, dm) = (a[m], d[m]);
            for j in 0..TAPS {
                let idx = (2 * m + j) as isize - (TAPS as isize - 2);
                if idx >= 0 && (idx as usize) < n {
                    row[idx as usize] += am * rec_lo[j] + dm * rec_hi[j];
                }
            }
        }
    }
    out
}

struct Level {
    /// shape of the input to this level, in the orientation it was analyzed
    rows: usize,
    cols: usize,
    details: [Mat; 3],
}

/// One 2-D level. Subbands come back transposed relative to the input;
/// [`synthesize_2d`] undoes exactly that.
fn analyze_2d(a: &Mat) -> (Mat, [Mat; 3]) {
    let (l, h) = analyze_rows(a);
    let (ll, lh) = analyze_rows(&l.transpose());
    let (hl, hh) = analyze_rows(&h.transpose());
    (ll, [lh, hl, hh])
}

fn synthesize_2d(ll: &Mat, details: &[Mat; 3], rows: usize, cols: usize) -> Mat {
    let lt = synthesize_rows(ll, &details[0], rows);
    let ht = synthesize_rows(&details[1], &details[2], rows);
    synthesize_rows(&lt.transpose(), &ht.transpose(), cols)
}

/// Mean over a `w x w` window with symmetric extension.
fn box_mean(src: &Mat, w: usize) -> Mat {
    let r = w / 2;
    let (rows, cols) = (src.rows, src.cols);
    let mut tmp = Mat::zeros(rows, cols);
    let mut prefix = vec![0.0; cols.max(rows) + 2 * r + 1];
    for y in 0..rows {
        let row = &src.data[y * cols..(y + 1) * cols];
        prefix[0] = 0.0;
        for k in 0..cols + 2 * r {
            prefix[k + 1] = prefix[k] + row[reflect(k as isize - r as isize, cols)];
        }
        for x in 0..cols {
            tmp.data[y * cols + x] = prefix[x + w] - prefix[x];
        }
    }
    let mut out = Mat::zeros(rows, cols);
    let norm = 1.0 / (w * w) as f64;
    let mut col = vec![0.0; rows];
    for x in 0..cols {
        for (y, c) in col.iter_mut().enumerate() {
            *c = tmp.data[y * cols + x];
        }
        prefix[0] = 0.0;
        for k in 0..rows + 2 * r {
            prefix[k + 1] = prefix[k] + col[reflect(k as isize - r as isize, rows)];
        }
        for y in 0..rows {
            out.data[y * cols + x] = (prefix[y + w] - prefix[y]) * norm;
        }
    }
    out
}

fn wiener_attenuate(band: &mut Mat, cfg: &DenoiseConfig) {
    let sq = Mat {
        rows: band.rows,
        cols: band.cols,
        data: band.data.iter().map(|v| v * v).collect(),
    };
    let mut local_var = vec![f64::INFINITY; band.data.len()];
    for &w in &cfg.window_sizes {
        let m = box_mean(&sq, w);
        for (lv, &mv) in local_var.iter_mut().zip(&m.data) {
            *lv = lv.min((mv - cfg.sigma0_sq).max(0.0));
        }
    }
    for (d, &v) in band.data.iter_mut().zip(&local_var) {
        *d *= v / (v + cfg.sigma0_sq);
    }
}

fn wavelet_wiener(img: &Plane, cfg: &DenoiseConfig) -> Result<Plane> {
    let min_side = 1usize << cfg.levels;
    let (rows, cols) = img.dims();
    if rows < min_side || cols < min_side {
        return Err(HsiError::invalid(format!(
            "{rows}x{cols} image too small for {} wavelet levels (needs {min_side} pixels per side)",
            cfg.levels
        )));
    }
    let mut approx = Mat {
        rows,
        cols,
        data: img.data().to_vec(),
    };
    let mut levels = Vec::with_capacity(cfg.levels);
    for _ in 0..cfg.levels {
        let (ll, mut details) = analyze_2d(&approx);
        for band in details.iter_mut() {
            wiener_attenuate(band, cfg);
        }
        levels.push(Level {
            rows: approx.rows,
            cols: approx.cols,
            details,
        });
        approx = ll;
    }
    for level in levels.iter().rev() {
        approx = synthesize_2d(&approx, &level.details, level.rows, level.cols);
    }
    debug_assert_eq!((approx.rows, approx.cols), (rows, cols));
    Ok(Plane::from_vec(rows, cols, approx.data))
}

/// 3x3 binomial blur (1 2 1 / 2 4 2 / 1 2 1) / 16 with symmetric borders.
fn binomial_blur(img: &Plane) -> Plane {
    let (rows, cols) = img.dims();
    let k = [1.0, 2.0, 1.0];
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut s = 0.0;
            for (t, w) in k.iter().enumerate() {
                s += w * img.get(r, reflect(c as isize + t as isize - 1, cols));
            }
            tmp[r * cols + c] = s;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut s = 0.0;
            for (t, w) in k.iter().enumerate() {
                s += w * tmp[reflect(r as isize + t as isize - 1, rows) * cols + c];
            }
            out[r * cols + c] = s / 16.0;
        }
    }
    Plane::from_vec(rows, cols, out)
}
