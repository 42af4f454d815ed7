//! Normalized cross-correlation over spatial shifts and the
//! peak-to-correlation-energy (PCE) statistic.
//!
//! For a query `X` and a reference `Y`, both mean-centered on their own
//! support,
//!
//! ```text
//! rho(s) = sum_p X(p) * Y(p + s) / (|X| * |Y|)
//! ```
//!
//! where `Y` is zero outside its support (zero down-right padding, no
//! wrap-around). A shift `s = (x, y)` is the position of the query's
//! upper-left corner inside the reference, i.e. the crop offset.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{HsiError, Result};
use crate::fft::{fast_len, Fft2, C64};
use crate::numeric::exact_mean;
use crate::plane::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Shift {
    pub x: i64,
    pub y: i64,
}

impl Shift {
    pub const ZERO: Shift = Shift { x: 0, y: 0 };

    pub fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }
}

/// Inclusive rectangle of shifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftWindow {
    pub x: [i64; 2],
    pub y: [i64; 2],
}

impl ShiftWindow {
    pub fn new(x0: i64, x1: i64, y0: i64, y1: i64) -> Self {
        Self {
            x: [x0, x1],
            y: [y0, y1],
        }
    }

    pub fn point(s: Shift) -> Self {
        Self::new(s.x, s.x, s.y, s.y)
    }

    pub fn is_empty(&self) -> bool {
        self.x[0] > self.x[1] || self.y[0] > self.y[1]
    }

    pub fn width(&self) -> usize {
        (self.x[1] - self.x[0] + 1).max(0) as usize
    }

    pub fn height(&self) -> usize {
        (self.y[1] - self.y[0] + 1).max(0) as usize
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, s: Shift) -> bool {
        (self.x[0]..=self.x[1]).contains(&s.x) && (self.y[0]..=self.y[1]).contains(&s.y)
    }

    pub fn intersect(&self, o: &ShiftWindow) -> ShiftWindow {
        ShiftWindow::new(
            self.x[0].max(o.x[0]),
            self.x[1].min(o.x[1]),
            self.y[0].max(o.y[0]),
            self.y[1].min(o.y[1]),
        )
    }

    pub fn expanded(&self, margin: usize) -> ShiftWindow {
        let m = margin as i64;
        ShiftWindow::new(self.x[0] - m, self.x[1] + m, self.y[0] - m, self.y[1] + m)
    }

    /// Every shift with at least one overlapping pixel between a query of
    /// `qdims` and a reference of `rdims`.
    pub fn overlapping(qdims: (usize, usize), rdims: (usize, usize)) -> ShiftWindow {
        ShiftWindow::new(
            1 - qdims.1 as i64,
            rdims.1 as i64 - 1,
            1 - qdims.0 as i64,
            rdims.0 as i64 - 1,
        )
    }
}

/// Admissible shift set, resolved against the plane sizes at search time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShiftRegion {
    /// Every overlapping shift.
    All,
    /// Shifts at which the smaller plane lies inside the larger one along
    /// each axis, so every cell has the same overlap area.
    Contained,
    /// Shifts within `fraction` of the larger plane size of the centered crop.
    Central { fraction: f64 },
    Window { x: [i64; 2], y: [i64; 2] },
}

impl Default for ShiftRegion {
    fn default() -> Self {
        ShiftRegion::Central { fraction: 0.25 }
    }
}

impl ShiftRegion {
    pub fn point(s: Shift) -> Self {
        ShiftRegion::Window {
            x: [s.x, s.x],
            y: [s.y, s.y],
        }
    }

    pub fn window(w: ShiftWindow) -> Self {
        ShiftRegion::Window { x: w.x, y: w.y }
    }

    pub fn resolve(&self, qdims: (usize, usize), rdims: (usize, usize)) -> Result<ShiftWindow> {
        let overlap = ShiftWindow::overlapping(qdims, rdims);
        let w = match *self {
            ShiftRegion::All => overlap,
            ShiftRegion::Contained => {
                let dx = rdims.1 as i64 - qdims.1 as i64;
                let dy = rdims.0 as i64 - qdims.0 as i64;
                ShiftWindow::new(dx.min(0), dx.max(0), dy.min(0), dy.max(0))
            }
            ShiftRegion::Central { fraction } => {
                if !(fraction >= 0.0) {
                    return Err(HsiError::field("region.fraction", "must be non-negative"));
                }
                let cx = (rdims.1 as i64 - qdims.1 as i64).div_euclid(2);
                let cy = (rdims.0 as i64 - qdims.0 as i64).div_euclid(2);
                let hx = (fraction * rdims.1.max(qdims.1) as f64).round() as i64;
                let hy = (fraction * rdims.0.max(qdims.0) as f64).round() as i64;
                ShiftWindow::new(cx - hx, cx + hx, cy - hy, cy + hy).intersect(&overlap)
            }
            ShiftRegion::Window { x, y } => ShiftWindow { x, y }.intersect(&overlap),
        };
        if w.is_empty() {
            return Err(HsiError::invalid(format!(
                "shift region {self:?} has no overlapping shift for {}x{} query on {}x{} reference",
                qdims.1, qdims.0, rdims.1, rdims.0
            )));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PceForm {
    /// rho_peak^2 over the mean of rho^2 off the peak.
    Squared,
    /// rho_peak over the mean of rho off the peak, as literally printed in
    /// some references; kept for comparison only.
    Unsquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationConfig {
    /// Side of the square peak neighborhood left out of the energy.
    pub nbhd: usize,
    pub pce_form: PceForm,
    /// Extra ring of shifts around the search region whose correlation
    /// contributes to the PCE energy but never to the peak.
    pub energy_margin: usize,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            nbhd: 11,
            pce_form: PceForm::Squared,
            energy_margin: 32,
        }
    }
}

impl CorrelationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nbhd == 0 || self.nbhd % 2 == 0 {
            return Err(HsiError::field("nbhd", format!("{} is not a positive odd integer", self.nbhd)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSurface {
    /// rho over the extent, row `i` / column `j` holding shift
    /// `(extent.x[0] + j, extent.y[0] + i)`.
    pub values: Plane,
    pub extent: ShiftWindow,
    /// Where the peak may lie; a subset of `extent`.
    pub region: ShiftWindow,
}

impl CorrelationSurface {
    pub fn at(&self, s: Shift) -> Option<f64> {
        self.extent.contains(s).then(|| {
            self.values
                .get((s.y - self.extent.y[0]) as usize, (s.x - self.extent.x[0]) as usize)
        })
    }

    /// Wraps an arbitrary surface whose index `(0,0)` is shift `origin`,
    /// with every cell admissible for the peak.
    pub fn from_plane(values: Plane, origin: Shift) -> Self {
        let extent = ShiftWindow::new(
            origin.x,
            origin.x + values.cols() as i64 - 1,
            origin.y,
            origin.y + values.rows() as i64 - 1,
        );
        Self {
            values,
            extent,
            region: extent,
        }
    }
}

/// A plane mean-centered on its support, with its Euclidean norm.
#[derive(Debug, Clone)]
pub struct Centered {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    norm: f64,
}

impl Centered {
    pub fn new(p: &Plane) -> Result<Self> {
        let m = p.mean();
        let data: Vec<f64> = p.data().iter().map(|v| v - m).collect();
        let norm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(HsiError::Degenerate(format!(
                "constant {}x{} plane has no correlation",
                p.cols(),
                p.rows()
            )));
        }
        Ok(Self {
            rows: p.rows(),
            cols: p.cols(),
            data,
            norm,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

/// FFT size for correlating a query over a window of `extent` shifts.
fn fft_dims(qdims: (usize, usize), extent: &ShiftWindow) -> (usize, usize) {
    (
        fast_len(extent.height() - 1 + qdims.0),
        fast_len(extent.width() - 1 + qdims.1),
    )
}

/// Copies `src` into a zeroed `n_rows x n_cols` buffer so that buffer
/// `(i, j)` holds `src(i + off_y, j + off_x)`.
fn embed(src: &Centered, n_rows: usize, n_cols: usize, off_x: i64, off_y: i64) -> Vec<f64> {
    let mut buf = vec![0.0; n_rows * n_cols];
    let r_lo = off_y.max(0);
    let r_hi = (off_y + n_rows as i64).min(src.rows as i64);
    let c_lo = off_x.max(0);
    let c_hi = (off_x + n_cols as i64).min(src.cols as i64);
    if r_lo >= r_hi || c_lo >= c_hi {
        return buf;
    }
    let w = (c_hi - c_lo) as usize;
    for sr in r_lo..r_hi {
        let dst = (sr - off_y) as usize * n_cols + (c_lo - off_x) as usize;
        let s = sr as usize * src.cols + c_lo as usize;
        buf[dst..dst + w].copy_from_slice(&src.data[s..s + w]);
    }
    buf
}

/// Query side of repeated correlations: keeps the centered query and its
/// spectra per FFT size so that scanning many references reuses them.
pub struct Correlator {
    query: Centered,
    spectra: Mutex<HashMap<(usize, usize), Arc<Vec<C64>>>>,
}

impl Correlator {
    pub fn new(query: &Plane) -> Result<Self> {
        Ok(Self {
            query: Centered::new(query)?,
            spectra: Mutex::new(HashMap::new()),
        })
    }

    pub fn query_dims(&self) -> (usize, usize) {
        self.query.dims()
    }

    fn query_spectrum(&self, n: (usize, usize)) -> Arc<Vec<C64>> {
        if let Some(s) = self.spectra.lock().expect("spectrum cache poisoned").get(&n) {
            return s.clone();
        }
        let buf = embed(&self.query, n.0, n.1, 0, 0);
        let spec = Arc::new(Fft2::plan(n.0, n.1).forward(&buf));
        self.spectra
            .lock()
            .expect("spectrum cache poisoned")
            .entry(n)
            .or_insert(spec)
            .clone()
    }

    /// rho for every shift of `extent` against a centered reference.
    pub fn surface_over(&self, reference: &Centered, extent: &ShiftWindow) -> Plane {
        assert!(!extent.is_empty());
        let n = fft_dims(self.query.dims(), extent);
        let plan = Fft2::plan(n.0, n.1);
        let fx = self.query_spectrum(n);
        let ybuf = embed(reference, n.0, n.1, extent.x[0], extent.y[0]);
        let mut fy = plan.forward(&ybuf);
        for (a, b) in fy.iter_mut().zip(fx.iter()) {
            *a *= b.conj();
        }
        let c = plan.inverse(fy);
        let scale = 1.0 / (self.query.norm * reference.norm);
        let (h, w) = (extent.height(), extent.width());
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            data.extend(c[i * n.1..i * n.1 + w].iter().map(|v| v * scale));
        }
        Plane::from_vec(h, w, data)
    }

    /// Surface over `region` plus the configured energy margin, clipped to
    /// overlapping shifts.
    pub fn surface(
        &self,
        reference: &Centered,
        region: &ShiftWindow,
        energy_margin: usize,
    ) -> CorrelationSurface {
        let overlap = ShiftWindow::overlapping(self.query.dims(), reference.dims());
        let region = region.intersect(&overlap);
        let extent = region.expanded(energy_margin).intersect(&overlap);
        CorrelationSurface {
            values: self.surface_over(reference, &extent),
            extent,
            region,
        }
    }
}

/// NCC surface of query `x` against reference `y` over exactly `region`.
pub fn ncc_surface(x: &Plane, y: &Plane, region: &ShiftRegion) -> Result<CorrelationSurface> {
    let cx = Correlator::new(x)?;
    let cy = Centered::new(y)?;
    let w = region.resolve(x.dims(), y.dims())?;
    Ok(cx.surface(&cy, &w, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PceResult {
    /// `+inf` when the off-peak energy is zero or empty.
    pub pce: f64,
    pub peak_shift: Shift,
    pub peak_rho: f64,
    pub neighborhood_excluded: usize,
    pub energy_cells: usize,
    pub infinite: bool,
}

/// PCE of `surface`: the peak is the largest rho inside the search region
/// (ties go to the smallest shift), the energy the mean over every surface
/// cell outside the `nbhd x nbhd` square around it.
pub fn pce(surface: &CorrelationSurface, cfg: &CorrelationConfig) -> Result<PceResult> {
    cfg.validate()?;
    let ext = surface.extent;
    let region = surface.region.intersect(&ext);
    if region.is_empty() {
        return Err(HsiError::invalid("correlation surface has an empty search region"));
    }
    let mut best = (f64::NEG_INFINITY, Shift::ZERO);
    for y in region.y[0]..=region.y[1] {
        for x in region.x[0]..=region.x[1] {
            let s = Shift::new(x, y);
            let v = surface.values.get((y - ext.y[0]) as usize, (x - ext.x[0]) as usize);
            if v > best.0 || (v == best.0 && s < best.1) {
                best = (v, s);
            }
        }
    }
    Ok(pce_at(surface, best.1, cfg))
}

/// PCE with the peak forced at shift `peak` (which must lie in the extent).
pub fn pce_at(surface: &CorrelationSurface, peak: Shift, cfg: &CorrelationConfig) -> PceResult {
    let ext = surface.extent;
    assert!(ext.contains(peak), "peak {peak:?} outside surface");
    let half = (cfg.nbhd / 2) as i64;
    let nb = ShiftWindow::new(peak.x - half, peak.x + half, peak.y - half, peak.y + half).intersect(&ext);
    let squared = cfg.pce_form == PceForm::Squared;
    let mut off = Vec::with_capacity(ext.len().saturating_sub(nb.len()));
    for (i, row) in surface.values.data().chunks(ext.width()).enumerate() {
        let y = ext.y[0] + i as i64;
        for (j, &v) in row.iter().enumerate() {
            if !nb.contains(Shift::new(ext.x[0] + j as i64, y)) {
                off.push(if squared { v * v } else { v });
            }
        }
    }
    let peak_rho = surface.at(peak).expect("peak inside extent");
    let energy = exact_mean(&off);
    let num = if squared { peak_rho * peak_rho } else { peak_rho };
    let (pce, infinite) = if off.is_empty() || energy == 0.0 {
        (f64::INFINITY, true)
    } else {
        (num / energy, false)
    };
    PceResult {
        pce,
        peak_shift: peak,
        peak_rho,
        neighborhood_excluded: nb.len(),
        energy_cells: off.len(),
        infinite,
    }
}
