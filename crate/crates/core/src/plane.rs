//! Single-channel floating-point rasters.
//!
//! A [`Plane`] holds images, noise residuals, fingerprints and correlation
//! surfaces alike. Values are stored row-major as `f64` and are always finite.

use serde::{Deserialize, Serialize};

use crate::error::{HsiError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Plane {
    /// Builds a plane from row-major data, checking length and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(HsiError::invalid(format!(
                "plane dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(HsiError::invalid(format!(
                "plane data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(HsiError::invalid(format!(
                "non-finite value at row {}, col {}",
                i / cols,
                i % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for data produced by arithmetic on finite planes.
    pub(crate) fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "plane dimensions must be positive");
        assert!(value.is_finite());
        Self::from_vec(rows, cols, vec![value; rows * cols])
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "plane dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = f(r, c);
                assert!(v.is_finite(), "from_fn produced a non-finite value");
                data.push(v);
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `(rows, cols)`
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.cols + col] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_dims(&self, other: &Plane) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn check_same_dims(&self, other: &Plane, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(HsiError::invalid(format!(
                "{what}: dimension mismatch {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()));
        Plane::from_vec(self.rows, self.cols, data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Sum of squared values.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn sub(&self, other: &Plane) -> Result<Plane> {
        self.check_same_dims(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Plane::from_vec(self.rows, self.cols, data))
    }

    pub fn add(&self, other: &Plane) -> Result<Plane> {
        self.check_same_dims(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Plane::from_vec(self.rows, self.cols, data))
    }

    pub fn scaled(&self, k: f64) -> Plane {
        self.map(|v| v * k)
    }

    /// Copies the rectangle starting at `(row0, col0)` of size `rows x cols`.
    /// The rectangle must lie inside the plane.
    pub fn sub_plane(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Result<Plane> {
        if rows == 0 || cols == 0 || row0 + rows > self.rows || col0 + cols > self.cols {
            return Err(HsiError::invalid(format!(
                "sub-plane {rows}x{cols} at ({row0},{col0}) outside {}x{}",
                self.rows, self.cols
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in row0..row0 + rows {
            data.extend_from_slice(&self.data[r * self.cols + col0..r * self.cols + col0 + cols]);
        }
        Ok(Plane::from_vec(rows, cols, data))
    }
}

/// Pearson correlation coefficient of two equally sized planes.
/// Returns 0 when either plane is constant.
pub fn pearson(a: &Plane, b: &Plane) -> Result<f64> {
    a.check_same_dims(b, "pearson")?;
    let ma = a.mean();
    let mb = b.mean();
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Pearson correlation restricted to pixels where `mask` is nonzero.
pub fn pearson_masked(a: &Plane, b: &Plane, mask: &Plane) -> Result<f64> {
    a.check_same_dims(b, "pearson_masked")?;
    a.check_same_dims(mask, "pearson_masked")?;
    let sel = || {
        a.data()
            .iter()
            .zip(b.data())
            .zip(mask.data())
            .filter(|(_, &m)| m != 0.0)
            .map(|((&x, &y), _)| (x, y))
    };
    let n = sel().count();
    if n == 0 {
        return Ok(0.0);
    }
    let (sa, sb) = sel().fold((0.0, 0.0), |(p, q), (x, y)| (p + x, q + y));
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in sel() {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Width/height pair as used in device tables and file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl Resolution {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    /// `(rows, cols)`
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length_and_non_finite() {
        assert!(Plane::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Plane::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Plane::new(0, 2, vec![]).is_err());
        assert!(Plane::new(1, 2, vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn sub_plane_copies_window() {
        let p = Plane::from_fn(4, 5, |r, c| (r * 10 + c) as f64);
        let s = p.sub_plane(1, 2, 2, 3).unwrap();
        assert_eq!(s.data(), &[12.0, 13.0, 14.0, 22.0, 23.0, 24.0]);
        assert!(p.sub_plane(3, 0, 2, 1).is_err());
    }

    #[test]
    fn pearson_of_self_is_one() {
        let p = Plane::from_fn(3, 3, |r, c| (r * 3 + c) as f64);
        assert!((pearson(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pearson(&p, &Plane::filled(3, 3, 2.0)).unwrap(), 0.0);
    }
}
