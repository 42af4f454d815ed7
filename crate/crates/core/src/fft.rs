//! 2-D real FFT built from `realfft` row transforms and `rustfft` column
//! transforms.
//!
//! Spectra are kept column-major (`half_cols` rows of length `rows`), which
//! saves a transpose on each side; only elementwise products are ever taken
//! between spectra so the layout never leaks.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

pub(crate) type C64 = Complex<f64>;

pub(crate) struct Fft2 {
    rows: usize,
    cols: usize,
    half: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

type PlanCache = Mutex<HashMap<(usize, usize), Arc<Fft2>>>;

fn cache() -> &'static PlanCache {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl Fft2 {
    /// Shared plan for a `rows x cols` real transform.
    pub(crate) fn plan(rows: usize, cols: usize) -> Arc<Fft2> {
        let mut map = cache().lock().expect("fft plan cache poisoned");
        map.entry((rows, cols))
            .or_insert_with(|| {
                let mut rp = RealFftPlanner::<f64>::new();
                let mut cp = FftPlanner::<f64>::new();
                Arc::new(Fft2 {
                    rows,
                    cols,
                    half: cols / 2 + 1,
                    r2c: rp.plan_fft_forward(cols),
                    c2r: rp.plan_fft_inverse(cols),
                    col_fwd: cp.plan_fft_forward(rows),
                    col_inv: cp.plan_fft_inverse(rows),
                })
            })
            .clone()
    }

    /// Number of complex spectrum cells.
    pub(crate) fn spectrum_len(&self) -> usize {
        self.rows * self.half
    }

    /// Forward transform of a row-major `rows x cols` real buffer.
    pub(crate) fn forward(&self, input: &[f64]) -> Vec<C64> {
        assert_eq!(input.len(), self.rows * self.cols);
        let mut row_in = self.r2c.make_input_vec();
        let mut row_out = self.r2c.make_output_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        // transposed: spec[k * rows + r]
        let mut spec = vec![C64::new(0.0, 0.0); self.spectrum_len()];
        for r in 0..self.rows {
            row_in.copy_from_slice(&input[r * self.cols..(r + 1) * self.cols]);
            self.r2c
                .process_with_scratch(&mut row_in, &mut row_out, &mut scratch)
                .expect("r2c buffer sizes");
            for (k, &v) in row_out.iter().enumerate() {
                spec[k * self.rows + r] = v;
            }
        }
        self.col_fwd.process(&mut spec);
        spec
    }

    /// Inverse transform, normalized so that `inverse(forward(x)) == x`.
    pub(crate) fn inverse(&self, mut spec: Vec<C64>) -> Vec<f64> {
        assert_eq!(spec.len(), self.spectrum_len());
        self.col_inv.process(&mut spec);
        let norm = 1.0 / (self.rows * self.cols) as f64;
        let mut row_in = self.c2r.make_input_vec();
        let mut row_out = self.c2r.make_output_vec();
        let mut scratch = self.c2r.make_scratch_vec();
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for (k, slot) in row_in.iter_mut().enumerate() {
                *slot = spec[k * self.rows + r];
            }
            // Imaginary parts of DC (and Nyquist) must be zero for a real
            // output; round-off leaves tiny values there.
            row_in[0].im = 0.0;
            if self.cols % 2 == 0 {
                row_in[self.half - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(&mut row_in, &mut row_out, &mut scratch)
                .expect("c2r buffer sizes");
            for (dst, &v) in out[r * self.cols..(r + 1) * self.cols]
                .iter_mut()
                .zip(&row_out)
            {
                *dst = v * norm;
            }
        }
        out
    }
}

/// Smallest `n >= min` whose only prime factors are 2, 3 and 5, and which is even.
pub(crate) fn fast_len(min: usize) -> usize {
    let mut n = min.max(2);
    loop {
        if n % 2 == 0 {
            let mut m = n;
            for p in [2, 3, 5] {
                while m % p == 0 {
                    m /= p;
                }
            }
            if m == 1 {
                return n;
            }
        }
        n += 1;
    }
}
