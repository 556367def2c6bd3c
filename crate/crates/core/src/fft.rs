//! Thin 2D FFT layer over rustfft: row transforms, then column transforms.
//!
//! Forward is unnormalized; the inverse divides by the element count, so
//! `inverse(forward(x)) == x` up to rounding.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Fft2d {
    height: usize,
    width: usize,
    fwd_row: Arc<dyn Fft<f64>>,
    fwd_col: Arc<dyn Fft<f64>>,
    inv_row: Arc<dyn Fft<f64>>,
    inv_col: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2d")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Fft2d {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            fwd_row: planner.plan_fft_forward(width),
            fwd_col: planner.plan_fft_forward(height),
            inv_row: planner.plan_fft_inverse(width),
            inv_col: planner.plan_fft_inverse(height),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn transform(&self, buf: &mut [Complex<f64>], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        let (h, w) = (self.height, self.width);
        assert_eq!(buf.len(), h * w);
        let mut scratch = vec![Complex::default(); row.get_inplace_scratch_len()];
        for r in 0..h {
            row.process_with_scratch(&mut buf[r * w..(r + 1) * w], &mut scratch);
        }
        let mut column = vec![Complex::default(); h];
        let mut scratch = vec![Complex::default(); col.get_inplace_scratch_len()];
        for c in 0..w {
            for r in 0..h {
                column[r] = buf[r * w + c];
            }
            col.process_with_scratch(&mut column, &mut scratch);
            for r in 0..h {
                buf[r * w + c] = column[r];
            }
        }
    }

    /// DFT of a real row-major field.
    pub fn forward_real(&self, real: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = real.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.fwd_row, &self.fwd_col);
        buf
    }

    /// In-place forward DFT of a complex field.
    pub fn forward(&self, buf: &mut [Complex<f64>]) {
        self.transform(buf, &self.fwd_row, &self.fwd_col);
    }

    /// Normalized inverse DFT, returning the real part.
    pub fn inverse_real(&self, spectrum: &[Complex<f64>]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.transform(&mut buf, &self.inv_row, &self.inv_col);
        let norm = 1.0 / (self.height * self.width) as f64;
        buf.iter().map(|v| v.re * norm).collect()
    }
}
