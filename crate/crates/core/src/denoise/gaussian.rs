//! Stationary Gaussian field model: periodogram fit, spectral sampling, and
//! the exact per-frequency posterior mean under additive Gaussian noise.

use rustfft::num_complex::Complex;

use crate::canvas::ImageGrid;
use crate::denoise::Denoiser;
use crate::error::{invalid, Result};
use crate::fft::Fft2d;
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;

/// Lower bound applied to every spectral power value; keeps gains and log
/// spectra finite for degenerate (e.g. constant) references.
pub const SPECTRUM_FLOOR: f64 = 1e-12;

/// Per-channel mean plus per-frequency power of a periodic stationary field.
#[derive(Debug, Clone)]
pub struct GaussianFieldModel {
    height: usize,
    width: usize,
    channels: usize,
    mean: Vec<f64>,
    /// `channels` planes of `height * width` non-negative power values.
    spectrum: Vec<Vec<f64>>,
    fft: Fft2d,
}

/// Fit a Gaussian field model to a reference image: channel means plus the
/// periodogram of the mean-removed reference (squared DFT magnitude over
/// pixel count), floored at [`SPECTRUM_FLOOR`].
pub fn fit_gaussian_field(reference: &ImageGrid) -> Result<GaussianFieldModel> {
    let (h, w, c) = reference.shape();
    if h < 16 || w < 16 {
        return Err(invalid(format!("reference {h}x{w} too small, need at least 16x16")));
    }
    let fft = Fft2d::new(h, w);
    let mean = reference.channel_means();
    let n = (h * w) as f64;
    let mut spectrum = Vec::with_capacity(c);
    for ch in 0..c {
        let centered: Vec<f64> = (0..h * w)
            .map(|i| reference.data()[i * c + ch] - mean[ch])
            .collect();
        let spec = fft.forward_real(&centered);
        spectrum.push(spec.iter().map(|v| (v.norm_sqr() / n).max(SPECTRUM_FLOOR)).collect());
    }
    Ok(GaussianFieldModel { height: h, width: w, channels: c, mean, spectrum, fft })
}

impl GaussianFieldModel {
    /// Build a model directly from per-channel means and spectrum planes.
    pub fn from_parts(
        height: usize,
        width: usize,
        mean: Vec<f64>,
        spectrum: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if mean.len() != spectrum.len() || mean.is_empty() {
            return Err(invalid("mean/spectrum channel counts differ or are empty"));
        }
        for plane in &spectrum {
            if plane.len() != height * width {
                return Err(invalid("spectrum plane size does not match dimensions"));
            }
            if plane.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
                return Err(invalid("spectrum values must be finite and non-negative"));
            }
        }
        let channels = mean.len();
        let spectrum = spectrum
            .into_iter()
            .map(|plane| plane.into_iter().map(|s| s.max(SPECTRUM_FLOOR)).collect())
            .collect();
        Ok(Self { height, width, channels, mean, spectrum, fft: Fft2d::new(height, width) })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn spectrum(&self, channel: usize) -> &[f64] {
        &self.spectrum[channel]
    }

    /// Posterior mean of the clean crop given `z = alpha x + sigma eps`,
    /// computed per frequency: the Wiener gain `alpha S / (alpha^2 S + sigma^2)`
    /// applied to the mean-removed observation.
    pub fn denoise_crop(&self, z_crop: &ImageGrid, k: usize, sched: &NoiseSchedule) -> Result<ImageGrid> {
        let (h, w, c) = z_crop.shape();
        if h != self.height || w != self.width || c != self.channels {
            return Err(invalid(format!(
                "crop {h}x{w}x{c} does not match model {}x{}x{}",
                self.height, self.width, self.channels
            )));
        }
        let step = sched.step(k);
        let (alpha, sigma) = (step.alpha, step.sigma);
        let n = (h * w) as f64;
        let mut out = vec![0.0; h * w * c];
        for ch in 0..c {
            let plane: Vec<f64> = (0..h * w).map(|i| z_crop.data()[i * c + ch]).collect();
            let mut spec = self.fft.forward_real(&plane);
            let s_plane = &self.spectrum[ch];
            // DFT of the constant prior-mean field: mean * N at DC, 0 elsewhere.
            let dc_mean = self.mean[ch] * n;
            for (f, v) in spec.iter_mut().enumerate() {
                let s = s_plane[f];
                let gain = alpha * s / (alpha * alpha * s + sigma * sigma);
                let m = if f == 0 { Complex::new(dc_mean, 0.0) } else { Complex::default() };
                *v = m + (*v - m * alpha) * gain;
            }
            let pixels = self.fft.inverse_real(&spec);
            for (i, p) in pixels.iter().enumerate() {
                out[i * c + ch] = *p;
            }
        }
        ImageGrid::from_vec(h, w, c, out)
    }

    /// Draw one field realization: white noise shaped by `sqrt(S)` in the
    /// Fourier domain, plus the channel mean.
    pub fn sample(&self, stream: &mut RngStream) -> ImageGrid {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; h * w * c];
        for ch in 0..c {
            let white = stream.gaussian(h * w);
            let mut spec = self.fft.forward_real(&white);
            for (v, &s) in spec.iter_mut().zip(&self.spectrum[ch]) {
                *v *= s.sqrt();
            }
            let pixels = self.fft.inverse_real(&spec);
            for (i, p) in pixels.iter().enumerate() {
                out[i * c + ch] = p + self.mean[ch];
            }
        }
        ImageGrid::from_vec(h, w, c, out).expect("shape is consistent by construction")
    }

    /// Resample the spectrum onto a different grid size by bilinear
    /// interpolation in normalized frequency (torus), preserving the channel
    /// means. Used when the synthesis crop size differs from the fit size.
    pub fn resampled(&self, height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(invalid("resampled size too small"));
        }
        let mut spectrum = Vec::with_capacity(self.channels);
        for ch in 0..self.channels {
            let src = &self.spectrum[ch];
            let mut plane = vec![0.0; height * width];
            for r in 0..height {
                // Signed normalized frequency in [-0.5, 0.5).
                let fr = signed_freq(r, height);
                for cidx in 0..width {
                    let fc = signed_freq(cidx, width);
                    plane[r * width + cidx] =
                        bilinear_torus(src, self.height, self.width, fr * self.height as f64, fc * self.width as f64);
                }
            }
            // Re-symmetrize so sampling and denoising stay real-valued.
            let mut sym = plane.clone();
            for r in 0..height {
                for cidx in 0..width {
                    let mr = (height - r) % height;
                    let mc = (width - cidx) % width;
                    sym[r * width + cidx] =
                        0.5 * (plane[r * width + cidx] + plane[mr * width + mc]);
                }
            }
            spectrum.push(sym);
        }
        Self::from_parts(height, width, self.mean.clone(), spectrum)
    }
}

/// Signed frequency of DFT bin `i` on an `n`-point axis, in cycles/sample.
fn signed_freq(i: usize, n: usize) -> f64 {
    let i = i as f64;
    let n = n as f64;
    if i <= n / 2.0 { i / n } else { (i - n) / n }
}

/// Bilinear interpolation of a row-major plane at fractional (row, col)
/// coordinates, wrapping around both axes.
fn bilinear_torus(plane: &[f64], h: usize, w: usize, row: f64, col: f64) -> f64 {
    let wrap = |x: f64, n: usize| -> f64 {
        let n = n as f64;
        let mut v = x % n;
        if v < 0.0 {
            v += n;
        }
        v
    };
    let r = wrap(row, h);
    let c = wrap(col, w);
    let r0 = r.floor() as usize % h;
    let c0 = c.floor() as usize % w;
    let r1 = (r0 + 1) % h;
    let c1 = (c0 + 1) % w;
    let dr = r - r.floor();
    let dc = c - c.floor();
    let v00 = plane[r0 * w + c0];
    let v01 = plane[r0 * w + c1];
    let v10 = plane[r1 * w + c0];
    let v11 = plane[r1 * w + c1];
    v00 * (1.0 - dr) * (1.0 - dc) + v01 * (1.0 - dr) * dc + v10 * dr * (1.0 - dc) + v11 * dr * dc
}

impl Denoiser for GaussianFieldModel {
    fn denoise(&self, z_crop: &ImageGrid, k: usize, sched: &NoiseSchedule) -> Result<ImageGrid> {
        self.denoise_crop(z_crop, k, sched)
    }

    fn receptive_field(&self) -> usize {
        // Spectral conditioning couples every pixel of the crop.
        self.height.max(self.width)
    }
}
