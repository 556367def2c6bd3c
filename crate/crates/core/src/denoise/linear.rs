//! Small trainable convolutional denoiser.
//!
//! One `C x C x k x k` kernel plus bias per time bin, applied with zero
//! same-padding. Trained by plain SGD on the squared prediction error of
//! noisy reference crops; gradients are derived analytically (the kernel
//! gradient is the cross-correlation of the output residual with the padded
//! input) and checked against finite differences in the test suites.

use crate::canvas::{extract_crop, CropWindow, ImageGrid};
use crate::denoise::Denoiser;
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::schedule::{forward_diffuse, NoiseSchedule};

/// Hyper-parameters of the SGD loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Samples averaged per parameter update.
    pub batch: usize,
    /// Loss weight applied at every step (kept constant).
    pub loss_weight: f64,
    /// Side length of the training crops.
    pub crop_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 0.02,
            batch: 1,
            loss_weight: 1.0,
            crop_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(invalid("iterations must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.batch < 1 {
            return Err(invalid("batch must be at least 1"));
        }
        if self.crop_size < 1 {
            return Err(invalid("training crop size must be at least 1"));
        }
        Ok(())
    }
}

/// Per-bin convolution weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConvDenoiser {
    kernel_size: usize,
    time_bins: usize,
    channels: usize,
    /// `time_bins * channels * channels * kernel_size^2` values, indexed
    /// `[bin][c_out][c_in][ky][kx]`.
    weights: Vec<f64>,
    /// `time_bins * channels` values, indexed `[bin][c_out]`.
    bias: Vec<f64>,
}

/// Gradients for one time bin, same layout as the bin's parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearConvDenoiser {
    /// All-zero parameters.
    pub fn zeros(kernel_size: usize, time_bins: usize, channels: usize) -> Result<Self> {
        if kernel_size % 2 == 0 || kernel_size == 0 {
            return Err(invalid(format!("kernel size {kernel_size} must be odd")));
        }
        if time_bins < 1 {
            return Err(invalid("at least one time bin required"));
        }
        let per_bin = channels * channels * kernel_size * kernel_size;
        Ok(Self {
            kernel_size,
            time_bins,
            channels,
            weights: vec![0.0; time_bins * per_bin],
            bias: vec![0.0; time_bins * channels],
        })
    }

    /// Identity convolution: centre tap 1 on matching channels, zero bias.
    pub fn identity(kernel_size: usize, time_bins: usize, channels: usize) -> Result<Self> {
        let mut model = Self::zeros(kernel_size, time_bins, channels)?;
        let centre = kernel_size / 2;
        for bin in 0..time_bins {
            for ch in 0..channels {
                let i = model.weight_index(bin, ch, ch, centre, centre);
                model.weights[i] = 1.0;
            }
        }
        Ok(model)
    }

    pub fn from_parts(
        kernel_size: usize,
        time_bins: usize,
        channels: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let mut model = Self::zeros(kernel_size, time_bins, channels)?;
        if weights.len() != model.weights.len() || bias.len() != model.bias.len() {
            return Err(invalid("parameter lengths do not match model dimensions"));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        model.weights = weights;
        model.bias = bias;
        Ok(model)
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn time_bins(&self) -> usize {
        self.time_bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    fn weight_index(&self, bin: usize, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        (((bin * self.channels + co) * self.channels + ci) * self.kernel_size + ky)
            * self.kernel_size
            + kx
    }

    /// Nearest time bin for schedule step `k`: bins partition `t` in `[0, 1]`
    /// uniformly, so the lookup is schedule-length independent.
    pub fn bin_for(&self, k: usize, sched: &NoiseSchedule) -> usize {
        let t = sched.t(k);
        ((t * self.time_bins as f64) as usize).min(self.time_bins - 1)
    }

    /// Same-padding convolution plus bias with the parameters of `bin`.
    pub fn apply_bin(&self, bin: usize, z: &ImageGrid) -> ImageGrid {
        let (h, w, c) = z.shape();
        assert_eq!(c, self.channels, "channel mismatch");
        let ks = self.kernel_size;
        let half = (ks / 2) as isize;
        let mut out = vec![0.0; h * w * c];
        for r in 0..h {
            for col in 0..w {
                for co in 0..c {
                    let mut acc = self.bias[bin * c + co];
                    for ky in 0..ks {
                        let sr = r as isize + ky as isize - half;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        for kx in 0..ks {
                            let sc = col as isize + kx as isize - half;
                            if sc < 0 || sc >= w as isize {
                                continue;
                            }
                            for ci in 0..c {
                                acc += self.weights[self.weight_index(bin, co, ci, ky, kx)]
                                    * z.get(sr as usize, sc as usize, ci);
                            }
                        }
                    }
                    out[(r * w + col) * c + co] = acc;
                }
            }
        }
        ImageGrid::from_vec(h, w, c, out).expect("shape is consistent by construction")
    }

    /// Prediction for a crop at schedule step `k`.
    pub fn apply(&self, z: &ImageGrid, k: usize, sched: &NoiseSchedule) -> ImageGrid {
        self.apply_bin(self.bin_for(k, sched), z)
    }

    /// Weighted mean-squared prediction error for one bin together with the
    /// analytic parameter gradients.
    ///
    /// Loss is `weight * mean((conv(z) + b - target)^2)`; the kernel gradient
    /// is the cross-correlation of the scaled residual with the zero-padded
    /// input, the bias gradient its channel sum.
    pub fn loss_and_grads(
        &self,
        bin: usize,
        z: &ImageGrid,
        target: &ImageGrid,
        weight: f64,
    ) -> Result<(f64, ConvGrads)> {
        if z.shape() != target.shape() {
            return Err(invalid("input and target shapes differ"));
        }
        let (h, w, c) = z.shape();
        if c != self.channels {
            return Err(invalid("channel mismatch"));
        }
        let pred = self.apply_bin(bin, z);
        let n = (h * w * c) as f64;
        let ks = self.kernel_size;
        let half = (ks / 2) as isize;
        let mut loss = 0.0;
        let mut residual = vec![0.0; h * w * c];
        for (i, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
            let r = p - t;
            loss += r * r;
            residual[i] = 2.0 * weight * r / n;
        }
        loss = weight * loss / n;

        let per_bin = c * c * ks * ks;
        let mut gw = vec![0.0; per_bin];
        let mut gb = vec![0.0; c];
        for r in 0..h {
            for col in 0..w {
                for co in 0..c {
                    let g = residual[(r * w + col) * c + co];
                    if g == 0.0 {
                        continue;
                    }
                    gb[co] += g;
                    for ky in 0..ks {
                        let sr = r as isize + ky as isize - half;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        for kx in 0..ks {
                            let sc = col as isize + kx as isize - half;
                            if sc < 0 || sc >= w as isize {
                                continue;
                            }
                            for ci in 0..c {
                                gw[((co * c + ci) * ks + ky) * ks + kx] +=
                                    g * z.get(sr as usize, sc as usize, ci);
                            }
                        }
                    }
                }
            }
        }
        Ok((loss, ConvGrads { weights: gw, bias: gb }))
    }

    fn sgd_update(&mut self, bin: usize, grads: &ConvGrads, lr: f64) {
        let per_bin = self.channels * self.channels * self.kernel_size * self.kernel_size;
        let wslice = &mut self.weights[bin * per_bin..(bin + 1) * per_bin];
        for (wv, g) in wslice.iter_mut().zip(&grads.weights) {
            *wv -= lr * g;
        }
        let bslice = &mut self.bias[bin * self.channels..(bin + 1) * self.channels];
        for (bv, g) in bslice.iter_mut().zip(&grads.bias) {
            *bv -= lr * g;
        }
    }
}

impl Denoiser for LinearConvDenoiser {
    fn denoise(&self, z_crop: &ImageGrid, k: usize, sched: &NoiseSchedule) -> Result<ImageGrid> {
        Ok(self.apply(z_crop, k, sched))
    }

    fn receptive_field(&self) -> usize {
        (self.kernel_size - 1) / 2
    }
}

/// Train a fresh model on random noisy crops of the reference.
///
/// Each iteration draws `batch` samples (crop offset, uniform schedule step,
/// Gaussian noise), forms `z = alpha x + sigma eps`, and applies one SGD step
/// to the bin owning that schedule step. Draw order per sample is fixed:
/// row offset, column offset, step, then the noise field.
pub fn train_linear_denoiser(
    reference: &ImageGrid,
    cfg: &TrainConfig,
    kernel_size: usize,
    time_bins: usize,
    sched: &NoiseSchedule,
    stream: &mut RngStream,
) -> Result<LinearConvDenoiser> {
    cfg.validate()?;
    let (h, w, c) = reference.shape();
    let cs = cfg.crop_size;
    if cs > h.min(w) {
        return Err(invalid(format!(
            "training crop size {cs} exceeds reference {h}x{w}"
        )));
    }
    let mut model = LinearConvDenoiser::zeros(kernel_size, time_bins, c)?;
    let row_span = (h - cs + 1) as u64;
    let col_span = (w - cs + 1) as u64;
    for iter in 0..cfg.iterations {
        // Accumulate batch gradients per bin (batch 1 touches one bin).
        let mut bin_grads: Vec<Option<ConvGrads>> = vec![None; time_bins];
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch {
            let row = stream.next_below(row_span) as usize;
            let col = stream.next_below(col_span) as usize;
            let k = stream.next_below(sched.len() as u64) as usize;
            let x = extract_crop(reference, &CropWindow::new(row, col, cs))?;
            let eps_data = stream.gaussian(cs * cs * c);
            let eps = ImageGrid::from_vec(cs, cs, c, eps_data)?;
            let z = forward_diffuse(&x, k, &eps, sched)?;
            let bin = model.bin_for(k, sched);
            let (loss, grads) = model.loss_and_grads(bin, &z, &x, cfg.loss_weight)?;
            batch_loss += loss;
            match &mut bin_grads[bin] {
                Some(acc) => {
                    for (a, g) in acc.weights.iter_mut().zip(&grads.weights) {
                        *a += g;
                    }
                    for (a, g) in acc.bias.iter_mut().zip(&grads.bias) {
                        *a += g;
                    }
                }
                slot => *slot = Some(grads),
            }
        }
        batch_loss /= cfg.batch as f64;
        if !batch_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss diverged at iteration {iter}: {batch_loss}"
            )));
        }
        let scale = cfg.learning_rate / cfg.batch as f64;
        for (bin, grads) in bin_grads.iter().enumerate() {
            if let Some(g) = grads {
                model.sgd_update(bin, g, scale);
            }
        }
    }
    Ok(model)
}
