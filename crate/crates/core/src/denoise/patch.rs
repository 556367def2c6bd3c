//! Empirical-Bayes patch denoiser.
//!
//! The per-texture model is the empirical distribution over all strided
//! patches of the reference image. Under `z = alpha x + sigma eps` with `x`
//! drawn from that distribution, the posterior mean is a softmax-weighted
//! combination of bank patches; sub-window predictions are merged with the
//! same aggregation operator the sampler uses at canvas scale.

use rayon::prelude::*;

use crate::canvas::{Aggregator, CropWindow, ImageGrid};
use crate::denoise::Denoiser;
use crate::error::{invalid, Result};
use crate::schedule::NoiseSchedule;

/// Flattened reference patches with cached squared norms.
#[derive(Debug, Clone)]
pub struct PatchBank {
    patch_size: usize,
    stride: usize,
    channels: usize,
    /// `n` rows of `patch_size^2 * channels` values.
    patches: Vec<f64>,
    norms: Vec<f64>,
}

/// Extract every strided `p x p` patch of the reference into a bank.
pub fn build_patch_bank(reference: &ImageGrid, p: usize, stride: usize) -> Result<PatchBank> {
    let (h, w, c) = reference.shape();
    if p == 0 || p > h.min(w) {
        return Err(invalid(format!("patch size {p} invalid for {h}x{w} reference")));
    }
    if stride == 0 {
        return Err(invalid("patch stride must be at least 1"));
    }
    let dim = p * p * c;
    let rows = (h - p) / stride + 1;
    let cols = (w - p) / stride + 1;
    let mut patches = Vec::with_capacity(rows * cols * dim);
    let mut norms = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let (r0, c0) = (pr * stride, pc * stride);
            let start = patches.len();
            for r in r0..r0 + p {
                let base = reference.idx(r, c0, 0);
                patches.extend_from_slice(&reference.data()[base..base + p * c]);
            }
            norms.push(patches[start..].iter().map(|v| v * v).sum());
        }
    }
    Ok(PatchBank { patch_size: p, stride, channels: c, patches, norms })
}

impl PatchBank {
    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Flattened patch dimensionality, `patch_size^2 * channels`.
    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.patches[i * d..(i + 1) * d]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Elementwise mean of all bank patches.
    pub fn mean_patch(&self) -> Vec<f64> {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for i in 0..self.len() {
            for (m, v) in mean.iter_mut().zip(self.patch(i)) {
                *m += v;
            }
        }
        let inv = 1.0 / self.len() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        mean
    }

    /// Construct from raw parts (used by model file loading).
    pub fn from_parts(
        patch_size: usize,
        stride: usize,
        channels: usize,
        patches: Vec<f64>,
    ) -> Result<Self> {
        let dim = patch_size * patch_size * channels;
        if dim == 0 || patches.is_empty() || patches.len() % dim != 0 {
            return Err(invalid("patch data does not divide into whole patches"));
        }
        let norms = patches
            .chunks_exact(dim)
            .map(|p| p.iter().map(|v| v * v).sum())
            .collect();
        Ok(Self { patch_size, stride, channels, patches, norms })
    }

    /// Posterior-mean patch for one flattened noisy sub-window.
    ///
    /// Log-weights are `-||z_w - alpha x_i||^2 / (2 sigma^2)`; the softmax is
    /// evaluated with a max shift so extreme noise levels stay finite.
    fn posterior_patch(&self, z_w: &[f64], alpha: f64, sigma: f64) -> Vec<f64> {
        let d = self.dim();
        let z_norm: f64 = z_w.iter().map(|v| v * v).sum();
        let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
        let mut logw = Vec::with_capacity(self.len());
        let mut max_lw = f64::NEG_INFINITY;
        for i in 0..self.len() {
            let dot: f64 = z_w.iter().zip(self.patch(i)).map(|(a, b)| a * b).sum();
            let dist2 = z_norm - 2.0 * alpha * dot + alpha * alpha * self.norms[i];
            let lw = -dist2 * inv_two_sigma2;
            max_lw = max_lw.max(lw);
            logw.push(lw);
        }
        let mut acc = vec![0.0; d];
        let mut total = 0.0;
        for (i, lw) in logw.iter().enumerate() {
            let w = (lw - max_lw).exp();
            total += w;
            if w > 0.0 {
                for (a, v) in acc.iter_mut().zip(self.patch(i)) {
                    *a += w * v;
                }
            }
        }
        let inv = 1.0 / total;
        for a in &mut acc {
            *a *= inv;
        }
        acc
    }

    /// Denoise a crop: posterior-mean patches over all strided `p x p`
    /// sub-windows (boundary-clamped), merged by per-pixel averaging.
    ///
    /// At `sigma == 0` the observation is exact and is returned unchanged.
    pub fn denoise_with_stride(
        &self,
        z_crop: &ImageGrid,
        k: usize,
        sched: &NoiseSchedule,
        subwindow_stride: usize,
    ) -> Result<ImageGrid> {
        let (h, w, c) = z_crop.shape();
        let p = self.patch_size;
        if c != self.channels {
            return Err(invalid(format!(
                "crop has {c} channels, bank has {}",
                self.channels
            )));
        }
        if h < p || w < p {
            return Err(invalid(format!("crop {h}x{w} smaller than patch size {p}")));
        }
        if subwindow_stride == 0 || subwindow_stride > p {
            return Err(invalid(format!(
                "sub-window stride {subwindow_stride} must be in 1..={p} to keep the crop covered"
            )));
        }
        let step = sched.step(k);
        let (alpha, sigma) = (step.alpha, step.sigma);
        if sigma == 0.0 {
            return Ok(z_crop.clone());
        }
        let rows = strided_positions(h, p, subwindow_stride);
        let cols = strided_positions(w, p, subwindow_stride);
        let mut subwindows = Vec::with_capacity(rows.len() * cols.len());
        for &r in &rows {
            for &cc in &cols {
                subwindows.push(CropWindow::new(r, cc, p));
            }
        }
        let predictions: Vec<Vec<f64>> = subwindows
            .par_iter()
            .map(|win| {
                let mut z_w = Vec::with_capacity(self.dim());
                for r in win.row..win.row + p {
                    let base = z_crop.idx(r, win.col, 0);
                    z_w.extend_from_slice(&z_crop.data()[base..base + p * c]);
                }
                self.posterior_patch(&z_w, alpha, sigma)
            })
            .collect();
        let mut agg = Aggregator::new(h, w, c);
        for (win, pred) in subwindows.iter().zip(predictions) {
            let grid = ImageGrid::from_vec(p, p, c, pred)?;
            agg.add(win, &grid)?;
        }
        // Clamped sub-window positions cover every pixel, so the fallback is
        // never consulted.
        agg.finalize(z_crop)
    }
}

/// Positions `0, s, 2s, ...` with the final position clamped to `extent - size`.
fn strided_positions(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    let last = extent - size;
    let mut out = Vec::new();
    let mut r = 0;
    loop {
        out.push(r.min(last));
        if r >= last {
            break;
        }
        r += stride;
    }
    out
}

/// [`Denoiser`] wrapper binding a bank to a sub-window stride.
#[derive(Debug, Clone)]
pub struct PatchMmseDenoiser {
    pub bank: PatchBank,
    pub subwindow_stride: usize,
}

impl Denoiser for PatchMmseDenoiser {
    fn denoise(&self, z_crop: &ImageGrid, k: usize, sched: &NoiseSchedule) -> Result<ImageGrid> {
        self.bank.denoise_with_stride(z_crop, k, sched, self.subwindow_stride)
    }

    fn receptive_field(&self) -> usize {
        self.bank.patch_size()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use crate::schedule::{NoiseSchedule, ScheduleStep};

    fn random_grid(h: usize, w: usize, c: usize, seed: u64) -> ImageGrid {
        let mut s = derive_stream(seed, &[31]);
        ImageGrid::from_vec(h, w, c, s.gaussian(h * w * c)).unwrap()
    }

    /// Two-point schedule plus one interior step with the given noise ratio
    /// `sigma / alpha`.
    fn ratio_schedule(ratio: f64) -> NoiseSchedule {
        let alpha = 1.0 / (1.0 + ratio * ratio).sqrt();
        let sigma = ratio * alpha;
        NoiseSchedule::from_steps(vec![
            ScheduleStep { t: 1.0, alpha: 0.0, sigma: 1.0 },
            ScheduleStep { t: 0.5, alpha, sigma },
            ScheduleStep { t: 0.0, alpha: 1.0, sigma: 0.0 },
        ])
        .unwrap()
    }

    #[test]
    fn bank_counts() {
        let reference = random_grid(8, 8, 1, 1);
        let bank = build_patch_bank(&reference, 8, 1).unwrap();
        assert_eq!(bank.len(), 1);

        let reference = random_grid(16, 16, 1, 2);
        let bank = build_patch_bank(&reference, 8, 4).unwrap();
        assert_eq!(bank.len(), 9);
    }

    #[test]
    fn cached_norms_match_recomputation() {
        let reference = random_grid(12, 12, 3, 3);
        let bank = build_patch_bank(&reference, 4, 2).unwrap();
        for i in 0..bank.len() {
            let direct: f64 = bank.patch(i).iter().map(|v| v * v).sum();
            assert!((bank.norms()[i] - direct).abs() < 1e-6);
        }
    }

    #[test]
    fn oversized_patch_rejected() {
        let reference = random_grid(8, 8, 1, 4);
        assert!(build_patch_bank(&reference, 9, 1).is_err());
    }

    #[test]
    fn single_patch_bank_always_returns_it() {
        let reference = random_grid(4, 4, 1, 5);
        let bank = build_patch_bank(&reference, 4, 1).unwrap();
        assert_eq!(bank.len(), 1);
        for ratio in [0.3, 1.0, 8.0] {
            let sched = ratio_schedule(ratio);
            let z = random_grid(4, 4, 1, 6);
            let out = bank.denoise_with_stride(&z, 1, &sched, 1).unwrap();
            for (o, p) in out.data().iter().zip(bank.patch(0)) {
                assert!((o - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn huge_sigma_returns_mean_patch() {
        let reference = random_grid(10, 10, 1, 7);
        let bank = build_patch_bank(&reference, 4, 2).unwrap();
        let sched = ratio_schedule(1e4);
        let z = random_grid(4, 4, 1, 8);
        let out = bank.denoise_with_stride(&z, 1, &sched, 1).unwrap();
        let mean = bank.mean_patch();
        for (o, m) in out.data().iter().zip(&mean) {
            assert!((o - m).abs() <= 1e-3, "{o} vs {m}");
        }
    }

    #[test]
    fn tiny_sigma_snaps_to_matching_patch() {
        // Three well-separated patches; observe a scaled copy of one of them.
        let reference = random_grid(4, 12, 1, 9);
        let bank = build_patch_bank(&reference, 4, 4).unwrap();
        assert_eq!(bank.len(), 3);
        let sched = ratio_schedule(1e-3);
        let alpha = sched.alpha(1);
        let target = 1;
        let z_data: Vec<f64> = bank.patch(target).iter().map(|v| v * alpha).collect();
        let z = ImageGrid::from_vec(4, 4, 1, z_data).unwrap();
        let out = bank.denoise_with_stride(&z, 1, &sched, 1).unwrap();
        for (o, p) in out.data().iter().zip(bank.patch(target)) {
            assert!((o - p).abs() < 1e-4);
        }
    }

    #[test]
    fn sigma_zero_returns_observation() {
        let reference = random_grid(8, 8, 1, 10);
        let bank = build_patch_bank(&reference, 4, 2).unwrap();
        let sched = NoiseSchedule::cosine(5).unwrap();
        let z = random_grid(6, 6, 1, 11);
        let out = bank.denoise_with_stride(&z, 4, &sched, 2).unwrap();
        assert_eq!(out.data(), z.data());
    }

    #[test]
    fn output_finite_across_extreme_ratios() {
        let reference = random_grid(8, 8, 1, 12);
        let bank = build_patch_bank(&reference, 4, 2).unwrap();
        let z = random_grid(6, 6, 1, 13);
        for exp in [-6, -3, 0, 3, 6] {
            let sched = ratio_schedule(10f64.powi(exp));
            let out = bank.denoise_with_stride(&z, 1, &sched, 2).unwrap();
            assert!(out.is_finite(), "ratio 1e{exp}");
        }
    }

    #[test]
    fn translation_consistency_with_stride_one_windows() {
        // With stride-1 sub-windows the posterior for a window depends only
        // on its contents, so shifting the crop by one column and unshifting
        // the output leaves pixels whose window sets map one-to-one intact.
        let (h, w) = (12, 12);
        let period = 4;
        let data: Vec<f64> = (0..h * w)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                ((r % period) as f64 - 1.5) * 0.3 + ((c % period) as f64 - 1.5) * 0.2
            })
            .collect();
        let reference = ImageGrid::from_vec(h, w, 1, data).unwrap();
        let bank = build_patch_bank(&reference, 4, 1).unwrap();
        let sched = ratio_schedule(0.5);

        let z = random_grid(8, 8, 1, 14);
        let mut shifted = ImageGrid::zeros(8, 8, 1);
        for r in 0..8 {
            for c in 0..8 {
                shifted.set(r, (c + 1) % 8, 0, z.get(r, c, 0));
            }
        }
        let out = bank.denoise_with_stride(&z, 1, &sched, 1).unwrap();
        let out_shifted = bank.denoise_with_stride(&shifted, 1, &sched, 1).unwrap();
        // Column p - 1 = 3 is the column whose covering windows shift as a
        // block; its prediction must ride along with the shift.
        for r in 0..8 {
            let a = out.get(r, 3, 0);
            let b = out_shifted.get(r, 4, 0);
            assert!((a - b).abs() < 1e-5, "r={r}: {a} vs {b}");
        }
    }

    #[test]
    fn crop_smaller_than_patch_rejected() {
        let reference = random_grid(8, 8, 1, 15);
        let bank = build_patch_bank(&reference, 4, 2).unwrap();
        let sched = NoiseSchedule::cosine(5).unwrap();
        let z = random_grid(3, 3, 1, 16);
        assert!(bank.denoise_with_stride(&z, 1, &sched, 1).is_err());
    }
}
