//! Image canvas, crop windows, crop planning, and score aggregation.
//!
//! The aggregation operator is the heart of the tiled sampler: given per-crop
//! x-predictions it returns the canvas-wide least-squares reconciliation,
//! which for axis-aligned crop operators reduces to the per-pixel mean of all
//! predictions covering that pixel. Accumulation order is fixed (window list
//! order) so results are deterministic and independent of batching.

use crate::error::{invalid, Result};
use crate::rng::RngStream;

/// Dense row-major float image, `height x width x channels`, channel
/// interleaved. Synthesis canvases keep values centered at 0 (file I/O maps
/// `[-1, 1]` to integer pixel codes at the boundary of the system).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::constant(height, width, channels, 0.0)
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        assert!((1..=3).contains(&channels), "1-3 channels supported");
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&channels) {
            return Err(invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(invalid(format!(
                "grid data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.idx(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let i = self.idx(row, col, ch);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `a * self + b * other`, elementwise. Panics on shape mismatch; callers
    /// with untrusted shapes validate first.
    pub fn scale_add(&self, a: f64, other: &Self, b: f64) -> Self {
        assert_eq!(self.shape(), other.shape(), "scale_add shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Self { height: self.height, width: self.width, channels: self.channels, data }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Per-channel means.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let n = (self.height * self.width) as f64;
        sums.iter().map(|s| s / n).collect()
    }
}

/// Square window into a canvas, identified by its top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl CropWindow {
    pub fn new(row: usize, col: usize, size: usize) -> Self {
        Self { row, col, size }
    }

    /// Check that the window lies fully inside a `height x width` canvas.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.size == 0 || self.row + self.size > height || self.col + self.size > width {
            return Err(invalid(format!(
                "window ({}, {}, size {}) out of bounds for {height}x{width}",
                self.row, self.col, self.size
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.size && col >= self.col && col < self.col + self.size
    }
}

/// How crop windows are placed at each timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    /// Covering grid plus random windows (default; every pixel covered).
    Hybrid,
    /// Random windows only; uncovered pixels fall back to the caller value.
    Random,
    /// Deterministic covering grid only.
    Grid,
}

impl std::str::FromStr for CropMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(Self::Hybrid),
            "random" => Ok(Self::Random),
            "grid" => Ok(Self::Grid),
            other => Err(invalid(format!("unknown crop mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for CropMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Hybrid => "hybrid",
            Self::Random => "random",
            Self::Grid => "grid",
        })
    }
}

/// A set of crop windows for one timestep plus per-pixel coverage counts.
#[derive(Debug, Clone)]
pub struct CropPlan {
    pub windows: Vec<CropWindow>,
    coverage: Vec<u32>,
    height: usize,
    width: usize,
}

impl CropPlan {
    /// Build a plan from explicit windows (validates bounds).
    pub fn from_windows(height: usize, width: usize, windows: Vec<CropWindow>) -> Result<Self> {
        let mut coverage = vec![0u32; height * width];
        for w in &windows {
            w.validate(height, width)?;
            for r in w.row..w.row + w.size {
                let base = r * width;
                for c in w.col..w.col + w.size {
                    coverage[base + c] += 1;
                }
            }
        }
        Ok(Self { windows, coverage, height, width })
    }

    /// Per-pixel count of covering windows, row-major.
    pub fn coverage(&self) -> &[u32] {
        &self.coverage
    }

    pub fn min_coverage(&self) -> u32 {
        self.coverage.iter().copied().min().unwrap_or(0)
    }

    pub fn mean_coverage(&self) -> f64 {
        self.coverage.iter().map(|&c| c as f64).sum::<f64>() / (self.height * self.width) as f64
    }
}

/// Offsets of a covering grid along one axis: stride = window size, the last
/// position clamped to the boundary.
pub(crate) fn grid_positions(extent: usize, size: usize) -> Vec<usize> {
    let last = extent - size;
    let mut out = Vec::new();
    let mut r = 0;
    loop {
        out.push(r.min(last));
        if r >= last {
            break;
        }
        r += size;
    }
    out
}

/// Plan the crop windows for one timestep.
///
/// * `Grid`: covering grid, stride = `crop_size`, last row/column clamped.
/// * `Random`: `n_random` windows with offsets uniform over valid positions
///   (row drawn before column for each window).
/// * `Hybrid`: the covering grid first, then `n_random` random windows.
pub fn plan_crops(
    height: usize,
    width: usize,
    crop_size: usize,
    n_random: usize,
    mode: CropMode,
    stream: &mut RngStream,
) -> Result<CropPlan> {
    if crop_size == 0 || crop_size > height.min(width) {
        return Err(invalid(format!(
            "crop size {crop_size} invalid for {height}x{width} canvas"
        )));
    }
    let mut windows = Vec::new();
    if matches!(mode, CropMode::Grid | CropMode::Hybrid) {
        for r in grid_positions(height, crop_size) {
            for c in grid_positions(width, crop_size) {
                windows.push(CropWindow::new(r, c, crop_size));
            }
        }
    }
    if matches!(mode, CropMode::Random | CropMode::Hybrid) {
        let row_span = (height - crop_size + 1) as u64;
        let col_span = (width - crop_size + 1) as u64;
        for _ in 0..n_random {
            let r = stream.next_below(row_span) as usize;
            let c = stream.next_below(col_span) as usize;
            windows.push(CropWindow::new(r, c, crop_size));
        }
    }
    CropPlan::from_windows(height, width, windows)
}

/// Copy of the window contents, `size x size x C`.
pub fn extract_crop(x: &ImageGrid, w: &CropWindow) -> Result<ImageGrid> {
    w.validate(x.height(), x.width())?;
    let c = x.channels();
    let mut data = Vec::with_capacity(w.size * w.size * c);
    for r in w.row..w.row + w.size {
        let start = x.idx(r, w.col, 0);
        data.extend_from_slice(&x.data()[start..start + w.size * c]);
    }
    ImageGrid::from_vec(w.size, w.size, c, data)
}

/// Running per-pixel sum/count accumulator for score aggregation.
///
/// Lets the sampler merge predictions batch by batch without materializing
/// all crop predictions at once. Contributions must be committed in window
/// list order for deterministic output.
pub struct Aggregator {
    sum: Vec<f64>,
    count: Vec<u32>,
    height: usize,
    width: usize,
    channels: usize,
}

impl Aggregator {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            sum: vec![0.0; height * width * channels],
            count: vec![0; height * width],
            height,
            width,
            channels,
        }
    }

    /// Commit one crop prediction.
    pub fn add(&mut self, window: &CropWindow, prediction: &ImageGrid) -> Result<()> {
        window.validate(self.height, self.width)?;
        if prediction.shape() != (window.size, window.size, self.channels) {
            return Err(invalid(format!(
                "prediction shape {:?} does not match window size {} x {} channels",
                prediction.shape(),
                window.size,
                self.channels
            )));
        }
        let c = self.channels;
        for (pr, r) in (window.row..window.row + window.size).enumerate() {
            let dst = (r * self.width + window.col) * c;
            let src = pr * window.size * c;
            let row_sum = &mut self.sum[dst..dst + window.size * c];
            let row_pred = &prediction.data()[src..src + window.size * c];
            for (s, p) in row_sum.iter_mut().zip(row_pred) {
                *s += p;
            }
            let cnt = &mut self.count[r * self.width + window.col..][..window.size];
            for v in cnt {
                *v += 1;
            }
        }
        Ok(())
    }

    /// Per-pixel mean of committed predictions; uncovered pixels take the
    /// fallback grid's value.
    pub fn finalize(&self, fallback: &ImageGrid) -> Result<ImageGrid> {
        if fallback.shape() != (self.height, self.width, self.channels) {
            return Err(invalid("fallback shape does not match canvas"));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(self.sum.len());
        for (pix, &n) in self.count.iter().enumerate() {
            let base = pix * c;
            if n == 0 {
                data.extend_from_slice(&fallback.data()[base..base + c]);
            } else {
                let inv = 1.0 / n as f64;
                for ch in 0..c {
                    data.push(self.sum[base + ch] * inv);
                }
            }
        }
        ImageGrid::from_vec(self.height, self.width, self.channels, data)
    }
}

/// Merge per-crop predictions into a canvas-wide prediction: each pixel is
/// the mean of all predictions covering it (the least-squares reconciliation
/// of the crop equations), uncovered pixels take the fallback value.
pub fn aggregate(
    predictions: &[(CropWindow, ImageGrid)],
    height: usize,
    width: usize,
    channels: usize,
    fallback: &ImageGrid,
) -> Result<ImageGrid> {
    let mut agg = Aggregator::new(height, width, channels);
    for (w, p) in predictions {
        agg.add(w, p)?;
    }
    agg.finalize(fallback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn random_grid(h: usize, w: usize, c: usize, seed: u64) -> ImageGrid {
        let mut s = derive_stream(seed, &[7]);
        ImageGrid::from_vec(h, w, c, s.gaussian(h * w * c)).unwrap()
    }

    #[test]
    fn extract_identity_window() {
        let x = random_grid(5, 5, 3, 1);
        let crop = extract_crop(&x, &CropWindow::new(0, 0, 5)).unwrap();
        assert_eq!(crop, x);
    }

    #[test]
    fn extract_interior_block() {
        let x = ImageGrid::from_vec(4, 4, 1, (0..16).map(|v| v as f64).collect()).unwrap();
        let crop = extract_crop(&x, &CropWindow::new(1, 1, 2)).unwrap();
        assert_eq!(crop.data(), &[5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn extract_disjoint_windows_share_nothing() {
        let x = random_grid(8, 8, 1, 2);
        let a = extract_crop(&x, &CropWindow::new(0, 0, 3)).unwrap();
        let b = extract_crop(&x, &CropWindow::new(4, 4, 3)).unwrap();
        for va in a.data() {
            assert!(!b.data().contains(va));
        }
    }

    #[test]
    fn extract_out_of_bounds_rejected() {
        let x = ImageGrid::zeros(4, 4, 1);
        assert!(extract_crop(&x, &CropWindow::new(2, 2, 3)).is_err());
    }

    #[test]
    fn aggregate_single_full_prediction_is_identity() {
        let p = random_grid(6, 6, 3, 3);
        let fallback = ImageGrid::zeros(6, 6, 3);
        let out = aggregate(
            &[(CropWindow::new(0, 0, 6), p.clone())],
            6,
            6,
            3,
            &fallback,
        )
        .unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn aggregate_two_overlapping_constants() {
        // Windows [0..4) and [2..6) along columns: overlap averages to 0.5.
        let zero = ImageGrid::constant(4, 4, 1, 0.0);
        let one = ImageGrid::constant(4, 4, 1, 1.0);
        let fallback = ImageGrid::constant(4, 6, 1, -9.0);
        let out = aggregate(
            &[
                (CropWindow::new(0, 0, 4), zero),
                (CropWindow::new(0, 2, 4), one),
            ],
            4,
            6,
            1,
            &fallback,
        )
        .unwrap();
        for r in 0..4 {
            for c in 0..6 {
                let expect = match c {
                    0 | 1 => 0.0,
                    2 | 3 => 0.5,
                    _ => 1.0,
                };
                assert_eq!(out.get(r, c, 0), expect, "r={r} c={c}");
            }
        }
    }

    #[test]
    fn aggregate_uncovered_pixels_take_fallback() {
        let p = ImageGrid::constant(2, 2, 1, 5.0);
        let fallback = ImageGrid::constant(4, 4, 1, -1.0);
        let out = aggregate(&[(CropWindow::new(0, 0, 2), p)], 4, 4, 1, &fallback).unwrap();
        assert_eq!(out.get(0, 0, 0), 5.0);
        assert_eq!(out.get(3, 3, 0), -1.0);
    }

    #[test]
    fn aggregate_idempotent() {
        let p = random_grid(5, 5, 1, 4);
        let fallback = ImageGrid::zeros(5, 5, 1);
        let once = aggregate(&[(CropWindow::new(0, 0, 5), p)], 5, 5, 1, &fallback).unwrap();
        let twice = aggregate(
            &[(CropWindow::new(0, 0, 5), once.clone())],
            5,
            5,
            1,
            &fallback,
        )
        .unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn grid_positions_clamped() {
        assert_eq!(grid_positions(100, 64), vec![0, 36]);
        assert_eq!(grid_positions(64, 64), vec![0]);
        assert_eq!(grid_positions(192, 64), vec![0, 64, 128]);
        assert_eq!(grid_positions(130, 64), vec![0, 64, 66]);
    }

    #[test]
    fn plan_grid_mode_covers_with_clamped_stride() {
        let mut s = derive_stream(0, &[1]);
        let plan = plan_crops(100, 100, 64, 0, CropMode::Grid, &mut s).unwrap();
        assert_eq!(plan.windows.len(), 4);
        let offsets: Vec<(usize, usize)> = plan.windows.iter().map(|w| (w.row, w.col)).collect();
        assert_eq!(offsets, vec![(0, 0), (0, 36), (36, 0), (36, 36)]);
        assert!(plan.min_coverage() >= 1);
    }

    #[test]
    fn plan_hybrid_always_covers() {
        let mut s = derive_stream(5, &[2]);
        for n in [0, 3, 17] {
            let plan = plan_crops(70, 90, 32, n, CropMode::Hybrid, &mut s).unwrap();
            assert!(plan.min_coverage() >= 1, "n={n}");
        }
    }

    #[test]
    fn plan_random_paper_geometry_mean_coverage() {
        // 90 windows of 96x96 on a 288x288 canvas cover the image 10 times
        // on average, exactly.
        let mut s = derive_stream(11, &[3]);
        let plan = plan_crops(288, 288, 96, 90, CropMode::Random, &mut s).unwrap();
        assert_eq!(plan.windows.len(), 90);
        assert_eq!(plan.mean_coverage(), 10.0);
    }

    #[test]
    fn plan_rejects_oversized_crop() {
        let mut s = derive_stream(0, &[4]);
        assert!(plan_crops(32, 32, 33, 1, CropMode::Random, &mut s).is_err());
    }

    #[test]
    fn random_offsets_span_valid_range() {
        let mut s = derive_stream(1, &[5]);
        let plan = plan_crops(40, 40, 32, 400, CropMode::Random, &mut s).unwrap();
        let mut seen_row = [false; 9];
        for w in &plan.windows {
            assert!(w.row <= 8 && w.col <= 8);
            seen_row[w.row] = true;
        }
        assert!(seen_row.iter().all(|&b| b));
    }
}
