//! Per-texture denoisers.
//!
//! All backends implement the same contract: given a noisy crop at schedule
//! step `k`, return the prediction of the clean crop. Three backends are
//! provided:
//!
//! * [`GaussianFieldModel`] — exact posterior mean for a stationary Gaussian
//!   field, computed in the Fourier domain. Its output statistics are known
//!   in closed form, which makes it the verification backend for the whole
//!   sampling pipeline.
//! * [`PatchBank`] / [`PatchMmseDenoiser`] — empirical-Bayes posterior mean
//!   over the reference texture's patches, merged over sub-windows with the
//!   same aggregation operator the sampler uses at canvas scale.
//! * [`LinearConvDenoiser`] — a small per-step-bin convolutional model
//!   trained with SGD on noisy crops of the reference.

mod gaussian;
mod io;
mod linear;
mod patch;

pub use gaussian::{fit_gaussian_field, GaussianFieldModel, SPECTRUM_FLOOR};
pub use io::{load_model, save_model, TextureModel};
pub use linear::{train_linear_denoiser, ConvGrads, LinearConvDenoiser, TrainConfig};
pub use patch::{build_patch_bank, PatchBank, PatchMmseDenoiser};

use crate::canvas::ImageGrid;
use crate::error::Result;
use crate::schedule::NoiseSchedule;

/// A denoiser maps a noisy crop and a schedule step to a clean-crop
/// prediction of the same shape.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, z_crop: &ImageGrid, k: usize, sched: &NoiseSchedule) -> Result<ImageGrid>;

    /// Radius of spatial dependence in pixels: the prediction at a pixel may
    /// depend on inputs up to this distance away.
    fn receptive_field(&self) -> usize;
}
