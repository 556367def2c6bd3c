//! Variance-preserving noise schedule and the deterministic reverse step.
//!
//! A schedule is a list of `(t, alpha, sigma)` triples with `t` running from
//! 1 (pure noise) down to 0 (clean signal) and `alpha^2 + sigma^2 = 1` at
//! every step. The forward map is `z = alpha * x + sigma * eps`; the reverse
//! step re-derives the noise estimate from the current x-prediction and moves
//! the canvas to the next noise level with no added stochasticity.

use crate::canvas::ImageGrid;
use crate::error::{invalid, Result};

/// One discretized point of the diffusion time axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep {
    /// Diffusion time in `[0, 1]`.
    pub t: f64,
    /// Signal scale at `t`.
    pub alpha: f64,
    /// Noise scale at `t`.
    pub sigma: f64,
}

/// Discretized variance-preserving schedule, index 0 = pure noise (`t = 1`),
/// index `len() - 1` = clean signal (`t = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: Vec<ScheduleStep>,
}

/// `(alpha, sigma)` of the cosine schedule at time `t`, with exact endpoint
/// values so that `t = 0` reproduces the signal and `t = 1` the noise
/// bit-for-bit.
#[inline]
pub fn cosine_alpha_sigma(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (1.0, 0.0)
    } else if t >= 1.0 {
        (0.0, 1.0)
    } else {
        let a = std::f64::consts::FRAC_PI_2 * t;
        (a.cos(), a.sin())
    }
}

impl NoiseSchedule {
    /// Build the cosine schedule with `steps` uniformly spaced times from 1
    /// down to 0: `alpha = cos(pi t / 2)`, `sigma = sin(pi t / 2)`.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(invalid(format!("schedule needs at least 2 steps, got {steps}")));
        }
        let n = steps as f64 - 1.0;
        let steps = (0..steps)
            .map(|k| {
                let t = 1.0 - k as f64 / n;
                let (alpha, sigma) = cosine_alpha_sigma(t);
                ScheduleStep { t, alpha, sigma }
            })
            .collect();
        Ok(Self { steps })
    }

    /// Wrap explicit steps, validating the variance-preserving invariants.
    /// Mostly useful for driving denoisers at handpicked noise levels.
    pub fn from_steps(steps: Vec<ScheduleStep>) -> Result<Self> {
        if steps.len() < 2 {
            return Err(invalid("schedule needs at least 2 steps"));
        }
        for (k, s) in steps.iter().enumerate() {
            let vp = s.alpha * s.alpha + s.sigma * s.sigma;
            if (vp - 1.0).abs() > 1e-6 {
                return Err(invalid(format!(
                    "step {k}: alpha^2 + sigma^2 = {vp}, not variance-preserving"
                )));
            }
            if !(0.0..=1.0).contains(&s.t) || s.alpha < 0.0 || s.sigma < 0.0 {
                return Err(invalid(format!("step {k}: out-of-range values")));
            }
        }
        for w in steps.windows(2) {
            if w[1].t >= w[0].t {
                return Err(invalid("schedule times must be strictly decreasing"));
            }
        }
        let last = steps.len() - 1;
        if steps[0].t != 1.0 || steps[last].t != 0.0 {
            return Err(invalid("schedule must start at t = 1 and end at t = 0"));
        }
        Ok(Self { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, k: usize) -> &ScheduleStep {
        &self.steps[k]
    }

    pub fn steps(&self) -> &[ScheduleStep] {
        &self.steps
    }

    #[inline]
    pub fn alpha(&self, k: usize) -> f64 {
        self.steps[k].alpha
    }

    #[inline]
    pub fn sigma(&self, k: usize) -> f64 {
        self.steps[k].sigma
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        self.steps[k].t
    }
}

/// `alpha_k * x + sigma_k * eps`, elementwise.
pub fn forward_diffuse(
    x: &ImageGrid,
    k: usize,
    eps: &ImageGrid,
    sched: &NoiseSchedule,
) -> Result<ImageGrid> {
    if x.shape() != eps.shape() {
        return Err(invalid(format!(
            "forward_diffuse: shape mismatch {:?} vs {:?}",
            x.shape(),
            eps.shape()
        )));
    }
    let s = sched.step(k);
    Ok(x.scale_add(s.alpha, eps, s.sigma))
}

/// Deterministic reverse update from level `k` to level `k + 1`.
///
/// The noise estimate implied by the x-prediction,
/// `eps_hat = (z - alpha_k * x0_hat) / sigma_k`, is re-noised at the next
/// level: `alpha_{k+1} * x0_hat + sigma_{k+1} * eps_hat`.
pub fn ddim_step(
    z: &ImageGrid,
    x0_hat: &ImageGrid,
    k: usize,
    sched: &NoiseSchedule,
) -> Result<ImageGrid> {
    if z.shape() != x0_hat.shape() {
        return Err(invalid(format!(
            "ddim_step: shape mismatch {:?} vs {:?}",
            z.shape(),
            x0_hat.shape()
        )));
    }
    if k + 1 >= sched.len() {
        return Err(invalid(format!(
            "ddim_step: step {k} is terminal for a {}-step schedule",
            sched.len()
        )));
    }
    let cur = sched.step(k);
    let next = sched.step(k + 1);
    debug_assert!(cur.sigma > 0.0);
    // alpha' x0 + sigma' (z - alpha x0) / sigma, fused per element.
    let r = next.sigma / cur.sigma;
    let cx = next.alpha - r * cur.alpha;
    Ok(x0_hat.scale_add(cx, z, r))
}
