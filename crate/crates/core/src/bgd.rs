//! Trigger handling and the biased forward process.
//!
//! The trigger `delta` shifts the terminal distribution from `N(0, I)` to
//! `N(mu, gamma^2 I)` with `mu = (1 - gamma) * delta`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::schedule::VarianceSchedule;
use crate::tensor::{ImageTensor, Shape};

/// Default scale factor.
pub const DEFAULT_GAMMA: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct BgdParams {
    trigger: ImageTensor,
    gamma: f64,
    mu: ImageTensor,
}

/// Global min-max map of `raw` onto `[-1, 1]`. A constant input maps to zeros.
pub fn scale_trigger(raw: &ImageTensor) -> Result<ImageTensor> {
    if raw.is_empty() {
        return Err(Error::Empty("trigger"));
    }
    if !raw.is_finite() {
        return Err(Error::NonFinite("trigger contains non-finite values".into()));
    }
    let (lo, hi) = raw.min_max();
    if hi == lo {
        return Ok(ImageTensor::zeros(raw.shape()));
    }
    let scale = 2.0 / (hi - lo);
    Ok(raw.map(|v| ((v - lo) * scale - 1.0).clamp(-1.0, 1.0)))
}

pub fn make_bgd(trigger: ImageTensor, gamma: f64) -> Result<BgdParams> {
    BgdParams::new(trigger, gamma)
}

impl BgdParams {
    pub fn new(trigger: ImageTensor, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [0, 1], got {gamma}"
            )));
        }
        let (lo, hi) = trigger.min_max();
        if lo < -1.0 || hi > 1.0 || !trigger.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "trigger values must lie in [-1, 1], got [{lo}, {hi}]"
            )));
        }
        let mu = trigger.map(|d| (1.0 - gamma) * d);
        Ok(Self { trigger, gamma, mu })
    }

    /// Unbiased standard DDPM (`gamma = 1`, `mu = 0`) for the given shape.
    pub fn standard(shape: Shape) -> Self {
        Self {
            trigger: ImageTensor::zeros(shape),
            gamma: 1.0,
            mu: ImageTensor::zeros(shape),
        }
    }

    pub fn trigger(&self) -> &ImageTensor {
        &self.trigger
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> &ImageTensor {
        &self.mu
    }

    pub fn shape(&self) -> Shape {
        self.mu.shape()
    }
}

/// Closed-form marginal: `sqrt(ab_t) x0 + sqrt(1 - ab_t) (gamma eps + mu)`.
pub fn forward_diffuse(
    x0: &ImageTensor,
    t: usize,
    eps: &ImageTensor,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
) -> Result<ImageTensor> {
    schedule.check_timestep(t)?;
    x0.ensure_same_shape(eps)?;
    x0.ensure_same_shape(bgd.mu())?;
    let signal = schedule.alpha_bar(t).sqrt();
    let spread = (1.0 - schedule.alpha_bar(t)).sqrt();
    let gamma = bgd.gamma();
    let data = x0
        .as_slice()
        .iter()
        .zip(eps.as_slice())
        .zip(bgd.mu().as_slice())
        .map(|((&x, &e), &m)| signal * x + spread * gamma * e + spread * m)
        .collect();
    ImageTensor::new(x0.shape(), data)
}

/// One biased transition: `sqrt(alpha_t) x_{t-1} + k_t mu + sqrt(1 - alpha_t) gamma z`.
pub fn forward_step(
    x_prev: &ImageTensor,
    t: usize,
    z: &ImageTensor,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
) -> Result<ImageTensor> {
    schedule.check_timestep(t)?;
    x_prev.ensure_same_shape(z)?;
    x_prev.ensure_same_shape(bgd.mu())?;
    let scale = schedule.alpha(t).sqrt();
    let k = schedule.k(t);
    let noise = (1.0 - schedule.alpha(t)).sqrt() * bgd.gamma();
    let data = x_prev
        .as_slice()
        .iter()
        .zip(z.as_slice())
        .zip(bgd.mu().as_slice())
        .map(|((&x, &n), &m)| scale * x + k * m + noise * n)
        .collect();
    ImageTensor::new(x_prev.shape(), data)
}

/// Draws `gamma * eps + mu` with `eps ~ N(0, I)`.
pub fn sample_terminal<R: Rng + ?Sized>(shape: Shape, rng: &mut R, bgd: &BgdParams) -> Result<ImageTensor> {
    if shape != bgd.shape() {
        return Err(Error::ShapeMismatch {
            expected: bgd.shape(),
            actual: shape,
        });
    }
    let eps = ImageTensor::standard_normal(shape, rng);
    eps.lincomb(bgd.gamma(), bgd.mu(), 1.0)
}
