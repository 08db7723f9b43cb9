//! Reverse process under the biased prior: posterior statistics, standard
//! ancestral sampling, the adversarial generative process (AGP) used for
//! protection, and restoration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bgd::{forward_diffuse, sample_terminal, BgdParams};
use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::schedule::VarianceSchedule;
use crate::tensor::{ImageTensor, Shape};

pub const DEFAULT_ADVERSE_STEPS: usize = 20;
pub const DEFAULT_REVERSE_FACTOR: f64 = 1.4;
pub const DEFAULT_NOISE_STEPS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mean: ImageTensor,
    /// Isotropic variance of `x_{t-1} | x_t`.
    pub variance_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReverseMode {
    /// Standard generative step using the usual `x0` estimate.
    Standard,
    /// AGP step using the sign-flipped `x0` estimate.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Adverse time step `t_r`: number of AGP steps during protection.
    pub adverse_steps: usize,
    /// Reverse factor `eta`: restoration runs `round(eta * t_r)` steps.
    pub reverse_factor: f64,
    /// Slight-noise timestep per permission level, level 1 first.
    pub noise_steps: Vec<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            adverse_steps: DEFAULT_ADVERSE_STEPS,
            reverse_factor: DEFAULT_REVERSE_FACTOR,
            noise_steps: DEFAULT_NOISE_STEPS.to_vec(),
        }
    }
}

impl SamplerConfig {
    /// Number of standard steps used for restoration, rounded half-up.
    pub fn restore_steps(&self) -> usize {
        (self.reverse_factor * self.adverse_steps as f64 + 0.5).floor() as usize
    }

    /// `t_r = 0` is accepted as a degenerate no-op chain.
    pub fn validate(&self, schedule: &VarianceSchedule) -> Result<()> {
        if !(self.reverse_factor >= 1.0 && self.reverse_factor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "reverse factor must be >= 1, got {}",
                self.reverse_factor
            )));
        }
        if self.restore_steps() > schedule.timesteps() {
            return Err(Error::InvalidParameter(format!(
                "restoration needs {} steps but the schedule has {}",
                self.restore_steps(),
                schedule.timesteps()
            )));
        }
        crate::dtppm::validate_noise_steps(&self.noise_steps, schedule)
    }

    pub fn noise_step(&self, level: usize) -> Result<usize> {
        level
            .checked_sub(1)
            .and_then(|i| self.noise_steps.get(i))
            .copied()
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "permission level {level} not in 1..={}",
                    self.noise_steps.len()
                ))
            })
    }
}

fn signal_and_spread(t: usize, schedule: &VarianceSchedule) -> Result<(f64, f64)> {
    schedule.check_timestep(t)?;
    let ab = schedule.alpha_bar(t);
    Ok((ab.sqrt(), (1.0 - ab).sqrt()))
}

/// `x0 = (x_t - sqrt(1 - ab_t) (gamma eps_hat + mu)) / sqrt(ab_t)`.
pub fn estimate_x0(
    x_t: &ImageTensor,
    t: usize,
    eps_hat: &ImageTensor,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
) -> Result<ImageTensor> {
    x0_with_sign(x_t, t, eps_hat, schedule, bgd, -1.0)
}

/// `x0_adv = (x_t + sqrt(1 - ab_t) (gamma eps_hat + mu)) / sqrt(ab_t)`.
pub fn adversarial_x0(
    x_t: &ImageTensor,
    t: usize,
    eps_hat: &ImageTensor,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
) -> Result<ImageTensor> {
    x0_with_sign(x_t, t, eps_hat, schedule, bgd, 1.0)
}

fn x0_with_sign(
    x_t: &ImageTensor,
    t: usize,
    eps_hat: &ImageTensor,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
    sign: f64,
) -> Result<ImageTensor> {
    let (signal, spread) = signal_and_spread(t, schedule)?;
    x_t.ensure_same_shape(eps_hat)?;
    x_t.ensure_same_shape(bgd.mu())?;
    let gamma = bgd.gamma();
    let data = x_t
        .as_slice()
        .iter()
        .zip(eps_hat.as_slice())
        .zip(bgd.mu().as_slice())
        .map(|((&x, &e), &m)| (x + sign * (spread * gamma * e + spread * m)) / signal)
        .collect();
    ImageTensor::new(x_t.shape(), data)
}

/// Coefficients `(c_xt, c_x0, c_mu, variance)` of the biased posterior
/// `q(x_{t-1} | x_t, x0)` for `2 <= t <= T`; the variance excludes the
/// `gamma^2` factor.
pub fn posterior_coefficients(t: usize, schedule: &VarianceSchedule) -> Result<(f64, f64, f64, f64)> {
    schedule.check_timestep(t)?;
    if t < 2 {
        return Err(Error::TimestepOutOfRange {
            t,
            max: schedule.timesteps(),
        });
    }
    let alpha = schedule.alpha(t);
    let beta = schedule.beta(t);
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let denom = 1.0 - ab;
    let c_xt = alpha.sqrt() * (1.0 - ab_prev) / denom;
    let c_x0 = ab_prev.sqrt() * beta / denom;
    let c_mu = ((1.0 - ab_prev).sqrt() * beta - alpha.sqrt() * (1.0 - ab_prev) * schedule.k(t)) / denom;
    let variance = (1.0 - ab_prev) * beta / denom;
    Ok((c_xt, c_x0, c_mu, variance))
}

pub fn posterior(
    x_t: &ImageTensor,
    t: usize,
    x0_hat: &ImageTensor,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
) -> Result<PosteriorParams> {
    let (c_xt, c_x0, c_mu, variance) = posterior_coefficients(t, schedule)?;
    x_t.ensure_same_shape(x0_hat)?;
    x_t.ensure_same_shape(bgd.mu())?;
    let data = x_t
        .as_slice()
        .iter()
        .zip(x0_hat.as_slice())
        .zip(bgd.mu().as_slice())
        .map(|((&x, &x0), &m)| c_xt * x + c_x0 * x0 + c_mu * m)
        .collect();
    Ok(PosteriorParams {
        mean: ImageTensor::new(x_t.shape(), data)?,
        variance_scale: variance * bgd.gamma() * bgd.gamma(),
    })
}

/// One reverse step given the noise estimate and the step noise `z`.
///
/// At `t = 1` the `x0` estimate is returned directly and `z` is ignored.
pub fn denoise_step(
    x_t: &ImageTensor,
    t: usize,
    eps_hat: &ImageTensor,
    z: &ImageTensor,
    mode: ReverseMode,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
) -> Result<ImageTensor> {
    let x0_hat = match mode {
        ReverseMode::Standard => estimate_x0(x_t, t, eps_hat, schedule, bgd)?,
        ReverseMode::Adversarial => adversarial_x0(x_t, t, eps_hat, schedule, bgd)?,
    };
    if !x0_hat.is_finite() {
        return Err(Error::NonFinite(format!("x0 estimate at t={t}")));
    }
    if t == 1 {
        return Ok(x0_hat);
    }
    let post = posterior(x_t, t, &x0_hat, schedule, bgd)?;
    let mut next = post.mean;
    next.add_scaled(z, post.variance_scale.sqrt())?;
    Ok(next)
}

/// Samples `x_{t-1}` from `x_t`, drawing `z ~ N(0, I)` only when `t > 1`.
pub fn reverse_step<P, R>(
    x_t: &ImageTensor,
    t: usize,
    predictor: &P,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
    rng: &mut R,
    mode: ReverseMode,
) -> Result<ImageTensor>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    schedule.check_timestep(t)?;
    let eps_hat = predictor.predict(x_t, t)?;
    let z = if t > 1 {
        ImageTensor::standard_normal(x_t.shape(), rng)
    } else {
        ImageTensor::zeros(x_t.shape())
    };
    denoise_step(x_t, t, &eps_hat, &z, mode, schedule, bgd)
}

/// Runs `reverse_step` for `t = from, from - 1, .., 1`.
pub fn reverse_chain<P, R>(
    start: &ImageTensor,
    from: usize,
    predictor: &P,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
    rng: &mut R,
    mode: ReverseMode,
) -> Result<ImageTensor>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    if from > schedule.timesteps() {
        return Err(Error::TimestepOutOfRange {
            t: from,
            max: schedule.timesteps(),
        });
    }
    let mut x = start.clone();
    for t in (1..=from).rev() {
        x = reverse_step(&x, t, predictor, schedule, bgd, rng, mode)?;
    }
    Ok(x)
}

/// Slight-noise image `x_sn` for `level` and its protected counterpart `x_p`
/// obtained by `t_r` AGP steps started directly from `x_sn`.
pub fn generate_protected<P, R>(
    x0: &ImageTensor,
    level: usize,
    predictor: &P,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<(ImageTensor, ImageTensor)>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let t_sn = config.noise_step(level)?;
    let eps = ImageTensor::standard_normal(x0.shape(), rng);
    let x_sn = forward_diffuse(x0, t_sn, &eps, schedule, bgd)?;
    let x_p = reverse_chain(
        &x_sn,
        config.adverse_steps,
        predictor,
        schedule,
        bgd,
        rng,
        ReverseMode::Adversarial,
    )?;
    Ok((x_sn, x_p))
}

/// Standard reverse chain of `round(eta * t_r)` steps started from `x_p`.
pub fn restore<P, R>(
    x_p: &ImageTensor,
    predictor: &P,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<ImageTensor>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    reverse_chain(
        x_p,
        config.restore_steps(),
        predictor,
        schedule,
        bgd,
        rng,
        ReverseMode::Standard,
    )
}

/// Draws `x_T = gamma eps + mu` and denoises it through all `T` steps.
pub fn sample_from_noise<P, R>(
    predictor: &P,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
    rng: &mut R,
    shape: Shape,
) -> Result<ImageTensor>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let x_t = sample_terminal(shape, rng, bgd)?;
    reverse_chain(
        &x_t,
        schedule.timesteps(),
        predictor,
        schedule,
        bgd,
        rng,
        ReverseMode::Standard,
    )
}
