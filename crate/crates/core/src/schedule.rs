//! Variance schedule and the bias-injection coefficients `k_t`.
//!
//! All accessors take 1-based timesteps (`t = 1..=T`). `alpha_bar(0)` is
//! defined as 1 so that posterior formulas can be written uniformly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a linear beta schedule, as recorded in manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<VarianceSchedule> {
        linear_beta_schedule(self.timesteps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    k: Vec<f64>,
}

/// Linearly spaced betas from `beta_min` to `beta_max` over `timesteps` steps.
pub fn linear_beta_schedule(
    timesteps: usize,
    beta_min: f64,
    beta_max: f64,
) -> Result<VarianceSchedule> {
    if timesteps == 0 {
        return Err(Error::InvalidSchedule("need at least one timestep".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "require 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas = if timesteps == 1 {
        vec![beta_min]
    } else {
        let step = (beta_max - beta_min) / (timesteps - 1) as f64;
        (0..timesteps).map(|i| beta_min + i as f64 * step).collect()
    };
    VarianceSchedule::from_betas(betas)
}

/// `k_t` such that the one-step bias `k_t * mu` composes into the closed-form
/// marginal `sqrt(1 - alpha_bar_t) * mu`.
///
/// Uses `k_t = sqrt(1 - ab_t) - sqrt(alpha_t) * sqrt(1 - ab_{t-1})`, obtained
/// by subtracting consecutive instances of the defining sum.
pub fn compute_kt(betas: &[f64], alphas: &[f64], alpha_bars: &[f64]) -> Result<Vec<f64>> {
    if betas.len() != alphas.len() || alphas.len() != alpha_bars.len() {
        return Err(Error::InvalidSchedule(format!(
            "inconsistent lengths: {} betas, {} alphas, {} alpha_bars",
            betas.len(),
            alphas.len(),
            alpha_bars.len()
        )));
    }
    if betas.is_empty() {
        return Err(Error::InvalidSchedule("empty schedule".into()));
    }
    let mut prev_alpha_bar = 1.0_f64;
    let mut k = Vec::with_capacity(alphas.len());
    for (&alpha, &alpha_bar) in alphas.iter().zip(alpha_bars) {
        k.push((1.0 - alpha_bar).sqrt() - alpha.sqrt() * (1.0 - prev_alpha_bar).sqrt());
        prev_alpha_bar = alpha_bar;
    }
    Ok(k)
}

impl VarianceSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("empty schedule".into()));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, &b)| !(b > 0.0 && b < 1.0))
        {
            return Err(Error::InvalidSchedule(format!(
                "beta_{} = {b} is outside (0, 1)",
                i + 1
            )));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars: Vec<f64> = alphas
            .iter()
            .scan(1.0, |acc, &a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let k = compute_kt(&betas, &alphas, &alpha_bars)?;
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            k,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.timesteps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product of alphas up to `t`; equals 1 at `t = 0`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn k(&self, t: usize) -> f64 {
        self.k[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn ks(&self) -> &[f64] {
        &self.k
    }
}
