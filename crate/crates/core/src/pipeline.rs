//! Dataset-level protection, restoration and sampling.
//!
//! Each image gets its own RNG stream derived from the master seed (see
//! [`crate::seed`]), so results are identical whichever [`Parallelism`] runs
//! them.

use crate::bgd::BgdParams;
use crate::denoiser::NoisePredictor;
use crate::dtppm::{levels_from_steps, PermissionLevel};
use crate::error::{Error, Result};
use crate::parallel::Parallelism;
use crate::sampler::{generate_protected, restore, sample_from_noise, SamplerConfig};
use crate::schedule::VarianceSchedule;
use crate::seed;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ProtectedLevel {
    pub level: PermissionLevel,
    /// `x_sn` per image.
    pub noisy: Vec<ImageTensor>,
    /// `x_p` per image.
    pub protected: Vec<ImageTensor>,
}

pub fn image_seeds(master_seed: u64, count: usize) -> Vec<u64> {
    (0..count).map(|i| seed::image_seed(master_seed, i)).collect()
}

/// Runs protection for every level in `config.noise_steps`.
pub fn protect_dataset<P: NoisePredictor + ?Sized>(
    images: &[ImageTensor],
    predictor: &P,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
    config: &SamplerConfig,
    master_seed: u64,
    parallelism: Parallelism,
) -> Result<Vec<ProtectedLevel>> {
    config.validate(schedule)?;
    if images.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let levels = levels_from_steps(&config.noise_steps, schedule)?;
    let seeds = image_seeds(master_seed, images.len());
    levels
        .into_iter()
        .map(|level| {
            let pairs = parallelism.try_map(images, |i, x0| {
                let mut rng = seed::rng(seed::level_stream(seeds[i], level.level));
                generate_protected(x0, level.level, predictor, schedule, bgd, config, &mut rng)
            })?;
            let (noisy, protected) = pairs.into_iter().unzip();
            Ok(ProtectedLevel {
                level,
                noisy,
                protected,
            })
        })
        .collect()
}

/// Restores the protected images of one level. `seeds` are the per-image
/// seeds recorded at protection time.
#[allow(clippy::too_many_arguments)]
pub fn restore_dataset<P: NoisePredictor + ?Sized>(
    protected: &[ImageTensor],
    level: usize,
    seeds: &[u64],
    predictor: &P,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
    config: &SamplerConfig,
    parallelism: Parallelism,
) -> Result<Vec<ImageTensor>> {
    if protected.len() != seeds.len() {
        return Err(Error::Misaligned(format!(
            "{} images but {} seeds",
            protected.len(),
            seeds.len()
        )));
    }
    parallelism.try_map(protected, |i, x_p| {
        let mut rng = seed::rng(seed::restore_stream(seeds[i], level));
        restore(x_p, predictor, schedule, bgd, config, &mut rng)
    })
}

/// `count` independent samples from the biased prior.
pub fn sample_dataset<P: NoisePredictor + ?Sized>(
    count: usize,
    predictor: &P,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
    master_seed: u64,
    parallelism: Parallelism,
) -> Result<Vec<ImageTensor>> {
    let seeds = image_seeds(master_seed, count);
    parallelism.try_map(&seeds, |_, &s| {
        sample_from_noise(predictor, schedule, bgd, &mut seed::rng(s), predictor.shape())
    })
}
