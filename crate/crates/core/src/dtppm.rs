//! Permission-graded release: each level gets the dataset diffused to a
//! slightly larger timestep than the previous one.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bgd::{forward_diffuse, BgdParams};
use crate::error::{Error, Result};
use crate::parallel::Parallelism;
use crate::schedule::VarianceSchedule;
use crate::seed;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionLevel {
    /// 1-based level index `m`.
    pub level: usize,
    /// Slight-noise timestep `t_sn` for this level.
    pub noise_step: usize,
}

/// Levels `1..=n` for the given strictly increasing noise steps.
pub fn levels_from_steps(steps: &[usize], schedule: &VarianceSchedule) -> Result<Vec<PermissionLevel>> {
    validate_noise_steps(steps, schedule)?;
    Ok(steps
        .iter()
        .enumerate()
        .map(|(i, &noise_step)| PermissionLevel {
            level: i + 1,
            noise_step,
        })
        .collect())
}

pub fn validate_noise_steps(steps: &[usize], schedule: &VarianceSchedule) -> Result<()> {
    if steps.is_empty() {
        return Err(Error::Empty("permission levels"));
    }
    for &t in steps {
        schedule.check_timestep(t)?;
    }
    if let Some(w) = steps.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(format!(
            "noise steps must strictly increase across levels, found {} then {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradedDataset {
    pub level: PermissionLevel,
    pub images: Vec<ImageTensor>,
    /// Per-image seeds; the level stream is `seed::level_stream(seed, level)`.
    pub seeds: Vec<u64>,
}

/// Diffuses every image to every level's noise step with an independent
/// noise draw per (image, level).
pub fn grade(
    dataset: &[ImageTensor],
    levels: &[PermissionLevel],
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
    master_seed: u64,
    parallelism: Parallelism,
) -> Result<Vec<GradedDataset>> {
    if levels.is_empty() {
        return Err(Error::Empty("permission levels"));
    }
    if let Some(w) = levels.windows(2).find(|w| w[0].level >= w[1].level) {
        return Err(Error::InvalidParameter(format!(
            "levels must be listed in increasing order, found {} then {}",
            w[0].level, w[1].level
        )));
    }
    let steps: Vec<usize> = levels.iter().map(|l| l.noise_step).collect();
    validate_noise_steps(&steps, schedule)?;
    let seeds: Vec<u64> = (0..dataset.len())
        .map(|i| seed::image_seed(master_seed, i))
        .collect();
    levels
        .iter()
        .map(|&level| {
            let images = parallelism.try_map(dataset, |i, x0| {
                let mut rng = seed::rng(seed::level_stream(seeds[i], level.level));
                let eps = ImageTensor::standard_normal(x0.shape(), &mut rng);
                forward_diffuse(x0, level.noise_step, &eps, schedule, bgd)
            })?;
            Ok(GradedDataset {
                level,
                images,
                seeds: seeds.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    /// Per level, mean L2 distance between graded and clean images.
    pub mean_distances: Vec<f64>,
    /// Images whose own distances are not strictly increasing across levels.
    pub per_image_violations: usize,
    pub strictly_increasing: bool,
}

impl fmt::Display for OrderingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dists: Vec<String> = self.mean_distances.iter().map(|d| format!("{d:.6}")).collect();
        write!(
            f,
            "{}: mean distances [{}], {} per-image violations",
            if self.strictly_increasing { "strict" } else { "non-strict" },
            dists.join(", "),
            self.per_image_violations
        )
    }
}

fn l2(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Checks that distance to the clean data grows strictly with the level, on
/// the dataset mean. Individual images may violate the ordering.
pub fn verify_ordering(clean: &[ImageTensor], graded: &[GradedDataset]) -> Result<OrderingReport> {
    if clean.is_empty() || graded.is_empty() {
        return Err(Error::Empty("ordering check input"));
    }
    let mut per_level = Vec::with_capacity(graded.len());
    for g in graded {
        if g.images.len() != clean.len() {
            return Err(Error::Misaligned(format!(
                "level {} has {} images, clean set has {}",
                g.level.level,
                g.images.len(),
                clean.len()
            )));
        }
        let d = clean
            .iter()
            .zip(&g.images)
            .map(|(c, x)| l2(c, x))
            .collect::<Result<Vec<f64>>>()?;
        per_level.push(d);
    }
    let mean_distances: Vec<f64> = per_level
        .iter()
        .map(|d| d.iter().sum::<f64>() / d.len() as f64)
        .collect();
    let per_image_violations = (0..clean.len())
        .filter(|&i| per_level.windows(2).any(|w| w[0][i] >= w[1][i]))
        .count();
    let strictly_increasing = mean_distances.windows(2).all(|w| w[0] < w[1]);
    Ok(OrderingReport {
        mean_distances,
        per_image_violations,
        strictly_increasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bgd::make_bgd;
    use crate::schedule::ScheduleParams;
    use crate::tensor::Shape;

    fn dataset(n: usize, shape: Shape) -> Vec<ImageTensor> {
        let mut rng = seed::rng(1234);
        (0..n)
            .map(|_| ImageTensor::standard_normal(shape, &mut rng).map(|v| (0.5 * v).clamp(-1.0, 1.0)))
            .collect()
    }

    #[test]
    fn default_levels_grade_and_order() {
        let shape = Shape::new(8, 8, 1);
        let s = ScheduleParams::default().build().unwrap();
        let bgd = make_bgd(ImageTensor::filled(shape, 1.0), 0.6).unwrap();
        let data = dataset(64, shape);
        let levels = levels_from_steps(&[1, 2, 3], &s).unwrap();
        let graded = grade(&data, &levels, &s, &bgd, 7, Parallelism::default()).unwrap();
        assert_eq!(graded.len(), 3);
        let report = verify_ordering(&data, &graded).unwrap();
        assert!(report.strictly_increasing, "{report}");
    }

    #[test]
    fn grading_is_reproducible_and_strategy_independent() {
        let shape = Shape::new(4, 4, 1);
        let s = ScheduleParams::default().build().unwrap();
        let bgd = make_bgd(ImageTensor::filled(shape, -0.5), 0.6).unwrap();
        let data = dataset(10, shape);
        let levels = levels_from_steps(&[1, 5], &s).unwrap();
        let a = grade(&data, &levels, &s, &bgd, 3, Parallelism::Sequential).unwrap();
        let b = grade(&data, &levels, &s, &bgd, 3, Parallelism::Parallel).unwrap();
        assert_eq!(a, b);
        let c = grade(&data, &levels, &s, &bgd, 4, Parallelism::Sequential).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn graded_image_replays_from_seed() {
        let shape = Shape::new(4, 4, 1);
        let s = ScheduleParams::default().build().unwrap();
        let bgd = make_bgd(ImageTensor::filled(shape, 0.5), 0.6).unwrap();
        let data = dataset(3, shape);
        let levels = levels_from_steps(&[2, 3], &s).unwrap();
        let graded = grade(&data, &levels, &s, &bgd, 11, Parallelism::default()).unwrap();
        let g = &graded[1];
        let mut rng = seed::rng(seed::level_stream(g.seeds[2], g.level.level));
        let eps = ImageTensor::standard_normal(shape, &mut rng);
        let replay = forward_diffuse(&data[2], 3, &eps, &s, &bgd).unwrap();
        assert_eq!(replay, g.images[2]);
    }

    #[test]
    fn invalid_levels() {
        let s = ScheduleParams::default().build().unwrap();
        assert!(levels_from_steps(&[0], &s).is_err());
        assert!(levels_from_steps(&[2, 2], &s).is_err());
        assert!(levels_from_steps(&[3, 1], &s).is_err());
        assert!(levels_from_steps(&[], &s).is_err());
        assert!(levels_from_steps(&[1001], &s).is_err());
    }

    #[test]
    fn identical_levels_report_non_strict() {
        let shape = Shape::new(4, 4, 1);
        let s = ScheduleParams::default().build().unwrap();
        let bgd = make_bgd(ImageTensor::filled(shape, 0.5), 0.6).unwrap();
        let data = dataset(5, shape);
        let one = levels_from_steps(&[2], &s).unwrap();
        let g = grade(&data, &one, &s, &bgd, 1, Parallelism::default()).unwrap().remove(0);
        let report = verify_ordering(&data, &[g.clone(), g]).unwrap();
        assert!(!report.strictly_increasing);
        assert_eq!(report.per_image_violations, 5);
        assert!(report.to_string().starts_with("non-strict"));
    }

    #[test]
    fn noiseless_distances_are_pure_shrinkage() {
        // gamma = 0 and a zero trigger: x_t = sqrt(ab_t) x0 exactly.
        let shape = Shape::new(2, 2, 1);
        let s = ScheduleParams::default().build().unwrap();
        let bgd = make_bgd(ImageTensor::zeros(shape), 0.0).unwrap();
        let data = dataset(4, shape);
        let levels = levels_from_steps(&[1, 2, 3], &s).unwrap();
        let graded = grade(&data, &levels, &s, &bgd, 0, Parallelism::default()).unwrap();
        let report = verify_ordering(&data, &graded).unwrap();
        for (lvl, d) in report.mean_distances.iter().enumerate() {
            let shrink = 1.0 - s.alpha_bar(lvl + 1).sqrt();
            let want = data.iter().map(|x| shrink * x.squared_norm().sqrt()).sum::<f64>() / 4.0;
            assert!((d - want).abs() < 1e-12);
        }
    }

    #[test]
    fn misaligned_lists() {
        let shape = Shape::new(2, 2, 1);
        let s = ScheduleParams::default().build().unwrap();
        let bgd = make_bgd(ImageTensor::zeros(shape), 0.6).unwrap();
        let data = dataset(4, shape);
        let levels = levels_from_steps(&[1], &s).unwrap();
        let graded = grade(&data, &levels, &s, &bgd, 0, Parallelism::default()).unwrap();
        assert!(matches!(
            verify_ordering(&data[..3], &graded),
            Err(Error::Misaligned(_))
        ));
    }
}
