//! File-level workflows: train, grade, protect, replay, restore, sample, evaluate.
//!
//! Layout of a protected dataset directory:
//!
//! ```text
//! <out>/manifest.json
//! <out>/level<m>/sn/<file>          slight-noise images
//! <out>/level<m>/protected/<file>   protected images
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bgd::{make_bgd, scale_trigger, BgdParams};
use crate::denoiser::{load_checkpoint, save_checkpoint, train, TinyDenoiser, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::dtppm::{grade, levels_from_steps, verify_ordering, OrderingReport};
use crate::io::{self, layout, DatasetManifest, ManifestImage, MANIFEST_VERSION};
use crate::metrics::{evaluate as evaluate_pairs, MetricReport};
use crate::parallel::Parallelism;
use crate::pipeline::{image_seeds, protect_dataset, restore_dataset, sample_dataset};
use crate::sampler::SamplerConfig;
use crate::schedule::{ScheduleParams, VarianceSchedule};
use crate::tensor::{ImageTensor, Shape};

/// Reads a trigger image and min-max scales its raw pixels onto `[-1, 1]`.
pub fn load_trigger(path: &Path) -> Result<ImageTensor> {
    scale_trigger(&io::read_image(path)?)
}

fn trigger_for(path: &Path, shape: Shape, gamma: f64) -> Result<BgdParams> {
    let trigger = load_trigger(path)?;
    if trigger.shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: shape,
            actual: trigger.shape(),
        });
    }
    make_bgd(trigger, gamma)
}

fn load_model(path: &Path, shape: Shape) -> Result<TinyDenoiser> {
    let model = load_checkpoint(path)?;
    if model.shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: shape,
            actual: model.shape(),
        });
    }
    Ok(model)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone)]
pub struct TrainJob {
    pub data_dir: PathBuf,
    pub trigger: PathBuf,
    pub checkpoint: PathBuf,
    /// CSV of `iteration,loss`; skipped when `None`.
    pub loss_log: Option<PathBuf>,
    pub schedule: ScheduleParams,
    pub gamma: f64,
    pub hidden: usize,
    pub config: TrainConfig,
}

pub fn run_train(job: &TrainJob) -> Result<TrainReport> {
    let data = io::load_dataset(&job.data_dir)?;
    let shape = data.images[0].shape();
    let bgd = trigger_for(&job.trigger, shape, job.gamma)?;
    let schedule = job.schedule.build()?;
    let model = TinyDenoiser::new(shape, job.hidden, job.config.seed)?;
    let (model, report) = train(model, &data.images, &job.config, &schedule, &bgd)?;
    save_checkpoint(&model, &job.checkpoint)?;
    if let Some(log) = &job.loss_log {
        let mut csv = String::from("iteration,loss\n");
        for (i, l) in report.losses.iter().enumerate() {
            writeln!(csv, "{},{l:e}", i + 1).expect("writing to a String");
        }
        std::fs::write(log, csv).map_err(|e| Error::io(log, e))?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct GradeJob {
    pub source_dir: PathBuf,
    pub out_dir: PathBuf,
    pub trigger: PathBuf,
    pub schedule: ScheduleParams,
    pub gamma: f64,
    pub noise_steps: Vec<usize>,
    pub seed: u64,
}

/// Writes `<out>/level<m>/sn/*` only; no model is involved.
pub fn run_grade(job: &GradeJob, parallelism: Parallelism) -> Result<OrderingReport> {
    let schedule = job.schedule.build()?;
    let levels = levels_from_steps(&job.noise_steps, &schedule)?;
    let data = io::load_dataset(&job.source_dir)?;
    let bgd = trigger_for(&job.trigger, data.images[0].shape(), job.gamma)?;
    let graded = grade(&data.images, &levels, &schedule, &bgd, job.seed, parallelism)?;
    for g in &graded {
        io::write_dataset(&layout::noisy_dir(&job.out_dir, g.level.level), &data.names, &g.images)?;
    }
    verify_ordering(&data.images, &graded)
}

#[derive(Debug, Clone)]
pub struct ProtectJob {
    pub source_dir: PathBuf,
    pub out_dir: PathBuf,
    pub trigger: PathBuf,
    pub checkpoint: PathBuf,
    pub schedule: ScheduleParams,
    pub gamma: f64,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl ProtectJob {
    /// Rebuilds the job recorded in a manifest, writing to `out_dir`.
    pub fn from_manifest(manifest: &DatasetManifest, out_dir: PathBuf, trigger: PathBuf, checkpoint: PathBuf) -> Self {
        Self {
            source_dir: PathBuf::from(&manifest.source_dir),
            out_dir,
            trigger,
            checkpoint,
            schedule: manifest.schedule,
            gamma: manifest.gamma,
            sampler: SamplerConfig {
                adverse_steps: manifest.adverse_steps,
                reverse_factor: manifest.reverse_factor,
                noise_steps: manifest.levels.iter().map(|l| l.noise_step).collect(),
            },
            seed: manifest.master_seed,
        }
    }
}

pub fn run_protect(job: &ProtectJob, parallelism: Parallelism) -> Result<DatasetManifest> {
    let schedule = job.schedule.build()?;
    job.sampler.validate(&schedule)?;
    let data = io::load_dataset(&job.source_dir)?;
    let shape = data.images[0].shape();
    let bgd = trigger_for(&job.trigger, shape, job.gamma)?;
    let model = load_model(&job.checkpoint, shape)?;
    let levels = protect_dataset(&data.images, &model, &schedule, &bgd, &job.sampler, job.seed, parallelism)?;

    for level in &levels {
        io::write_dataset(&layout::noisy_dir(&job.out_dir, level.level.level), &data.names, &level.noisy)?;
        io::write_dataset(&layout::protected_dir(&job.out_dir, level.level.level), &data.names, &level.protected)?;
    }
    let seeds = image_seeds(job.seed, data.images.len());
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        schedule: job.schedule,
        gamma: job.gamma,
        trigger_sha256: io::file_digest(&job.trigger)?,
        levels: levels.iter().map(|l| l.level).collect(),
        adverse_steps: job.sampler.adverse_steps,
        reverse_factor: job.sampler.reverse_factor,
        master_seed: job.seed,
        source_dir: job.source_dir.to_string_lossy().into_owned(),
        images: data
            .names
            .iter()
            .zip(seeds)
            .map(|(file, seed)| ManifestImage {
                file: file.clone(),
                seed,
            })
            .collect(),
    };
    io::write_manifest(&manifest, job.out_dir.join(layout::MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct RestoreJob {
    pub protected_dir: PathBuf,
    pub out_dir: PathBuf,
    pub trigger: PathBuf,
    pub checkpoint: PathBuf,
    /// Overrides for the manifest's adverse steps and reverse factor.
    pub adverse_steps: Option<usize>,
    pub reverse_factor: Option<f64>,
    /// Restrict to these levels; all levels when empty.
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestoreSummary {
    pub steps: usize,
    pub levels: Vec<usize>,
    pub images_per_level: usize,
}

/// Restores `<protected_dir>/level<m>/protected/*` into `<out_dir>/level<m>/`.
///
/// The trigger digest is checked against the manifest before anything else
/// is loaded.
pub fn run_restore(job: &RestoreJob, parallelism: Parallelism) -> Result<RestoreSummary> {
    let manifest = io::load_verified(&job.protected_dir, &job.trigger)?;
    let schedule = manifest.schedule.build()?;
    let config = SamplerConfig {
        adverse_steps: job.adverse_steps.unwrap_or(manifest.adverse_steps),
        reverse_factor: job.reverse_factor.unwrap_or(manifest.reverse_factor),
        noise_steps: manifest.levels.iter().map(|l| l.noise_step).collect(),
    };
    config.validate(&schedule)?;
    let levels: Vec<usize> = if job.levels.is_empty() {
        manifest.levels.iter().map(|l| l.level).collect()
    } else {
        for &l in &job.levels {
            config.noise_step(l)?;
        }
        job.levels.clone()
    };
    let names: Vec<String> = manifest.images.iter().map(|i| i.file.clone()).collect();
    let seeds: Vec<u64> = manifest.images.iter().map(|i| i.seed).collect();
    let mut model: Option<TinyDenoiser> = None;
    let mut bgd: Option<BgdParams> = None;
    for &level in &levels {
        let data = io::load_named(&layout::protected_dir(&job.protected_dir, level), names.clone())?;
        let shape = data.images[0].shape();
        if model.is_none() {
            model = Some(load_model(&job.checkpoint, shape)?);
            bgd = Some(trigger_for(&job.trigger, shape, manifest.gamma)?);
        }
        let (model, bgd) = (model.as_ref().expect("set"), bgd.as_ref().expect("set"));
        let restored = restore_dataset(&data.images, level, &seeds, model, &schedule, bgd, &config, parallelism)?;
        io::write_dataset(&layout::level_dir(&job.out_dir, level), &names, &restored)?;
    }
    Ok(RestoreSummary {
        steps: config.restore_steps(),
        levels,
        images_per_level: names.len(),
    })
}

#[derive(Debug, Clone)]
pub struct SampleJob {
    pub out_dir: PathBuf,
    pub trigger: PathBuf,
    pub checkpoint: PathBuf,
    pub schedule: ScheduleParams,
    pub gamma: f64,
    pub count: usize,
    pub seed: u64,
}

/// Writes `sample_0000.pgm`, ... and returns `(file, seed)` per sample.
pub fn run_sample(job: &SampleJob, parallelism: Parallelism) -> Result<Vec<(String, u64)>> {
    let model = load_checkpoint(&job.checkpoint)?;
    let bgd = trigger_for(&job.trigger, model.shape(), job.gamma)?;
    let schedule: VarianceSchedule = job.schedule.build()?;
    let samples = sample_dataset(job.count, &model, &schedule, &bgd, job.seed, parallelism)?;
    let ext = if model.shape().channels == 3 { "ppm" } else { "pgm" };
    let names: Vec<String> = (0..job.count).map(|i| format!("sample_{i:04}.{ext}")).collect();
    ensure_dir(&job.out_dir)?;
    io::write_dataset(&job.out_dir, &names, &samples)?;
    Ok(names.into_iter().zip(image_seeds(job.seed, job.count)).collect())
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub names: Vec<String>,
    pub report: MetricReport,
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl Evaluation {
    /// `file,mse,psnr,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("file,mse,psnr,ssim\n");
        let rows = self.names.iter().map(String::as_str).zip(&self.report.rows);
        for (name, r) in rows.chain(std::iter::once(("mean", &self.report.mean))) {
            writeln!(out, "{name},{},{},{}", fmt_metric(r.mse), fmt_metric(r.psnr), fmt_metric(r.ssim))
                .expect("writing to a String");
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "{} pairs: mean MSE {}, mean PSNR {} dB, mean SSIM {}",
            self.names.len(),
            fmt_metric(self.report.mean.mse),
            fmt_metric(self.report.mean.psnr),
            fmt_metric(self.report.mean.ssim)
        )
    }
}

/// Compares two directories holding the same file names.
pub fn run_evaluate(reference: &Path, candidate: &Path, parallelism: Parallelism) -> Result<Evaluation> {
    let names = io::list_images(reference)?;
    let other = io::list_images(candidate)?;
    if names != other {
        return Err(Error::Misaligned(format!(
            "{} holds {} images, {} holds {}, or the names differ",
            reference.display(),
            names.len(),
            candidate.display(),
            other.len()
        )));
    }
    let a = io::load_named(reference, names.clone())?;
    let b = io::load_named(candidate, names.clone())?;
    let report = evaluate_pairs(&a.images, &b.images, parallelism)?;
    Ok(Evaluation { names, report })
}
