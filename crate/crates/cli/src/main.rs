use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use raediff::bgd::DEFAULT_GAMMA;
use raediff::denoiser::{OptimizerKind, DEFAULT_HIDDEN};
use raediff::io::{layout, read_manifest};
use raediff::sampler::{DEFAULT_ADVERSE_STEPS, DEFAULT_NOISE_STEPS, DEFAULT_REVERSE_FACTOR};
use raediff::workflow::{
    run_evaluate, run_grade, run_protect, run_restore, run_sample, run_train, GradeJob, ProtectJob, RestoreJob,
    SampleJob, TrainJob,
};
use raediff::{Error, Parallelism, SamplerConfig, ScheduleParams, TrainConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "raediff", version, about = "Reversible dataset protection with a trigger-biased diffusion model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the noise predictor on a directory of images.
    Train(TrainArgs),
    /// Write slightly noised copies of a dataset, one directory per level.
    Grade(GradeArgs),
    /// Write slight-noise and protected images for every level, plus a manifest.
    Protect(ProtectArgs),
    /// Re-run a protection from its manifest.
    Replay(ReplayArgs),
    /// Restore protected images. The trigger must match the manifest digest.
    Restore(RestoreArgs),
    /// Generate images from the biased prior.
    Sample(SampleArgs),
    /// Per-image MSE / PSNR / SSIM between two directories.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug, Clone)]
struct ScheduleArgs {
    /// Number of diffusion timesteps T.
    #[arg(long, default_value_t = 1000)]
    timesteps: usize,
    #[arg(long, default_value_t = 1e-4)]
    beta_min: f64,
    #[arg(long, default_value_t = 0.02)]
    beta_max: f64,
    /// Variance scale of the biased terminal distribution.
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
}

impl ScheduleArgs {
    fn params(&self) -> ScheduleParams {
        ScheduleParams {
            timesteps: self.timesteps,
            beta_min: self.beta_min,
            beta_max: self.beta_max,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory of clean PGM/PPM images.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    trigger: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Loss log CSV; defaults to the checkpoint path with a `.loss.csv` extension.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value_t = 40_000)]
    iterations: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = Optimizer::Adam)]
    optimizer: Optimizer,
    /// Gradient norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    /// Hidden width of the MLP.
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GradeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trigger: PathBuf,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Slight-noise timestep per level, level 1 first.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_NOISE_STEPS)]
    levels: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ProtectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trigger: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Adverse timestep: number of adversarial reverse steps.
    #[arg(long = "t-r", default_value_t = DEFAULT_ADVERSE_STEPS)]
    t_r: usize,
    /// Reverse factor recorded for restoration.
    #[arg(long, default_value_t = DEFAULT_REVERSE_FACTOR)]
    eta: f64,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_NOISE_STEPS)]
    levels: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Directory holding the manifest of the original run.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trigger: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug)]
struct RestoreArgs {
    /// Protected dataset directory (with manifest).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trigger: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Overrides the manifest's adverse timestep.
    #[arg(long = "t-r")]
    t_r: Option<usize>,
    /// Overrides the manifest's reverse factor.
    #[arg(long)]
    eta: Option<f64>,
    /// Restore only these permission levels.
    #[arg(long, value_delimiter = ',')]
    level: Vec<usize>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trigger: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Reference directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Directory compared against the reference.
    #[arg(long)]
    against: PathBuf,
    /// CSV report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        e if e.is_numerical() => EXIT_NUMERICAL,
        Error::InvalidParameter(_) | Error::InvalidSchedule(_) | Error::TimestepOutOfRange { .. } => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("RAEDIFF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("RAEDIFF_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("could not configure {n} worker threads: {e}"))
}

fn write_text(path: &Path, text: &str) -> raediff::Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn train(args: TrainArgs) -> raediff::Result<()> {
    let config = TrainConfig {
        iterations: args.iterations,
        batch_size: args.batch,
        learning_rate: args.lr,
        seed: args.seed,
        optimizer: match args.optimizer {
            Optimizer::Adam => OptimizerKind::Adam,
            Optimizer::Sgd => OptimizerKind::Sgd,
        },
        clip_norm: (args.clip > 0.0).then_some(args.clip),
    };
    let loss_log = args
        .loss_log
        .unwrap_or_else(|| args.checkpoint.with_extension("loss.csv"));
    let job = TrainJob {
        data_dir: args.input,
        trigger: args.trigger,
        checkpoint: args.checkpoint,
        loss_log: Some(loss_log.clone()),
        schedule: args.schedule.params(),
        gamma: args.schedule.gamma,
        hidden: args.hidden,
        config,
    };
    let report = run_train(&job)?;
    match report.final_average(500.min(report.losses.len().max(1))) {
        Some(avg) => eprintln!("trained {} iterations, final running loss {avg:.6}", report.losses.len()),
        None => eprintln!("0 iterations, wrote initial parameters"),
    }
    eprintln!("checkpoint: {}", job.checkpoint.display());
    eprintln!("loss log: {}", loss_log.display());
    Ok(())
}

fn grade(args: GradeArgs, par: Parallelism) -> raediff::Result<()> {
    let job = GradeJob {
        source_dir: args.input,
        out_dir: args.out,
        trigger: args.trigger,
        schedule: args.schedule.params(),
        gamma: args.schedule.gamma,
        noise_steps: args.levels,
        seed: args.seed,
    };
    let report = run_grade(&job, par)?;
    println!("ordering {report}");
    Ok(())
}

fn report_protection(manifest: &raediff::io::DatasetManifest, out: &Path) {
    for level in &manifest.levels {
        eprintln!(
            "level {} (t_sn = {}): {}",
            level.level,
            level.noise_step,
            layout::protected_dir(out, level.level).display()
        );
    }
    eprintln!("manifest: {}", out.join(layout::MANIFEST_FILE).display());
}

fn protect(args: ProtectArgs, par: Parallelism) -> raediff::Result<()> {
    let job = ProtectJob {
        source_dir: args.input,
        out_dir: args.out,
        trigger: args.trigger,
        checkpoint: args.checkpoint,
        schedule: args.schedule.params(),
        gamma: args.schedule.gamma,
        sampler: SamplerConfig {
            adverse_steps: args.t_r,
            reverse_factor: args.eta,
            noise_steps: args.levels,
        },
        seed: args.seed,
    };
    let manifest = run_protect(&job, par)?;
    eprintln!("protected {} images with {} adversarial steps", manifest.images.len(), job.sampler.adverse_steps);
    report_protection(&manifest, &job.out_dir);
    Ok(())
}

fn replay(args: ReplayArgs, par: Parallelism) -> raediff::Result<()> {
    let recorded = read_manifest(args.input.join(layout::MANIFEST_FILE))?;
    recorded.verify_trigger(&args.trigger)?;
    let job = ProtectJob::from_manifest(&recorded, args.out, args.trigger, args.checkpoint);
    let manifest = run_protect(&job, par)?;
    report_protection(&manifest, &job.out_dir);
    Ok(())
}

fn restore(args: RestoreArgs, par: Parallelism) -> raediff::Result<()> {
    let job = RestoreJob {
        protected_dir: args.input,
        out_dir: args.out,
        trigger: args.trigger,
        checkpoint: args.checkpoint,
        adverse_steps: args.t_r,
        reverse_factor: args.eta,
        levels: args.level,
    };
    let summary = run_restore(&job, par)?;
    eprintln!("restored with {} reverse steps per image", summary.steps);
    for level in &summary.levels {
        eprintln!(
            "level {level}: {} images -> {}",
            summary.images_per_level,
            layout::level_dir(&job.out_dir, *level).display()
        );
    }
    Ok(())
}

fn sample(args: SampleArgs, par: Parallelism) -> raediff::Result<()> {
    let job = SampleJob {
        out_dir: args.out,
        trigger: args.trigger,
        checkpoint: args.checkpoint,
        schedule: args.schedule.params(),
        gamma: args.schedule.gamma,
        count: args.count,
        seed: args.seed,
    };
    for (file, seed) in run_sample(&job, par)? {
        println!("{file} seed={seed}");
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs, par: Parallelism) -> raediff::Result<()> {
    let eval = run_evaluate(&args.input, &args.against, par)?;
    let csv = eval.to_csv();
    match &args.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    eprintln!("{}", eval.summary());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    let par = Parallelism::default();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Grade(a) => grade(a, par),
        Command::Protect(a) => protect(a, par),
        Command::Replay(a) => replay(a, par),
        Command::Restore(a) => restore(a, par),
        Command::Sample(a) => sample(a, par),
        Command::Evaluate(a) => evaluate(a, par),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
