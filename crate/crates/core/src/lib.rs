//! Reversible dataset protection with a trigger-biased diffusion model.
//!
//! A denoising diffusion model is trained so that its terminal distribution
//! is `N((1 - gamma) * trigger, gamma^2 I)` instead of `N(0, I)`. Clean images
//! are lightly diffused (one level per permission grade), pushed away from
//! their content by an adversarial reverse process, and can later be restored
//! by anyone holding the same model and trigger.
//!
//! Module map:
//!
//! - [`schedule`]: variance schedule and bias coefficients
//! - [`bgd`]: trigger scaling and the biased forward process
//! - [`denoiser`]: noise predictor interface, reference MLP, training, checkpoints
//! - [`sampler`]: posterior, standard and adversarial reverse steps, restoration
//! - [`dtppm`]: permission-level grading and ordering checks
//! - [`metrics`]: MSE, PSNR, SSIM
//! - [`io`]: PGM/PPM, manifests, dataset directories
//! - [`pipeline`]: dataset-level protect / restore / sample
//! - [`workflow`]: the same operations over files and directories

pub mod bgd;
pub mod denoiser;
pub mod dtppm;
pub mod error;
pub mod io;
pub mod metrics;
pub mod parallel;
pub mod pipeline;
pub mod sampler;
pub mod schedule;
pub mod seed;
pub mod tensor;
pub mod toy;
pub mod workflow;

pub use bgd::{make_bgd, scale_trigger, BgdParams};
pub use denoiser::{NoisePredictor, TinyDenoiser, TrainConfig};
pub use error::{Error, Result};
pub use parallel::Parallelism;
pub use sampler::SamplerConfig;
pub use schedule::{linear_beta_schedule, ScheduleParams, VarianceSchedule};
pub use tensor::{ImageTensor, Shape};
