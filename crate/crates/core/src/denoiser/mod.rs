//! Noise prediction and training under the biased forward process.

mod checkpoint;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{timestep_embedding, Dense, Gradient, TinyDenoiser, DEFAULT_HIDDEN, TIME_EMBED_DIM};
pub use train::{gradient, train, OptimizerKind, TrainConfig, TrainReport, TrainingBatch};

use crate::bgd::{forward_diffuse, BgdParams};
use crate::error::Result;
use crate::schedule::VarianceSchedule;
use crate::tensor::{ImageTensor, Shape};

/// Anything that estimates the noise `eps` contained in `x_t` at step `t`.
///
/// Implementations must be deterministic and shape-preserving.
pub trait NoisePredictor: Sync {
    fn shape(&self) -> Shape;

    fn predict(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn shape(&self) -> Shape {
        (**self).shape()
    }

    fn predict(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        (**self).predict(x_t, t)
    }
}

/// Training objective for one sample: `MSE(eps, predictor(forward_diffuse(x0, t, eps), t))`.
pub fn bgd_loss<P: NoisePredictor + ?Sized>(
    predictor: &P,
    x0: &ImageTensor,
    t: usize,
    eps: &ImageTensor,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
) -> Result<f64> {
    let x_t = forward_diffuse(x0, t, eps, schedule, bgd)?;
    let predicted = predictor.predict(&x_t, t)?;
    predicted.ensure_same_shape(eps)?;
    let sum: f64 = predicted
        .as_slice()
        .iter()
        .zip(eps.as_slice())
        .map(|(p, e)| (e - p) * (e - p))
        .sum();
    Ok(sum / eps.len() as f64)
}
