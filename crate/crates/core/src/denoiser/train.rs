use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bgd::{forward_diffuse, BgdParams};
use crate::error::{Error, Result};
use crate::schedule::VarianceSchedule;
use crate::seed;
use crate::tensor::ImageTensor;

use super::network::{Gradient, TinyDenoiser};

/// Domain separator for the training stream ("TRAN").
const TRAIN_DOMAIN: u64 = 0x5452_414E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 40_000,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidParameter(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// One minibatch of `(x0, t, eps)` triples with `t ~ Uniform{1..T}`.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub indices: Vec<usize>,
    pub timesteps: Vec<usize>,
    pub noise: Vec<ImageTensor>,
}

impl TrainingBatch {
    pub fn draw<R: Rng + ?Sized>(
        dataset: &[ImageTensor],
        batch_size: usize,
        schedule: &VarianceSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Empty("training dataset"));
        }
        let shape = dataset[0].shape();
        let mut indices = Vec::with_capacity(batch_size);
        let mut timesteps = Vec::with_capacity(batch_size);
        let mut noise = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            indices.push(rng.random_range(0..dataset.len()));
            timesteps.push(rng.random_range(1..=schedule.timesteps()));
            noise.push(ImageTensor::standard_normal(shape, rng));
        }
        Ok(Self {
            indices,
            timesteps,
            noise,
        })
    }
}

/// Batch loss and its analytic parameter gradient.
pub fn gradient(
    model: &TinyDenoiser,
    dataset: &[ImageTensor],
    batch: &TrainingBatch,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
) -> Result<(f64, Gradient)> {
    let states = batch
        .indices
        .iter()
        .zip(&batch.timesteps)
        .zip(&batch.noise)
        .map(|((&i, &t), eps)| {
            let x0 = dataset
                .get(i)
                .ok_or_else(|| Error::Misaligned(format!("batch index {i} outside dataset")))?;
            forward_diffuse(x0, t, eps, schedule, bgd)
        })
        .collect::<Result<Vec<_>>>()?;
    let state_refs: Vec<&ImageTensor> = states.iter().collect();
    let noise_refs: Vec<&ImageTensor> = batch.noise.iter().collect();
    model.loss_and_gradient(&state_refs, &batch.timesteps, &noise_refs)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Batch loss at every iteration.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Trailing mean over `window` iterations, one value per iteration.
    pub fn running_average(&self, window: usize) -> Vec<f64> {
        let window = window.max(1);
        let mut out = Vec::with_capacity(self.losses.len());
        let mut acc = 0.0;
        for (i, &l) in self.losses.iter().enumerate() {
            acc += l;
            if i >= window {
                acc -= self.losses[i - window];
            }
            out.push(acc / (i + 1).min(window) as f64);
        }
        out
    }

    pub fn final_average(&self, window: usize) -> Option<f64> {
        self.running_average(window).last().copied()
    }
}

enum OptimizerState {
    Sgd,
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        step: i32,
    },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    fn new(kind: OptimizerKind, params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam {
                m: vec![0.0; params],
                v: vec![0.0; params],
                step: 0,
            },
        }
    }

    fn apply(&mut self, model: &mut TinyDenoiser, grad: &Gradient, lr: f64) {
        let params = model
            .layers_mut()
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()));
        let grads = grad
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()));
        match self {
            OptimizerState::Sgd => {
                for (p, g) in params.zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerState::Adam { m, v, step } => {
                *step += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*step);
                let c2 = 1.0 - ADAM_BETA2.powi(*step);
                for (((p, g), m), v) in params.zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Gradient descent on the biased simple loss. Deterministic given `config.seed`.
pub fn train(
    mut model: TinyDenoiser,
    dataset: &[ImageTensor],
    config: &TrainConfig,
    schedule: &VarianceSchedule,
    bgd: &BgdParams,
) -> Result<(TinyDenoiser, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    for image in dataset {
        if image.shape() != model.shape() {
            return Err(Error::ShapeMismatch {
                expected: model.shape(),
                actual: image.shape(),
            });
        }
    }
    if bgd.shape() != model.shape() {
        return Err(Error::ShapeMismatch {
            expected: model.shape(),
            actual: bgd.shape(),
        });
    }

    let mut rng = seed::rng(seed::mix(config.seed, TRAIN_DOMAIN));
    let mut optimizer = OptimizerState::new(config.optimizer, model.num_parameters());
    let mut report = TrainReport {
        losses: Vec::with_capacity(config.iterations),
    };
    for iteration in 0..config.iterations {
        let batch = TrainingBatch::draw(dataset, config.batch_size, schedule, &mut rng)?;
        let (loss, mut grad) = gradient(&model, dataset, &batch, schedule, bgd)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss is {loss} at iteration {iteration}"
            )));
        }
        if let Some(limit) = config.clip_norm {
            let norm = grad.norm();
            if norm > limit {
                grad.scale(limit / norm);
            }
        }
        optimizer.apply(&mut model, &grad, config.learning_rate);
        report.losses.push(loss);
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("parameters diverged during training".into()));
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bgd::make_bgd;
    use crate::schedule::linear_beta_schedule;
    use crate::tensor::Shape;

    fn toy() -> (Vec<ImageTensor>, VarianceSchedule, BgdParams) {
        let shape = Shape::new(2, 2, 1);
        let data = vec![
            ImageTensor::new(shape, vec![1.0, -1.0, -1.0, 1.0]).unwrap(),
            ImageTensor::new(shape, vec![-1.0, 1.0, 1.0, -1.0]).unwrap(),
        ];
        let s = linear_beta_schedule(100, 1e-4, 0.02).unwrap();
        let bgd = make_bgd(ImageTensor::filled(shape, 0.5), 0.6).unwrap();
        (data, s, bgd)
    }

    #[test]
    fn zero_iterations_is_identity() {
        let (data, s, bgd) = toy();
        let model = TinyDenoiser::new(data[0].shape(), 8, 1).unwrap();
        let config = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let (trained, report) = train(model.clone(), &data, &config, &s, &bgd).unwrap();
        assert_eq!(trained, model);
        assert!(report.losses.is_empty());
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let (data, s, bgd) = toy();
        let model = TinyDenoiser::new(data[0].shape(), 8, 1).unwrap();
        for optimizer in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let config = TrainConfig {
                iterations: 50,
                batch_size: 4,
                optimizer,
                ..TrainConfig::default()
            };
            let (a, ra) = train(model.clone(), &data, &config, &s, &bgd).unwrap();
            let (b, rb) = train(model.clone(), &data, &config, &s, &bgd).unwrap();
            assert_eq!(a, b);
            assert_eq!(ra, rb);
            assert_ne!(a, model);
        }
    }

    #[test]
    fn short_run_reduces_loss() {
        let (data, s, bgd) = toy();
        let model = TinyDenoiser::new(data[0].shape(), 32, 1).unwrap();
        let config = TrainConfig {
            iterations: 3000,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (_, report) = train(model, &data, &config, &s, &bgd).unwrap();
        let avg = report.running_average(200);
        assert!(avg[2999] < 0.5 * avg[199], "{} vs {}", avg[2999], avg[199]);
    }

    #[test]
    fn rejects_bad_configs_and_data() {
        let (data, s, bgd) = toy();
        let model = TinyDenoiser::new(data[0].shape(), 8, 1).unwrap();
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(train(model.clone(), &data, &bad, &s, &bgd).is_err());
        assert!(train(model.clone(), &[], &TrainConfig::default(), &s, &bgd).is_err());
        let odd = vec![ImageTensor::zeros(Shape::new(3, 3, 1))];
        assert!(train(model, &odd, &TrainConfig::default(), &s, &bgd).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let (data, s, bgd) = toy();
        let model = TinyDenoiser::new(data[0].shape(), 8, 1).unwrap();
        let config = TrainConfig {
            iterations: 200,
            batch_size: 4,
            learning_rate: 1e200,
            optimizer: OptimizerKind::Sgd,
            clip_norm: None,
            seed: 0,
        };
        let err = train(model, &data, &config, &s, &bgd).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn running_average_window() {
        let r = TrainReport {
            losses: vec![4.0, 2.0, 0.0, 2.0],
        };
        assert_eq!(r.running_average(2), vec![4.0, 3.0, 1.0, 1.0]);
        assert_eq!(r.final_average(10), Some(2.0));
    }
}
