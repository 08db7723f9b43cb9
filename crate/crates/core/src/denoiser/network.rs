use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{ImageTensor, Shape};

use super::NoisePredictor;

/// Width of the sinusoidal timestep embedding.
pub const TIME_EMBED_DIM: usize = 16;

/// Default width of both hidden layers.
pub const DEFAULT_HIDDEN: usize = 256;

/// Sinusoidal embedding: `[sin(t f_0), .., sin(t f_{h-1}), cos(t f_0), .., cos(t f_{h-1})]`
/// with `f_i = 10000^(-i / h)` and `h = dim / 2`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Fully connected layer; `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-bound..=bound));
        let bias = Array1::from_shape_fn(outputs, |_| rng.random_range(-bound..=bound));
        Self { weights, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    fn forward(&self, input: ArrayView2<'_, f64>) -> Array2<f64> {
        input.dot(&self.weights.t()) + &self.bias
    }
}

/// Small MLP noise predictor: `[x_t, emb(t)] -> hidden -> hidden -> eps`,
/// SiLU between layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyDenoiser {
    shape: Shape,
    embed_dim: usize,
    layers: Vec<Dense>,
}

/// Per-layer parameter gradients, laid out like [`TinyDenoiser`]'s layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Dense>,
}

impl Gradient {
    /// Flattened in parameter order: per layer, weights row-major then bias.
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }
}

/// Activations kept from a batched forward pass for backpropagation.
struct ForwardCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl TinyDenoiser {
    /// Two hidden layers of width `hidden`, initialised uniformly in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from `seed`.
    pub fn new(shape: Shape, hidden: usize, seed: u64) -> Result<Self> {
        if shape.is_empty() || hidden == 0 {
            return Err(Error::InvalidParameter(
                "denoiser needs a non-empty image shape and hidden width".into(),
            ));
        }
        let mut rng = seed::rng(seed);
        let d = shape.len();
        let layers = vec![
            Dense::uniform(d + TIME_EMBED_DIM, hidden, &mut rng),
            Dense::uniform(hidden, hidden, &mut rng),
            Dense::uniform(hidden, d, &mut rng),
        ];
        Ok(Self {
            shape,
            embed_dim: TIME_EMBED_DIM,
            layers,
        })
    }

    /// Assembles a model from explicit layers, checking that they chain.
    pub fn from_layers(shape: Shape, embed_dim: usize, layers: Vec<Dense>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::DimensionMismatch("no layers".into()))?;
        if first.inputs() != shape.len() + embed_dim {
            return Err(Error::DimensionMismatch(format!(
                "first layer takes {} inputs, image {shape} plus embedding {embed_dim} needs {}",
                first.inputs(),
                shape.len() + embed_dim
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} emits {} values but layer {} takes {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::DimensionMismatch(format!("layer {i} bias length")));
            }
        }
        let last = layers.last().expect("non-empty");
        if last.outputs() != shape.len() {
            return Err(Error::DimensionMismatch(format!(
                "last layer emits {} values, image {shape} needs {}",
                last.outputs(),
                shape.len()
            )));
        }
        Ok(Self {
            shape,
            embed_dim,
            layers,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_flat_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *p = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .all(|p| p.is_finite())
    }

    fn input_matrix(&self, states: &[&ImageTensor], timesteps: &[usize]) -> Result<Array2<f64>> {
        let d = self.shape.len();
        let mut input = Array2::zeros((states.len(), d + self.embed_dim));
        for (row, (x, &t)) in states.iter().zip(timesteps).enumerate() {
            if x.shape() != self.shape {
                return Err(Error::ShapeMismatch {
                    expected: self.shape,
                    actual: x.shape(),
                });
            }
            let mut r = input.row_mut(row);
            r.slice_mut(s![..d])
                .iter_mut()
                .zip(x.as_slice())
                .for_each(|(dst, &v)| *dst = v);
            r.slice_mut(s![d..])
                .iter_mut()
                .zip(timestep_embedding(t, self.embed_dim))
                .for_each(|(dst, v)| *dst = v);
        }
        Ok(input)
    }

    fn forward_cached(&self, input: Array2<f64>) -> ForwardCache {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n - 1);
        let mut current = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(current.view());
            inputs.push(current);
            if i + 1 == n {
                return ForwardCache {
                    inputs,
                    pre,
                    output: z,
                };
            }
            current = z.mapv(silu);
            pre.push(z);
        }
        unreachable!("at least one layer")
    }

    /// Predicted noise for a batch of `(x_t, t)` pairs, one row per sample.
    pub fn predict_batch(&self, states: &[&ImageTensor], timesteps: &[usize]) -> Result<Array2<f64>> {
        let mut current = self.input_matrix(states, timesteps)?;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            current = layer.forward(current.view());
            if i + 1 < n {
                current.mapv_inplace(silu);
            }
        }
        Ok(current)
    }

    /// Mean squared error between predictions and `targets` over every
    /// element of the batch, and its gradient w.r.t. all parameters.
    pub fn loss_and_gradient(
        &self,
        states: &[&ImageTensor],
        timesteps: &[usize],
        targets: &[&ImageTensor],
    ) -> Result<(f64, Gradient)> {
        if states.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if states.len() != timesteps.len() || states.len() != targets.len() {
            return Err(Error::Misaligned("batch components differ in length".into()));
        }
        let input = self.input_matrix(states, timesteps)?;
        let cache = self.forward_cached(input);
        let d = self.shape.len();
        let mut residual = cache.output;
        for (mut row, target) in residual.axis_iter_mut(Axis(0)).zip(targets) {
            if target.shape() != self.shape {
                return Err(Error::ShapeMismatch {
                    expected: self.shape,
                    actual: target.shape(),
                });
            }
            row.iter_mut()
                .zip(target.as_slice())
                .for_each(|(p, &e)| *p -= e);
        }
        let count = (states.len() * d) as f64;
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / count;

        let mut delta = residual * (2.0 / count);
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let weights = delta.t().dot(&cache.inputs[i]);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Dense { weights, bias });
            if i > 0 {
                let mut back = delta.dot(&layer.weights);
                back.zip_mut_with(&cache.pre[i - 1], |g, &z| *g *= silu_grad(z));
                delta = back;
            }
        }
        grads.reverse();
        Ok((loss, Gradient { layers: grads }))
    }
}

impl NoisePredictor for TinyDenoiser {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn predict(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        let out = self.predict_batch(&[x_t], &[t])?;
        ImageTensor::new(self.shape, out.into_raw_vec_and_offset().0)
    }
}
