//! Multilayer perceptrons with hand-written backpropagation.
//!
//! A model is an ordered stack of [`Layer`]s. In training mode `forward` caches
//! what `backward` needs; `backward` consumes those caches, writes parameter
//! gradients and returns the gradient with respect to the input.

mod adam;
mod frozen;
mod io;
mod layers;

pub use adam::{Adam, LrSchedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use frozen::FrozenEncoder;
pub use io::{load_model, load_model_expecting, save_model};
pub use layers::{BatchNorm, Layer, L2Norm, Linear, Relu, BN_EPS, BN_MOMENTUM, L2_EPS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Most hidden layers an encoder may have.
pub const MAX_HIDDEN_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Anything with trainable parameters and matching gradient buffers.
pub trait Parameterized {
    /// Calls `f(parameter, gradient)` for every parameter tensor, always in the same order.
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64]));
}

impl Parameterized for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        f(self.weight.data_mut(), self.grad_weight.data());
        f(&mut self.bias, &self.grad_bias);
    }
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
    mode: Mode,
}

impl MlpModel {
    /// Builds `[linear → relu → batchnorm] × hidden → linear(output)`, with a final
    /// ℓ2 normalization when `normalize_output` is set. Weights are Glorot-uniform
    /// from `seed`.
    pub fn build(
        input_dim: usize,
        output_dim: usize,
        hidden: &[usize],
        normalize_output: bool,
        seed: u64,
    ) -> Result<MlpModel> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::config("layer widths must be at least 1"));
        }
        if hidden.len() > MAX_HIDDEN_LAYERS {
            return Err(Error::config(format!(
                "at most {MAX_HIDDEN_LAYERS} hidden layers are supported, got {}",
                hidden.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &h in hidden {
            layers.push(Layer::Linear(Linear::glorot(width, h, &mut rng)));
            layers.push(Layer::Relu(Relu::default()));
            layers.push(Layer::BatchNorm(BatchNorm::new(h)));
            width = h;
        }
        layers.push(Layer::Linear(Linear::glorot(width, output_dim, &mut rng)));
        if normalize_output {
            layers.push(Layer::L2Norm(L2Norm::default()));
        }
        Ok(MlpModel {
            layers,
            input_dim,
            output_dim,
            mode: Mode::Train,
        })
    }

    /// Assembles a model from explicit layers, checking that widths chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<MlpModel> {
        let mut width: Option<usize> = None;
        let mut input_dim = None;
        for (i, layer) in layers.iter().enumerate() {
            let (fan_in, fan_out) = match layer {
                Layer::Linear(l) => (Some(l.fan_in()), Some(l.fan_out())),
                Layer::BatchNorm(b) => (Some(b.width()), Some(b.width())),
                Layer::Relu(_) | Layer::L2Norm(_) => (None, None),
            };
            if let (Some(w), Some(fi)) = (width, fan_in) {
                if w != fi {
                    return Err(Error::shape(format!(
                        "layer {i} ({}) expects width {fi}, previous layer produces {w}",
                        layer.kind()
                    )));
                }
            }
            if input_dim.is_none() {
                input_dim = fan_in;
            }
            if fan_out.is_some() {
                width = fan_out;
            }
        }
        match (input_dim, width) {
            (Some(i), Some(o)) => Ok(MlpModel {
                layers,
                input_dim: i,
                output_dim: o,
                mode: Mode::Train,
            }),
            _ => Err(Error::config("a model needs at least one linear layer")),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        if mode == Mode::Eval {
            self.clear_caches();
        }
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        let linears: Vec<usize> = self
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Linear(l) => Some(l.fan_out()),
                _ => None,
            })
            .collect();
        linears[..linears.len().saturating_sub(1)].to_vec()
    }

    pub fn normalizes_output(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::L2Norm(_)))
    }

    fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    /// Number of trainable scalars (batchnorm running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Linear(l) => l.weight.data().len() + l.bias.len(),
                Layer::BatchNorm(b) => 2 * b.width(),
                _ => 0,
            })
            .sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::shape(format!(
                "model expects input dimension {}, got {}",
                self.input_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    /// Runs the stack in the current mode. Training mode caches activations for
    /// [`MlpModel::backward`] and updates batchnorm running statistics.
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        match self.mode {
            Mode::Eval => {
                self.clear_caches();
                self.infer(x)
            }
            Mode::Train => {
                if x.rows() < 2 && self.has_batchnorm() {
                    return Err(Error::config(
                        "training-mode forward with batchnorm needs a batch of at least 2",
                    ));
                }
                let mut h = x.clone();
                for layer in &mut self.layers {
                    h = layer.forward_train(&h)?;
                }
                Ok(h)
            }
        }
    }

    /// Evaluation-mode forward pass (running statistics, no caching) regardless
    /// of the current mode.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Backpropagates `upstream` (∂loss/∂output) through the cached forward pass,
    /// overwriting every parameter gradient, and returns ∂loss/∂input.
    pub fn backward(&mut self, upstream: &Matrix) -> Result<Matrix> {
        if upstream.cols() != self.output_dim {
            return Err(Error::shape(format!(
                "upstream gradient has {} columns, model output has {}",
                upstream.cols(),
                self.output_dim
            )));
        }
        if self.mode != Mode::Train {
            return Err(Error::State("backward requires a training-mode forward pass".into()));
        }
        let mut g = upstream.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// True when every parameter and running statistic is finite.
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| match l {
            Layer::Linear(l) => l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()),
            Layer::BatchNorm(b) => [&b.gamma, &b.beta, &b.running_mean, &b.running_var]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite())),
            _ => true,
        })
    }
}

impl Parameterized for MlpModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        for layer in &mut self.layers {
            layer.visit_params(f);
        }
    }
}

/// Encoder: hidden blocks, a linear projection to `output_dim`, then ℓ2 normalization.
pub fn build_encoder(input_dim: usize, output_dim: usize, hidden: &[usize], seed: u64) -> Result<MlpModel> {
    MlpModel::build(input_dim, output_dim, hidden, true, seed)
}

/// Decoder mirroring an encoder: hidden sizes reversed, linear output, no normalization.
pub fn build_decoder(
    embedding_dim: usize,
    output_dim: usize,
    encoder_hidden: &[usize],
    seed: u64,
) -> Result<MlpModel> {
    let hidden: Vec<usize> = encoder_hidden.iter().rev().copied().collect();
    MlpModel::build(embedding_dim, output_dim, &hidden, false, seed)
}
