//! Minimal convolutional-network stack: explicit forward/backward per layer,
//! sequential composition, Adam updates. Everything is generic over the
//! scalar so finite-difference checks can run the same code in f64.

mod act;
mod adam;
mod conv;
mod dense;
mod loss;
mod norm;

pub use act::{LeakyRelu, MaxPool2d, Relu, Sigmoid, Tanh, UnitSphere, UnitTanh};
pub use adam::Adam;
pub use conv::{Conv2d, ConvTranspose2d};
pub use dense::{Dropout, Linear, Reshape};
pub use loss::{cross_entropy_grad, cross_entropy_loss, log_softmax_rows, softmax_rows};
pub use norm::BatchNorm2d;

use ndarray::{Array4, ArrayD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Forward-pass mode: training uses batch statistics and dropout, evaluation
/// uses running statistics and the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable array with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<F: Scalar> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

/// Weight initialization family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// He normal, suited to rectifier stacks.
    He,
    /// N(0, 0.02), the DCGAN recipe.
    Dcgan,
}

/// Architecture description; building it yields a concrete [`Layer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Deconv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Linear {
        in_dim: usize,
        out_dim: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    /// (tanh(x)+1)/2: squashes into [0,1].
    UnitTanh,
    Sigmoid,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    /// (B, D, 1, 1) -> (B, C, H, W) with D = C*H*W.
    Reshape {
        channels: usize,
        height: usize,
        width: usize,
    },
    /// Row-wise L2 normalization onto the unit sphere.
    UnitSphere,
    Dropout {
        prob: f64,
    },
}

impl LayerSpec {
    pub fn build<F: Scalar>(&self, init: Init, rng: &mut impl Rng) -> Layer<F> {
        match *self {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => Layer::Conv(Conv2d::new(in_ch, out_ch, kernel, stride, pad, init, rng)),
            LayerSpec::Deconv {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => Layer::Deconv(ConvTranspose2d::new(
                in_ch, out_ch, kernel, stride, pad, init, rng,
            )),
            LayerSpec::Linear { in_dim, out_dim } => {
                Layer::Linear(Linear::new(in_dim, out_dim, init, rng))
            }
            LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm2d::new(channels)),
            LayerSpec::Relu => Layer::Relu(Relu::default()),
            LayerSpec::LeakyRelu { slope } => Layer::LeakyRelu(LeakyRelu::new(slope)),
            LayerSpec::Tanh => Layer::Tanh(Tanh::default()),
            LayerSpec::UnitTanh => Layer::UnitTanh(UnitTanh::default()),
            LayerSpec::Sigmoid => Layer::Sigmoid(Sigmoid::default()),
            LayerSpec::MaxPool { kernel, stride } => Layer::MaxPool(MaxPool2d::new(kernel, stride)),
            LayerSpec::Reshape {
                channels,
                height,
                width,
            } => Layer::Reshape(Reshape::new(channels, height, width)),
            LayerSpec::UnitSphere => Layer::UnitSphere(UnitSphere::default()),
            LayerSpec::Dropout { prob } => Layer::Dropout(Dropout::new(prob, rng.gen())),
        }
    }
}

/// A built layer with parameters and the caches backward needs.
#[derive(Debug, Clone)]
pub enum Layer<F: Scalar> {
    Conv(Conv2d<F>),
    Deconv(ConvTranspose2d<F>),
    Linear(Linear<F>),
    BatchNorm(BatchNorm2d<F>),
    Relu(Relu<F>),
    LeakyRelu(LeakyRelu<F>),
    Tanh(Tanh<F>),
    UnitTanh(UnitTanh<F>),
    Sigmoid(Sigmoid<F>),
    MaxPool(MaxPool2d<F>),
    Reshape(Reshape<F>),
    UnitSphere(UnitSphere<F>),
    Dropout(Dropout<F>),
}

impl<F: Scalar> Layer<F> {
    pub fn forward(&mut self, x: Array4<F>, mode: Mode) -> Array4<F> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::Deconv(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Relu(l) => l.forward(x),
            Layer::LeakyRelu(l) => l.forward(x),
            Layer::Tanh(l) => l.forward(x),
            Layer::UnitTanh(l) => l.forward(x),
            Layer::Sigmoid(l) => l.forward(x),
            Layer::MaxPool(l) => l.forward(x),
            Layer::Reshape(l) => l.forward(x),
            Layer::UnitSphere(l) => l.forward(x),
            Layer::Dropout(l) => l.forward(x, mode),
        }
    }

    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        match self {
            Layer::Conv(l) => l.backward(dy),
            Layer::Deconv(l) => l.backward(dy),
            Layer::Linear(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::LeakyRelu(l) => l.backward(dy),
            Layer::Tanh(l) => l.backward(dy),
            Layer::UnitTanh(l) => l.backward(dy),
            Layer::Sigmoid(l) => l.backward(dy),
            Layer::MaxPool(l) => l.backward(dy),
            Layer::Reshape(l) => l.backward(dy),
            Layer::UnitSphere(l) => l.backward(dy),
            Layer::Dropout(l) => l.backward(dy),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Deconv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => Vec::new(),
        }
    }

    /// Persistent arrays: trainable params plus batch-norm running stats.
    pub fn state_mut(&mut self) -> Vec<&mut ArrayD<F>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight.value, &mut l.bias.value],
            Layer::Deconv(l) => vec![&mut l.weight.value, &mut l.bias.value],
            Layer::Linear(l) => vec![&mut l.weight.value, &mut l.bias.value],
            Layer::BatchNorm(l) => vec![
                &mut l.gamma.value,
                &mut l.beta.value,
                &mut l.running_mean,
                &mut l.running_var,
            ],
            _ => Vec::new(),
        }
    }

    /// Drop forward caches (frees activation memory between phases).
    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(l) => l.clear_cache(),
            Layer::Deconv(l) => l.clear_cache(),
            Layer::Linear(l) => l.clear_cache(),
            Layer::BatchNorm(l) => l.clear_cache(),
            Layer::Relu(l) => l.clear_cache(),
            Layer::LeakyRelu(l) => l.clear_cache(),
            Layer::Tanh(l) => l.clear_cache(),
            Layer::UnitTanh(l) => l.clear_cache(),
            Layer::Sigmoid(l) => l.clear_cache(),
            Layer::MaxPool(l) => l.clear_cache(),
            Layer::Reshape(l) => l.clear_cache(),
            Layer::UnitSphere(l) => l.clear_cache(),
            Layer::Dropout(l) => l.clear_cache(),
        }
    }
}

/// Sequential network.
#[derive(Debug, Clone)]
pub struct Net<F: Scalar> {
    pub specs: Vec<LayerSpec>,
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> Net<F> {
    pub fn build(specs: Vec<LayerSpec>, init: Init, rng: &mut impl Rng) -> Self {
        let layers = specs.iter().map(|s| s.build(init, rng)).collect();
        Self { specs, layers }
    }

    pub fn forward(&mut self, x: Array4<F>, mode: Mode) -> Array4<F> {
        self.forward_part(0, self.layers.len(), x, mode)
    }

    /// Run layers `[from, to)`.
    pub fn forward_part(&mut self, from: usize, to: usize, x: Array4<F>, mode: Mode) -> Array4<F> {
        let mut h = x;
        for layer in &mut self.layers[from..to] {
            h = layer.forward(h, mode);
        }
        h
    }

    /// Backpropagate through all layers; returns the input gradient.
    pub fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        self.backward_part(self.layers.len(), 0, dy)
    }

    /// Backpropagate through layers `[from, to)` in reverse (from > to).
    pub fn backward_part(&mut self, from: usize, to: usize, dy: Array4<F>) -> Array4<F> {
        let mut g = dy;
        for layer in self.layers[to..from].iter_mut().rev() {
            g = layer.backward(g);
        }
        g
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&mut Param<F>)) {
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                f(p);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(|p| p.zero_grad());
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params_mut(|p| n += p.value.len());
        n
    }

    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }

    /// All persistent arrays (params then buffers, in layer order), for
    /// checkpointing.
    pub fn state_arrays_mut(&mut self) -> Vec<&mut ArrayD<F>> {
        self.layers.iter_mut().flat_map(|l| l.state_mut()).collect()
    }
}
