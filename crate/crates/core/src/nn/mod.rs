//! Forward and backward passes for the small set of layers the two networks
//! are built from, plus an SGD-with-momentum optimizer.

pub mod conv;
pub mod layers;
pub mod loss;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use conv::conv2d_forward;
pub use loss::{softmax, softmax_cross_entropy, Prediction};

/// Trainable weights of one layer together with their gradient accumulators
/// and momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    pub velocity_weight: Tensor<T>,
    pub velocity_bias: Tensor<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        LayerParams {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            velocity_weight: Tensor::zeros(weight.shape()),
            velocity_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
        }
    }

    /// Glorot-uniform weights in `(-b, b)`, `b = sqrt(6 / (fan_in + fan_out))`,
    /// and zero bias.
    pub fn glorot<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
        LayerParams::new(Tensor::new(shape, data).expect("init shape"), Tensor::zeros(&[shape[0]]))
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(T::zero());
        self.grad_bias.fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            grad_weight: self.grad_weight.cast(),
            grad_bias: self.grad_bias.cast(),
            velocity_weight: self.velocity_weight.cast(),
            velocity_bias: self.velocity_bias.cast(),
        }
    }
}

/// `buf ← momentum·buf + grad; w ← w − lr·buf`, then the gradients are zeroed.
pub fn sgd_step<T: Scalar>(params: &mut LayerParams<T>, lr: T, momentum: T) {
    fn update<T: Scalar>(w: &mut Tensor<T>, g: &mut Tensor<T>, buf: &mut Tensor<T>, lr: T, momentum: T) {
        for ((w, g), b) in w.data_mut().iter_mut().zip(g.data_mut()).zip(buf.data_mut()) {
            *b = momentum * *b + *g;
            *w -= lr * *b;
            *g = T::zero();
        }
    }
    update(&mut params.weight, &mut params.grad_weight, &mut params.velocity_weight, lr, momentum);
    update(&mut params.bias, &mut params.grad_bias, &mut params.velocity_bias, lr, momentum);
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T = f32> {
    Conv2d { params: LayerParams<T>, stride: usize, padding: usize },
    Relu,
    MaxPool2d { size: usize },
    GlobalAvgPool,
    Linear { params: LayerParams<T> },
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d { params, stride, padding } => conv::conv2d_forward(x, params, *stride, *padding),
            Layer::Relu => Ok(layers::relu_forward(x)),
            Layer::MaxPool2d { size } => layers::maxpool_forward(x, *size),
            Layer::GlobalAvgPool => layers::gap_forward(x),
            Layer::Linear { params } => layers::linear_forward(x, params),
        }
    }

    /// Gradient with respect to the layer input; parameter gradients are
    /// accumulated into the layer's own buffers. A conv layer skips the input
    /// gradient (returning zeros) when `need_input` is unset.
    fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_input: bool) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d { params, stride, padding } => {
                let sink = Some((params.grad_weight.data_mut(), params.grad_bias.data_mut()));
                conv::conv2d_backward(x, &params.weight, dy, *stride, *padding, sink, need_input)
            }
            Layer::Linear { params } => {
                let sink = Some((params.grad_weight.data_mut(), params.grad_bias.data_mut()));
                layers::linear_backward(x, &params.weight, dy, sink)
            }
            other => other.input_grad(x, dy),
        }
    }

    fn input_grad(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d { params, stride, padding } => {
                conv::conv2d_backward(x, &params.weight, dy, *stride, *padding, None, true)
            }
            Layer::Relu => Ok(layers::relu_backward(x, dy)),
            Layer::MaxPool2d { size } => layers::maxpool_backward(x, dy, *size),
            Layer::GlobalAvgPool => layers::gap_backward(x, dy),
            Layer::Linear { params } => layers::linear_backward(x, &params.weight, dy, None),
        }
    }

    pub fn params(&self) -> Option<&LayerParams<T>> {
        match self {
            Layer::Conv2d { params, .. } | Layer::Linear { params } => Some(params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut LayerParams<T>> {
        match self {
            Layer::Conv2d { params, .. } | Layer::Linear { params } => Some(params),
            _ => None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv2d { params, stride, padding } => {
                Layer::Conv2d { params: params.cast(), stride: *stride, padding: *padding }
            }
            Layer::Relu => Layer::Relu,
            Layer::MaxPool2d { size } => Layer::MaxPool2d { size: *size },
            Layer::GlobalAvgPool => Layer::GlobalAvgPool,
            Layer::Linear { params } => Layer::Linear { params: params.cast() },
        }
    }
}

/// Activations recorded by a forward pass: `acts[0]` is the input and
/// `acts[i + 1]` the output of layer `i`.
#[derive(Clone, Debug, Default)]
pub struct Tape<T = f32> {
    acts: Vec<Tensor<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { acts: Vec::new() }
    }

    pub fn is_recorded(&self) -> bool {
        !self.acts.is_empty()
    }

    pub fn activation(&self, i: usize) -> &Tensor<T> {
        &self.acts[i]
    }

    pub fn activations(&self) -> &[Tensor<T>] {
        &self.acts
    }

    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("empty tape")
    }
}

/// A named sequence of layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    layers: Vec<(String, Layer<T>)>,
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<(String, Layer<T>)>) -> Self {
        Network { layers }
    }

    pub fn layers(&self) -> &[(String, Layer<T>)] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [(String, Layer<T>)] {
        &mut self.layers
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|(n, _)| n == name)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_from(0, x)
    }

    /// Runs layers `start..` on `x`, where `x` stands in for `acts[start]`.
    pub fn forward_from(&self, start: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for (_, layer) in &self.layers[start..] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_tape(&self, x: &Tensor<T>, tape: &mut Tape<T>) -> Result<Tensor<T>> {
        tape.acts.clear();
        tape.acts.push(x.clone());
        for (_, layer) in &self.layers {
            let y = layer.forward(tape.acts.last().unwrap())?;
            tape.acts.push(y);
        }
        Ok(tape.output().clone())
    }

    fn check_tape(&self, tape: &Tape<T>, dout: &Tensor<T>) -> Result<()> {
        if !tape.is_recorded() {
            return Err(Error::Usage("backward called before a forward pass was recorded"));
        }
        if tape.acts.len() != self.layers.len() + 1 {
            return Err(Error::Usage("tape was recorded by a different network"));
        }
        if dout.shape() != tape.output().shape() {
            return Err(Error::shape(
                "backward",
                format!("output grad {:?} vs output {:?}", dout.shape(), tape.output().shape()),
            ));
        }
        Ok(())
    }

    /// Backpropagates `dout` through every layer, accumulating parameter
    /// gradients. The gradient with respect to the network input is not
    /// needed for training and is not computed.
    pub fn backward(&mut self, tape: &Tape<T>, dout: &Tensor<T>) -> Result<()> {
        self.check_tape(tape, dout)?;
        let mut g = dout.clone();
        for i in (0..self.layers.len()).rev() {
            g = self.layers[i].1.backward(&tape.acts[i], &g, i > 0)?;
        }
        Ok(())
    }

    /// Gradient of the output with respect to `acts[stop]`, without touching
    /// parameter gradients.
    pub fn backward_to(&self, tape: &Tape<T>, dout: &Tensor<T>, stop: usize) -> Result<Tensor<T>> {
        self.check_tape(tape, dout)?;
        let mut g = dout.clone();
        for i in (stop..self.layers.len()).rev() {
            g = self.layers[i].1.input_grad(&tape.acts[i], &g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for (_, layer) in &mut self.layers {
            if let Some(p) = layer.params_mut() {
                p.zero_grad();
            }
        }
    }

    pub fn sgd_step(&mut self, lr: T, momentum: T) {
        for (_, layer) in &mut self.layers {
            if let Some(p) = layer.params_mut() {
                sgd_step(p, lr, momentum);
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network { layers: self.layers.iter().map(|(n, l)| (n.clone(), l.cast())).collect() }
    }
}
