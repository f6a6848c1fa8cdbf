use serde::{Deserialize, Serialize};

use super::{prefixed, relu_backward, relu_inplace, ComplexConv1d, Conv1d, Linear, ParamView, Parameterized};
use crate::rng::Rng;

/// Channel-major feature map shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub len: usize,
}

impl Shape {
    pub fn size(&self) -> usize {
        self.channels * self.len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv(Conv1d),
    ComplexConv(ComplexConv1d),
    Relu,
    MaxPool(usize),
    GlobalAvgPool,
    /// Flattens its input and applies a fully connected layer.
    Dense(Linear),
}

impl Layer {
    pub fn output_shape(&self, s: Shape) -> Shape {
        match self {
            Layer::Conv(c) => Shape { channels: c.out_channels(), len: c.out_len(s.len) },
            Layer::ComplexConv(c) => Shape { channels: 2 * c.out_channels(), len: c.out_len(s.len) },
            Layer::Relu => s,
            Layer::MaxPool(k) => Shape { channels: s.channels, len: s.len / k },
            Layer::GlobalAvgPool => Shape { channels: s.channels, len: 1 },
            Layer::Dense(l) => Shape { channels: l.out_dim(), len: 1 },
        }
    }

    fn forward(&self, x: &[f64], s: Shape) -> Vec<f64> {
        match self {
            Layer::Conv(c) => c.forward(x, s.len).0,
            Layer::ComplexConv(c) => c.forward(x, s.len).0,
            Layer::Relu => {
                let mut y = x.to_vec();
                relu_inplace(&mut y);
                y
            }
            Layer::MaxPool(k) => {
                let out_len = s.len / k;
                let mut y = Vec::with_capacity(s.channels * out_len);
                for c in 0..s.channels {
                    let row = &x[c * s.len..(c + 1) * s.len];
                    for t in 0..out_len {
                        let w = &row[t * k..(t + 1) * k];
                        y.push(w.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                    }
                }
                y
            }
            Layer::GlobalAvgPool => x.chunks_exact(s.len).map(|row| row.iter().sum::<f64>() / s.len as f64).collect(),
            Layer::Dense(l) => l.forward(x),
        }
    }

    fn backward(&self, x: &[f64], s: Shape, dy: &[f64], grad: &mut Layer) -> Vec<f64> {
        match (self, grad) {
            (Layer::Conv(c), Layer::Conv(g)) => c.backward(x, s.len, dy, g),
            (Layer::ComplexConv(c), Layer::ComplexConv(g)) => c.backward(x, s.len, dy, g),
            (Layer::Relu, _) => {
                let mut dx = dy.to_vec();
                relu_backward(x, &mut dx);
                dx
            }
            (Layer::MaxPool(k), _) => {
                let out_len = s.len / k;
                let mut dx = vec![0.0; x.len()];
                for c in 0..s.channels {
                    for t in 0..out_len {
                        let base = c * s.len + t * k;
                        let mut arg = base;
                        for i in base..base + k {
                            if x[i] > x[arg] {
                                arg = i;
                            }
                        }
                        dx[arg] += dy[c * out_len + t];
                    }
                }
                dx
            }
            (Layer::GlobalAvgPool, _) => {
                let mut dx = vec![0.0; x.len()];
                for (c, row) in dx.chunks_exact_mut(s.len).enumerate() {
                    row.fill(dy[c] / s.len as f64);
                }
                dx
            }
            (Layer::Dense(l), Layer::Dense(g)) => l.backward(x, dy, g),
            _ => unreachable!("gradient container does not mirror the network"),
        }
    }

    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        match self {
            Layer::Conv(c) => c.params(),
            Layer::ComplexConv(c) => c.params(),
            Layer::Dense(l) => l.params(),
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Conv(c) => c.params_mut(),
            Layer::ComplexConv(c) => c.params_mut(),
            Layer::Dense(l) => l.params_mut(),
            _ => Vec::new(),
        }
    }
}

/// A feed-forward stack of layers over a fixed input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

/// Inputs of every layer, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct NetworkCache {
    inputs: Vec<(Vec<f64>, Shape)>,
}

impl Network {
    pub fn new(input: Shape, layers: Vec<Layer>) -> Self {
        Self { input, layers }
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.iter().fold(self.input, |s, l| l.output_shape(s))
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.input;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = layer.forward(&cur, s);
            s = layer.output_shape(s);
        }
        cur
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, NetworkCache) {
        let mut s = self.input;
        let mut cur = x.to_vec();
        let mut inputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let next = layer.forward(&cur, s);
            let ns = layer.output_shape(s);
            inputs.push((std::mem::replace(&mut cur, next), s));
            s = ns;
        }
        (cur, NetworkCache { inputs })
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, cache: &NetworkCache, dy: &[f64], grad: &mut Network) -> Vec<f64> {
        let mut g = dy.to_vec();
        for ((layer, gl), (x, s)) in self.layers.iter().zip(grad.layers.iter_mut()).zip(&cache.inputs).rev() {
            g = layer.backward(x, *s, &g, gl);
        }
        g
    }
}

impl Parameterized for Network {
    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        self.layers.iter().enumerate().flat_map(|(i, l)| prefixed(&format!("layers.{i}"), l.params())).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Multi-layer perceptron with ReLU between layers and, optionally, after
/// the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_output: bool,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// input of each layer
    inputs: Vec<Vec<f64>>,
    /// pre-activation of each layer
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`.
    pub fn new(dims: &[usize], relu_output: bool, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Self { layers, relu_output }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    fn activates(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.relu_output
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            cur = l.forward(&cur);
            if self.activates(i) {
                relu_inplace(&mut cur);
            }
        }
        cur
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let z = l.forward(&cur);
            inputs.push(cur);
            cur = z.clone();
            if self.activates(i) {
                relu_inplace(&mut cur);
            }
            pre.push(z);
        }
        (cur, MlpCache { inputs, pre })
    }

    pub fn backward(&self, cache: &MlpCache, dy: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut g = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            if self.activates(i) {
                relu_backward(&cache.pre[i], &mut g);
            }
            g = self.layers[i].backward(&cache.inputs[i], &g, &mut grad.layers[i]);
        }
        g
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        self.layers.iter().enumerate().flat_map(|(i, l)| prefixed(&format!("layers.{i}"), l.params())).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
