use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// One layer of a sequential network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding,
        }
    }

    pub fn pool(window: usize) -> Self {
        LayerSpec::MaxPool { window, stride: window }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    /// Shapes of (weight, bias) for layers that carry parameters.
    fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((vec![out_channels, in_channels, kernel, kernel], vec![out_channels])),
            LayerSpec::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }

    /// Output shape of one sample (no batch axis).
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = input else {
                    return Err(Error::shape(format!("conv2d expects (C, H, W), got {input:?}")));
                };
                if *c != in_channels || stride == 0 || h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(Error::shape(format!("conv2d {self:?} cannot take {input:?}")));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool { window, stride } => {
                let [c, h, w] = input else {
                    return Err(Error::shape(format!("max pool expects (C, H, W), got {input:?}")));
                };
                if window == 0 || stride == 0 || *h < window || *w < window {
                    return Err(Error::shape(format!("max pool {window} cannot take {input:?}")));
                }
                Ok(vec![*c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(Error::shape(format!("dense {inputs}->{outputs} cannot take {input:?}")));
                }
                Ok(vec![outputs])
            }
        }
    }
}

/// Sequential architecture with a tapped intermediate layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Per-sample input shape, e.g. `[1, 28, 28]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Index of the layer whose output is returned as the feature tensor.
    pub feature_tap: usize,
}

impl ModelSpec {
    /// MNIST student. Taps a (12, 4, 4) feature map; 1,446 parameters.
    pub fn mnist_student() -> Self {
        Self {
            name: "mnist-student".into(),
            input_shape: vec![1, 28, 28],
            layers: vec![
                LayerSpec::conv(1, 8, 3, 1),
                LayerSpec::Relu,
                LayerSpec::pool(2),
                LayerSpec::conv(8, 12, 3, 0),
                LayerSpec::Relu,
                LayerSpec::pool(3),
                LayerSpec::pool(2),
                LayerSpec::Flatten,
                LayerSpec::dense(48, 10),
            ],
            feature_tap: 5,
        }
    }

    /// MNIST teacher. A 1x1 convolution projects to the same (12, 4, 4)
    /// feature shape as the student; 5,934 parameters.
    pub fn mnist_teacher() -> Self {
        Self {
            name: "mnist-teacher".into(),
            input_shape: vec![1, 28, 28],
            layers: vec![
                LayerSpec::conv(1, 12, 3, 1),
                LayerSpec::Relu,
                LayerSpec::pool(2),
                LayerSpec::conv(12, 32, 3, 0),
                LayerSpec::Relu,
                LayerSpec::pool(3),
                LayerSpec::conv(32, 12, 1, 0),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::dense(192, 10),
            ],
            feature_tap: 7,
        }
    }

    /// CIFAR-10 student sketch with the same (12, 4, 4) tap.
    pub fn cifar_student() -> Self {
        Self {
            name: "cifar-student".into(),
            input_shape: vec![3, 32, 32],
            layers: vec![
                LayerSpec::conv(3, 8, 3, 1),
                LayerSpec::Relu,
                LayerSpec::pool(2),
                LayerSpec::conv(8, 12, 3, 1),
                LayerSpec::Relu,
                LayerSpec::pool(4),
                LayerSpec::Flatten,
                LayerSpec::dense(192, 10),
            ],
            feature_tap: 5,
        }
    }

    /// Two-layer perceptron on flat inputs; the hidden activations are the features.
    pub fn mlp(input_shape: Vec<usize>, hidden: usize, classes: usize) -> Self {
        let inputs = input_shape.iter().product();
        Self {
            name: format!("mlp-{hidden}"),
            input_shape,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::dense(inputs, hidden),
                LayerSpec::Relu,
                LayerSpec::dense(hidden, classes),
            ],
            feature_tap: 2,
        }
    }

    /// Per-sample output shape of every layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.layer_shapes()?;
        if self.feature_tap >= self.layers.len() {
            return Err(Error::Index {
                what: "layers",
                index: self.feature_tap,
                len: self.layers.len(),
            });
        }
        if shapes.last().map(Vec::len) != Some(1) {
            return Err(Error::shape(format!("{} must end in a flat logit vector", self.name)));
        }
        Ok(())
    }

    pub fn feature_shape(&self) -> Result<Vec<usize>> {
        self.validate()?;
        Ok(self.layer_shapes()?.swap_remove(self.feature_tap))
    }

    pub fn classes(&self) -> Result<usize> {
        self.validate()?;
        Ok(self.layer_shapes()?.last().map_or(0, |s| s[0]))
    }

    /// Names and shapes of all parameter tensors in declared order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((w, b)) = layer.param_shapes() {
                out.push((format!("layer{i}.weight"), w));
                out.push((format!("layer{i}.bias"), b));
            }
        }
        out
    }
}

/// Total number of trainable scalars in `spec`.
pub fn parameter_count(spec: &ModelSpec) -> usize {
    spec.param_layout()
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

/// A [`ModelSpec`] together with its parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Tensor>,
}

impl Model {
    /// Uniform fan-in initialization, bound sqrt(6 / fan_in), zero biases.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = substream(seed, Stream::Init);
        let mut params = Vec::new();
        for layer in &spec.layers {
            if let Some((ws, bs)) = layer.param_shapes() {
                let bound = (6.0 / layer.fan_in() as f64).sqrt();
                let mut w = Tensor::zeros(ws);
                w.values.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
                params.push(w);
                params.push(Tensor::zeros(bs));
            }
        }
        Ok(Self { spec, params })
    }

    /// All parameters zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec.param_layout().into_iter().map(|(_, s)| Tensor::zeros(s)).collect();
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.param_layout();
        if layout.len() != params.len()
            || layout.iter().zip(&params).any(|((_, s), p)| s.as_slice() != p.shape())
        {
            return Err(Error::shape(format!("parameters do not match the layout of {}", spec.name)));
        }
        Ok(Self { spec, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Records a forward pass of `input: [B, ...input_shape]` on `graph`.
    /// With `trainable == false` the parameters enter as constants.
    pub fn forward(&self, graph: &mut Graph, input: &Tensor, trainable: bool) -> Result<(Var, Var)> {
        let shape = input.shape();
        if shape.len() != self.spec.input_shape.len() + 1 || shape[1..] != self.spec.input_shape[..] {
            return Err(Error::shape(format!(
                "{} expects (B, {:?}), got {shape:?}",
                self.spec.name, self.spec.input_shape
            )));
        }
        let batch = shape[0];
        let mut x = graph.input(input);
        let mut slot = 0;
        let mut tap = None;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            x = match *layer {
                LayerSpec::Conv2d { stride, padding, .. } => {
                    let (w, b) = self.leaves(graph, slot, trainable);
                    slot += 2;
                    graph.conv2d(x, w, b, stride, padding)?
                }
                LayerSpec::Dense { .. } => {
                    let (w, b) = self.leaves(graph, slot, trainable);
                    slot += 2;
                    graph.dense(x, w, b)?
                }
                LayerSpec::Relu => graph.relu(x)?,
                LayerSpec::MaxPool { window, stride } => graph.max_pool2d(x, window, stride)?,
                LayerSpec::Flatten => {
                    let n = graph.shape(x)?[1..].iter().product();
                    graph.reshape(x, vec![batch, n])?
                }
            };
            if i == self.spec.feature_tap {
                tap = Some(x);
            }
        }
        let tap = tap.ok_or_else(|| Error::validation("feature tap beyond the last layer"))?;
        Ok((tap, x))
    }

    fn leaves(&self, graph: &mut Graph, slot: usize, trainable: bool) -> (Var, Var) {
        if trainable {
            (graph.param(slot, &self.params[slot]), graph.param(slot + 1, &self.params[slot + 1]))
        } else {
            (graph.input(&self.params[slot]), graph.input(&self.params[slot + 1]))
        }
    }

    /// Inference only: returns (features, logits) as plain tensors.
    pub fn infer(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut graph = Graph::new();
        let (h, f) = self.forward(&mut graph, input, false)?;
        Ok((graph.tensor(h)?, graph.tensor(f)?))
    }
}
