use std::collections::BTreeMap;

use dropnoise_tensor::{
    conv_output_size, conv_transpose_output_size, ActivationKind, BatchStats, ConvParams, Graph, NormConfig, Scalar,
    Tensor, Var,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dropout::{dropout_graph, DropoutMask, DropoutSpec, MaskRng, Phase};
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Tanh,
}

impl From<Activation> for ActivationKind {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Relu => ActivationKind::Relu,
            Activation::LeakyRelu { slope } => ActivationKind::LeakyRelu { slope },
            Activation::Sigmoid => ActivationKind::Sigmoid,
            Activation::Tanh => ActivationKind::Tanh,
        }
    }
}

/// One layer of a [`LayerStack`]. Shapes are per batch item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerKind {
    Dense { inputs: usize, outputs: usize, bias: bool },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize, bias: bool },
    ConvTranspose2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize, bias: bool },
    BatchNorm { channels: usize },
    Activation { activation: Activation },
    Dropout { spec: DropoutSpec },
    Reshape { shape: Vec<usize> },
}

/// Per-layer replacement of a dropout layer's spec and phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerOverride {
    pub spec: DropoutSpec,
    pub phase: Phase,
}

/// Dropout overrides keyed by layer index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides(pub BTreeMap<usize, LayerOverride>);

impl Overrides {
    pub fn insert(&mut self, layer: usize, o: LayerOverride) {
        self.0.insert(layer, o);
    }
}

/// Options for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward<'a> {
    pub phase: Phase,
    pub overrides: Option<&'a Overrides>,
    /// Stop before a trailing sigmoid so losses can work on logits.
    pub logits: bool,
}

impl<'a> Forward<'a> {
    pub fn phase(phase: Phase) -> Self {
        Self { phase, overrides: None, logits: false }
    }

    pub fn with_overrides(self, overrides: &'a Overrides) -> Self {
        Self { overrides: Some(overrides), ..self }
    }

    pub fn logits(self) -> Self {
        Self { logits: true, ..self }
    }
}

/// Graph variables of a stack's parameters.
#[derive(Clone, Debug)]
pub struct BoundParams(BTreeMap<String, Var>);

impl BoundParams {
    fn get(&self, name: &str) -> Result<Var, NnError> {
        self.0.get(name).copied().ok_or_else(|| NnError::MissingParam(name.to_owned()))
    }
}

pub struct StackOutput<T> {
    pub output: Var,
    /// Train-phase statistics per batchnorm layer, to fold into running stats.
    pub batch_stats: Vec<(usize, BatchStats<T>)>,
    pub masks: Vec<(usize, DropoutMask)>,
}

/// Ordered layers with their parameters and batchnorm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack<T> {
    prefix: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerKind>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
    norm: NormConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl Slot {
    fn suffix(self) -> &'static str {
        match self {
            Slot::Weight => "weight",
            Slot::Bias => "bias",
            Slot::Gamma => "gamma",
            Slot::Beta => "beta",
            Slot::RunningMean => "running_mean",
            Slot::RunningVar => "running_var",
        }
    }

    fn is_buffer(self) -> bool {
        matches!(self, Slot::RunningMean | Slot::RunningVar)
    }
}

fn slots(layer: &LayerKind) -> Vec<(Slot, Vec<usize>)> {
    match *layer {
        LayerKind::Dense { inputs, outputs, bias } => {
            let mut v = vec![(Slot::Weight, vec![inputs, outputs])];
            if bias {
                v.push((Slot::Bias, vec![outputs]));
            }
            v
        }
        LayerKind::Conv2d { in_channels, out_channels, kernel, bias, .. } => {
            let mut v = vec![(Slot::Weight, vec![out_channels, in_channels, kernel, kernel])];
            if bias {
                v.push((Slot::Bias, vec![out_channels]));
            }
            v
        }
        LayerKind::ConvTranspose2d { in_channels, out_channels, kernel, bias, .. } => {
            let mut v = vec![(Slot::Weight, vec![in_channels, out_channels, kernel, kernel])];
            if bias {
                v.push((Slot::Bias, vec![out_channels]));
            }
            v
        }
        LayerKind::BatchNorm { channels } => vec![
            (Slot::Gamma, vec![channels]),
            (Slot::Beta, vec![channels]),
            (Slot::RunningMean, vec![channels]),
            (Slot::RunningVar, vec![channels]),
        ],
        _ => Vec::new(),
    }
}

fn shape_error(layer: usize, expected: Vec<usize>, actual: &[usize]) -> NnError {
    NnError::ShapeMismatch { layer, expected, actual: actual.to_vec() }
}

/// Output shape of `layer` for a per-item input shape.
fn layer_output(index: usize, layer: &LayerKind, input: &[usize]) -> Result<Vec<usize>, NnError> {
    let wrap = |source| NnError::Layer { layer: index, source };
    match layer {
        LayerKind::Dense { inputs, outputs, .. } => {
            if input != [*inputs] {
                return Err(shape_error(index, vec![*inputs], input));
            }
            Ok(vec![*outputs])
        }
        LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding, .. } => {
            let [c, h, w] = *input else { return Err(shape_error(index, vec![*in_channels, 0, 0], input)) };
            if c != *in_channels {
                return Err(shape_error(index, vec![*in_channels, h, w], input));
            }
            let p = ConvParams::new(*stride, *padding);
            Ok(vec![
                *out_channels,
                conv_output_size(h, *kernel, p).map_err(wrap)?,
                conv_output_size(w, *kernel, p).map_err(wrap)?,
            ])
        }
        LayerKind::ConvTranspose2d { in_channels, out_channels, kernel, stride, padding, .. } => {
            let [c, h, w] = *input else { return Err(shape_error(index, vec![*in_channels, 0, 0], input)) };
            if c != *in_channels {
                return Err(shape_error(index, vec![*in_channels, h, w], input));
            }
            let p = ConvParams::new(*stride, *padding);
            Ok(vec![
                *out_channels,
                conv_transpose_output_size(h, *kernel, p).map_err(wrap)?,
                conv_transpose_output_size(w, *kernel, p).map_err(wrap)?,
            ])
        }
        LayerKind::BatchNorm { channels } => {
            if (input.len() != 1 && input.len() != 3) || input[0] != *channels {
                return Err(shape_error(index, vec![*channels], input));
            }
            Ok(input.to_vec())
        }
        LayerKind::Reshape { shape } => {
            if shape.iter().product::<usize>() != input.iter().product::<usize>() || shape.contains(&0) {
                return Err(shape_error(index, shape.clone(), input));
            }
            Ok(shape.clone())
        }
        LayerKind::Activation { .. } | LayerKind::Dropout { .. } => Ok(input.to_vec()),
    }
}

impl<T: Scalar> LayerStack<T> {
    /// Builds a stack with DCGAN-style initialization: weights ~ N(0, 0.02),
    /// batchnorm gamma ~ N(1, 0.02), biases and beta zero.
    pub fn new(
        prefix: impl Into<String>,
        input_shape: Vec<usize>,
        layers: Vec<LayerKind>,
        init: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let prefix = prefix.into();
        let shapes = Self::infer_shapes(&input_shape, &layers)?;
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        for (i, layer) in layers.iter().enumerate() {
            for (slot, shape) in slots(layer) {
                let name = format!("{prefix}.{i}.{}", slot.suffix());
                let t = match slot {
                    Slot::Weight => Tensor::from_fn(shape, |_| T::from_f64_lossy(normal.sample(init)))?,
                    Slot::Gamma => Tensor::from_fn(shape, |_| T::from_f64_lossy(1.0 + normal.sample(init)))?,
                    Slot::Bias | Slot::Beta | Slot::RunningMean => Tensor::zeros(shape)?,
                    Slot::RunningVar => Tensor::ones(shape)?,
                };
                if slot.is_buffer() {
                    buffers.insert(name, t);
                } else {
                    params.insert(name, t);
                }
            }
        }
        Ok(Self { prefix, input_shape, layers, shapes, params, buffers, norm: NormConfig::default() })
    }

    /// Reassembles a stack from named tensors (parameters and running stats).
    pub fn from_tensors(
        prefix: impl Into<String>,
        input_shape: Vec<usize>,
        layers: Vec<LayerKind>,
        mut tensors: BTreeMap<String, Tensor<T>>,
    ) -> Result<Self, NnError> {
        let prefix = prefix.into();
        let shapes = Self::infer_shapes(&input_shape, &layers)?;
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        for (i, layer) in layers.iter().enumerate() {
            for (slot, shape) in slots(layer) {
                let name = format!("{prefix}.{i}.{}", slot.suffix());
                let t = tensors.remove(&name).ok_or_else(|| NnError::MissingParam(name.clone()))?;
                if t.shape() != shape.as_slice() {
                    return Err(NnError::ParamShape { name, expected: shape, actual: t.shape().to_vec() });
                }
                if slot.is_buffer() {
                    buffers.insert(name, t);
                } else {
                    params.insert(name, t);
                }
            }
        }
        if let Some(name) = tensors.into_keys().next() {
            return Err(NnError::UnknownParam(name));
        }
        Ok(Self { prefix, input_shape, layers, shapes, params, buffers, norm: NormConfig::default() })
    }

    fn infer_shapes(input: &[usize], layers: &[LayerKind]) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            current = layer_output(i, layer, &current)?;
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn layers(&self) -> &[LayerKind] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-item output shape.
    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map_or(&self.input_shape, |s| s)
    }

    /// Per-item output shape of every layer.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn dropout_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerKind::Dropout { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.buffers
    }

    /// Parameters and running statistics, ordered by name.
    pub fn tensors(&self) -> BTreeMap<String, Tensor<T>> {
        self.params.iter().chain(&self.buffers).map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn cast<U: Scalar>(&self) -> LayerStack<U> {
        LayerStack {
            prefix: self.prefix.clone(),
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            norm: self.norm,
        }
    }

    /// Registers parameters on `g`, as trainable parameters or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<BoundParams, NnError> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.params {
            let v = if trainable { g.param(name.clone(), t.clone())? } else { g.input(t.clone()) };
            vars.insert(name.clone(), v);
        }
        Ok(BoundParams(vars))
    }

    fn name(&self, layer: usize, slot: Slot) -> String {
        format!("{}.{layer}.{}", self.prefix, slot.suffix())
    }

    fn buffer(&self, layer: usize, slot: Slot) -> Result<&Tensor<T>, NnError> {
        let name = self.name(layer, slot);
        self.buffers.get(&name).ok_or(NnError::MissingParam(name))
    }

    /// Runs the stack on `x` (shape `[N, ..input_shape]`) using already bound parameters.
    pub fn forward_bound(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        x: Var,
        opts: &Forward<'_>,
        rng: &mut MaskRng,
    ) -> Result<StackOutput<T>, NnError> {
        if let Some(ov) = opts.overrides {
            if let Some((&bad, _)) = ov.0.iter().find(|(i, _)| !matches!(self.layers.get(**i), Some(LayerKind::Dropout { .. }))) {
                return Err(NnError::NotDropout(bad));
            }
        }
        let in_shape = g.shape(x);
        if in_shape.len() != self.input_shape.len() + 1 || in_shape[1..] != self.input_shape[..] {
            return Err(shape_error(0, self.input_shape.clone(), &in_shape[1.min(in_shape.len())..]));
        }
        let batch = in_shape[0];
        let train = opts.phase == Phase::Train;
        let mut out = StackOutput { output: x, batch_stats: Vec::new(), masks: Vec::new() };
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            let wrap = |source| NnError::Layer { layer: i, source };
            h = match layer {
                LayerKind::Dense { bias, .. } => {
                    let y = g.matmul(h, bound.get(&self.name(i, Slot::Weight))?).map_err(wrap)?;
                    if *bias {
                        g.add_channel_bias(y, bound.get(&self.name(i, Slot::Bias))?).map_err(wrap)?
                    } else {
                        y
                    }
                }
                LayerKind::Conv2d { stride, padding, bias, .. } => {
                    let p = ConvParams::new(*stride, *padding);
                    let y = g.conv2d(h, bound.get(&self.name(i, Slot::Weight))?, p).map_err(wrap)?;
                    if *bias {
                        g.add_channel_bias(y, bound.get(&self.name(i, Slot::Bias))?).map_err(wrap)?
                    } else {
                        y
                    }
                }
                LayerKind::ConvTranspose2d { stride, padding, bias, .. } => {
                    let p = ConvParams::new(*stride, *padding);
                    let y = g.conv2d_transpose(h, bound.get(&self.name(i, Slot::Weight))?, p).map_err(wrap)?;
                    if *bias {
                        g.add_channel_bias(y, bound.get(&self.name(i, Slot::Bias))?).map_err(wrap)?
                    } else {
                        y
                    }
                }
                LayerKind::BatchNorm { .. } => {
                    let gamma = bound.get(&self.name(i, Slot::Gamma))?;
                    let beta = bound.get(&self.name(i, Slot::Beta))?;
                    if train {
                        let (y, stats) = g.batchnorm_train(h, gamma, beta, self.norm.epsilon).map_err(wrap)?;
                        out.batch_stats.push((i, stats));
                        y
                    } else {
                        let mean = self.buffer(i, Slot::RunningMean)?.data().to_vec();
                        let var = self.buffer(i, Slot::RunningVar)?.data().to_vec();
                        g.batchnorm_eval(h, gamma, beta, &mean, &var, self.norm.epsilon).map_err(wrap)?
                    }
                }
                LayerKind::Activation { activation } => {
                    if opts.logits && i == last && *activation == Activation::Sigmoid {
                        h
                    } else {
                        g.activation(h, (*activation).into())
                    }
                }
                LayerKind::Dropout { spec } => {
                    let (spec, phase) = match opts.overrides.and_then(|o| o.0.get(&i)) {
                        Some(o) => (o.spec, o.phase),
                        None => (*spec, opts.phase),
                    };
                    let (y, mask) = dropout_graph(g, h, &spec, phase, rng)?;
                    if let Some(m) = mask {
                        out.masks.push((i, m));
                    }
                    y
                }
                LayerKind::Reshape { shape } => {
                    let mut full = vec![batch];
                    full.extend_from_slice(shape);
                    g.reshape(h, full).map_err(wrap)?
                }
            };
        }
        out.output = h;
        Ok(out)
    }

    /// Binds parameters and runs the stack in one go.
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        x: Var,
        trainable: bool,
        opts: &Forward<'_>,
        rng: &mut MaskRng,
    ) -> Result<StackOutput<T>, NnError> {
        let bound = self.bind(g, trainable)?;
        self.forward_bound(g, &bound, x, opts, rng)
    }

    /// Forward pass without gradient tracking; running statistics are not updated.
    pub fn forward(&self, x: &Tensor<T>, opts: &Forward<'_>, rng: &mut MaskRng) -> Result<Tensor<T>, NnError> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = self.forward_graph(&mut g, xv, false, opts, rng)?;
        Ok(g.value(out.output).clone())
    }

    /// Folds train-phase batch statistics into the running averages.
    pub fn apply_batch_stats(&mut self, stats: &[(usize, BatchStats<T>)]) -> Result<(), NnError> {
        for (layer, s) in stats {
            let mean_name = self.name(*layer, Slot::RunningMean);
            let var_name = self.name(*layer, Slot::RunningVar);
            let mut mean = self.buffers.remove(&mean_name).ok_or_else(|| NnError::MissingParam(mean_name.clone()))?;
            let mut var = self.buffers.remove(&var_name).ok_or_else(|| NnError::MissingParam(var_name.clone()))?;
            s.update_running(mean.data_mut(), var.data_mut(), self.norm.momentum);
            self.buffers.insert(mean_name, mean);
            self.buffers.insert(var_name, var);
        }
        Ok(())
    }
}
