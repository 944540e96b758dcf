//! Layer stacks, the three depth variants, and batched forward/backward.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    conv_backward_batch, conv_forward_batch, fc_backward_batch, fc_forward_batch,
    pool_backward_batch, pool_forward_batch, relu_backward_in_place, relu_in_place, ConvDims,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const INPUT_CHANNELS: usize = 3;
pub const OUTPUT_DIM: usize = 3;
const KERNEL: usize = 3;
const POOL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Superficial,
    Medium,
    Deep,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Superficial, Variant::Medium, Variant::Deep];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Superficial => "superficial",
            Variant::Medium => "medium",
            Variant::Deep => "deep",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant '{s}' (superficial|medium|deep)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { filters: usize, kernel: usize },
    MaxPool { pool: usize },
    Fc { units: usize },
    Relu,
    /// Final affine map without activation.
    LinearOutput { units: usize },
}

impl LayerSpec {
    fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Fc { .. } | LayerSpec::LinearOutput { .. })
    }
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Series { time: usize, channels: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Series { time, channels } => time * channels,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub input_window: usize,
    pub input_channels: usize,
    pub output_dim: usize,
}

impl NetworkSpec {
    /// Output shape of every layer, validating the stack on the way.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.input_window == 0 || self.input_channels == 0 || self.output_dim == 0 {
            return Err(Error::Shape(format!("{}: zero input or output extent", self.name)));
        }
        let mut cur = Shape::Series {
            time: self.input_window,
            channels: self.input_channels,
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |why: String| Error::Shape(format!("{} layer {i}: {why}", self.name));
            cur = match (*layer, cur) {
                (LayerSpec::Conv { filters, kernel }, Shape::Series { time, .. }) => {
                    // zero padding lets a kernel overhang a short series
                    if filters == 0 || kernel == 0 {
                        return Err(fail(format!("conv {filters}x{kernel} on time extent {time}")));
                    }
                    Shape::Series { time, channels: filters }
                }
                (LayerSpec::MaxPool { pool }, Shape::Series { time, channels }) => {
                    if pool == 0 || time / pool == 0 {
                        return Err(fail(format!("pool {pool} exhausts time extent {time}")));
                    }
                    Shape::Series { time: time / pool, channels }
                }
                (LayerSpec::Fc { units } | LayerSpec::LinearOutput { units }, s) => {
                    if units == 0 {
                        return Err(fail("zero units".into()));
                    }
                    let _ = s;
                    Shape::Flat(units)
                }
                (LayerSpec::Relu, s) => s,
                (l, Shape::Flat(_)) => return Err(fail(format!("{l:?} after flattening"))),
            };
            out.push(cur);
        }
        match self.layers.last() {
            Some(LayerSpec::LinearOutput { units }) if *units == self.output_dim => {}
            _ => {
                return Err(Error::Shape(format!(
                    "{}: last layer must be a linear output of {} units",
                    self.name, self.output_dim
                )))
            }
        }
        if self.layers[..self.layers.len() - 1]
            .iter()
            .any(|l| matches!(l, LayerSpec::LinearOutput { .. }))
        {
            return Err(Error::Shape(format!("{}: linear output before the end", self.name)));
        }
        Ok(out)
    }

    /// Weight and bias shapes of the parameterized layers, in order.
    pub fn param_shapes(&self) -> Result<Vec<(Vec<usize>, usize)>> {
        let shapes = self.shapes()?;
        let mut prev = Shape::Series {
            time: self.input_window,
            channels: self.input_channels,
        };
        let mut out = Vec::new();
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            match *layer {
                LayerSpec::Conv { filters, kernel } => {
                    let Shape::Series { channels, .. } = prev else { unreachable!() };
                    out.push((vec![filters, kernel, channels], filters));
                }
                LayerSpec::Fc { units } | LayerSpec::LinearOutput { units } => {
                    out.push((vec![units, prev.len()], units));
                }
                _ => {}
            }
            prev = *shape;
        }
        Ok(out)
    }

    pub fn num_params(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|(w, b)| w.iter().product::<usize>() + b)
            .sum())
    }
}

/// Layer stack of one depth variant for a window of `input_window` samples.
pub fn build_variant(variant: Variant, input_window: usize) -> Result<NetworkSpec> {
    use LayerSpec::*;
    let conv = |filters| [Conv { filters, kernel: KERNEL }, Relu];
    let fc = |units| [Fc { units }, Relu];
    let pool = [MaxPool { pool: POOL }];
    let mut layers: Vec<LayerSpec> = Vec::new();
    match variant {
        Variant::Superficial => {
            for part in [&conv(32)[..], &pool, &conv(64), &pool, &fc(128)] {
                layers.extend_from_slice(part);
            }
        }
        Variant::Medium => {
            for part in [
                &conv(32)[..],
                &conv(64),
                &pool,
                &conv(128),
                &conv(256),
                &pool,
                &fc(512),
                &fc(256),
            ] {
                layers.extend_from_slice(part);
            }
        }
        Variant::Deep => {
            for part in [
                &conv(32)[..],
                &conv(64),
                &pool,
                &conv(128),
                &conv(256),
                &pool,
                &conv(512),
                &conv(512),
                &pool,
                &conv(1024),
                &conv(1024),
                &pool,
                &fc(1024),
                &fc(512),
                &fc(256),
            ] {
                layers.extend_from_slice(part);
            }
        }
    }
    layers.push(LinearOutput { units: OUTPUT_DIM });
    let stages = layers.iter().filter(|l| matches!(l, MaxPool { .. })).count() as u32;
    let needed = POOL.pow(stages);
    if input_window < needed {
        return Err(Error::Shape(format!(
            "{variant} needs a window of at least {needed} samples for {stages} pooling stages, got {input_window}"
        )));
    }
    let spec = NetworkSpec {
        name: variant.name().to_string(),
        layers,
        input_window,
        input_channels: INPUT_CHANNELS,
        output_dim: OUTPUT_DIM,
    };
    spec.shapes()?;
    Ok(spec)
}

/// Weights and bias of one conv or fc layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Shape>,
    params: Vec<Param>,
}

/// Per-layer buffers kept between a training forward pass and its backward.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    acts: Vec<Vec<f64>>,
    cols: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    scratch: Vec<f64>,
    grad: Vec<f64>,
    grad_next: Vec<f64>,
}

impl Workspace {
    pub(crate) fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], |a| a.as_slice())
    }

    pub(crate) fn activation(&self, layer: usize) -> &[f64] {
        &self.acts[layer]
    }

    pub(crate) fn pool_winners(&self, layer: usize) -> &[usize] {
        &self.argmax[layer]
    }
}

impl Network {
    /// He-uniform weights (limit sqrt(6 / fan_in)) and zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .param_shapes()?
            .into_iter()
            .map(|(w_shape, units)| {
                let fan_in: usize = w_shape[1..].iter().product();
                let limit = (6.0 / fan_in as f64).sqrt();
                let n: usize = w_shape.iter().product();
                let w = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                Ok(Param {
                    weights: Tensor::new(w_shape, w)?,
                    bias: Tensor::zeros(vec![units])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(spec, params)
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let params = spec
            .param_shapes()?
            .into_iter()
            .map(|(w, units)| {
                Ok(Param {
                    weights: Tensor::zeros(w)?,
                    bias: Tensor::zeros(vec![units])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(spec, params)
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<Param>) -> Result<Self> {
        let shapes = spec.shapes()?;
        let expected = spec.param_shapes()?;
        if expected.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} expects {} parameter layers, got {}",
                spec.name,
                expected.len(),
                params.len()
            )));
        }
        for (i, ((w, units), p)) in expected.iter().zip(&params).enumerate() {
            p.weights.expect_shape(&format!("layer {i} weights"), w)?;
            p.bias.expect_shape(&format!("layer {i} bias"), &[*units])?;
        }
        Ok(Self { spec, shapes, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.weights.len() + p.bias.len()).sum()
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_window * self.spec.input_channels
    }

    /// Prediction for one `[window, channels]` input.
    pub fn forward(&self, window: &Tensor) -> Result<Tensor> {
        window.expect_shape("network input", &[self.spec.input_window, self.spec.input_channels])?;
        let out = self.forward_batch(window.data(), 1)?;
        Tensor::new(vec![self.spec.output_dim], out)
    }

    /// Predictions for `batch` inputs stored back to back.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut ws = Workspace::default();
        self.forward_train(inputs, batch, &mut ws)?;
        Ok(ws.acts.pop().unwrap_or_default())
    }

    pub(crate) fn forward_train(&self, inputs: &[f64], batch: usize, ws: &mut Workspace) -> Result<()> {
        self.forward_from(0, inputs, batch, ws)
    }

    /// Index of the first parameter owned by layer `layer` or later.
    pub(crate) fn param_index_at(&self, layer: usize) -> usize {
        self.spec.layers[..layer].iter().filter(|l| l.has_params()).count()
    }

    /// Layer index owning parameter slot `p`.
    pub(crate) fn layer_of_param(&self, p: usize) -> usize {
        self.spec
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_params())
            .nth(p)
            .map(|(i, _)| i)
            .expect("parameter index in range")
    }

    /// Recomputes layers `start..` reusing the cached activations before it.
    pub(crate) fn forward_from(&self, start: usize, inputs: &[f64], batch: usize, ws: &mut Workspace) -> Result<()> {
        if batch == 0 || inputs.len() != batch * self.input_len() {
            return Err(Error::Shape(format!(
                "expected {batch} inputs of {} values, got {} values",
                self.input_len(),
                inputs.len()
            )));
        }
        let n = self.spec.layers.len();
        if start > 0 && ws.acts.len() != n {
            return Err(Error::InvalidArgument("partial forward without a cached pass".into()));
        }
        ws.acts.resize_with(n, Vec::new);
        ws.cols.resize_with(n, Vec::new);
        ws.argmax.resize_with(n, Vec::new);
        let mut prev_shape = if start == 0 {
            Shape::Series {
                time: self.spec.input_window,
                channels: self.spec.input_channels,
            }
        } else {
            self.shapes[start - 1]
        };
        let mut p = self.param_index_at(start);
        for i in start..n {
            let (done, rest) = ws.acts.split_at_mut(i);
            let input: &[f64] = if i == 0 { inputs } else { &done[i - 1] };
            let out = &mut rest[0];
            match self.spec.layers[i] {
                LayerSpec::Conv { filters, kernel } => {
                    let Shape::Series { time, channels } = prev_shape else { unreachable!() };
                    let d = ConvDims { batch, time, cin: channels, kernel, filters };
                    let prm = &self.params[p];
                    conv_forward_batch(&d, input, prm.weights.data(), prm.bias.data(), &mut ws.cols[i], &mut ws.scratch, out);
                    p += 1;
                }
                LayerSpec::MaxPool { pool } => {
                    let Shape::Series { time, channels } = prev_shape else { unreachable!() };
                    pool_forward_batch(batch, time, channels, pool, input, out, &mut ws.argmax[i]);
                }
                LayerSpec::Fc { units } | LayerSpec::LinearOutput { units } => {
                    let prm = &self.params[p];
                    fc_forward_batch(batch, prev_shape.len(), units, input, prm.weights.data(), prm.bias.data(), &mut ws.scratch, out);
                    p += 1;
                }
                LayerSpec::Relu => {
                    out.clear();
                    out.extend_from_slice(input);
                    relu_in_place(out);
                }
            }
            prev_shape = self.shapes[i];
        }
        Ok(())
    }

    /// Back-propagates `d_output` through the pass cached in `ws`,
    /// accumulating into `grads` (same layout as the parameters).
    pub(crate) fn backward(&self, inputs: &[f64], batch: usize, d_output: &[f64], ws: &mut Workspace, grads: &mut [Param]) {
        let n = self.spec.layers.len();
        ws.grad.clear();
        ws.grad.extend_from_slice(d_output);
        let mut p = self.params.len();
        for i in (0..n).rev() {
            let prev_shape = if i == 0 {
                Shape::Series {
                    time: self.spec.input_window,
                    channels: self.spec.input_channels,
                }
            } else {
                self.shapes[i - 1]
            };
            let input: &[f64] = if i == 0 { inputs } else { &ws.acts[i - 1] };
            let need_input = i > 0;
            match self.spec.layers[i] {
                LayerSpec::Conv { filters, kernel } => {
                    p -= 1;
                    let Shape::Series { time, channels } = prev_shape else { unreachable!() };
                    let d = ConvDims { batch, time, cin: channels, kernel, filters };
                    let g = &mut grads[p];
                    conv_backward_batch(
                        &d,
                        &ws.cols[i],
                        self.params[p].weights.data(),
                        &ws.grad,
                        g.weights.data_mut(),
                        g.bias.data_mut(),
                        &mut ws.scratch,
                        need_input.then_some(&mut ws.grad_next),
                    );
                }
                LayerSpec::MaxPool { .. } => {
                    pool_backward_batch(batch * prev_shape.len(), &ws.argmax[i], &ws.grad, &mut ws.grad_next);
                }
                LayerSpec::Fc { units } | LayerSpec::LinearOutput { units } => {
                    p -= 1;
                    let g = &mut grads[p];
                    fc_backward_batch(
                        batch,
                        prev_shape.len(),
                        units,
                        input,
                        self.params[p].weights.data(),
                        &ws.grad,
                        g.weights.data_mut(),
                        g.bias.data_mut(),
                        need_input.then_some(&mut ws.grad_next),
                    );
                }
                LayerSpec::Relu => {
                    relu_backward_in_place(&ws.acts[i], &mut ws.grad);
                    continue;
                }
            }
            if need_input {
                std::mem::swap(&mut ws.grad, &mut ws.grad_next);
            }
        }
    }

    /// Zero-filled gradient buffers shaped like the parameters.
    pub fn zero_grads(&self) -> Vec<Param> {
        self.params
            .iter()
            .map(|p| Param {
                weights: Tensor::new(p.weights.shape().to_vec(), vec![0.0; p.weights.len()]).unwrap(),
                bias: Tensor::new(p.bias.shape().to_vec(), vec![0.0; p.bias.len()]).unwrap(),
            })
            .collect()
    }

    /// Mean squared error over a batch and its parameter gradient.
    pub fn loss_and_grad(&self, inputs: &[f64], targets: &[f64], batch: usize) -> Result<(f64, Vec<Param>)> {
        let mut ws = Workspace::default();
        let mut grads = self.zero_grads();
        let loss = self.loss_and_grad_with(inputs, targets, batch, &mut ws, &mut grads)?;
        Ok((loss, grads))
    }

    pub(crate) fn loss_and_grad_with(
        &self,
        inputs: &[f64],
        targets: &[f64],
        batch: usize,
        ws: &mut Workspace,
        grads: &mut [Param],
    ) -> Result<f64> {
        if targets.len() != batch * self.spec.output_dim {
            return Err(Error::Shape(format!(
                "expected {} target values, got {}",
                batch * self.spec.output_dim,
                targets.len()
            )));
        }
        self.forward_train(inputs, batch, ws)?;
        let pred = ws.acts.last().expect("nonempty network");
        let (loss, d_out) = mse_and_grad(pred, targets);
        for g in grads.iter_mut() {
            g.weights.data_mut().fill(0.0);
            g.bias.data_mut().fill(0.0);
        }
        self.backward(inputs, batch, &d_out, ws, grads);
        Ok(loss)
    }

    /// Mean squared error of the network on a batch.
    pub fn loss(&self, inputs: &[f64], targets: &[f64], batch: usize) -> Result<f64> {
        let pred = self.forward_batch(inputs, batch)?;
        if pred.len() != targets.len() {
            return Err(Error::Shape("target length".into()));
        }
        Ok(mse_and_grad(&pred, targets).0)
    }
}

pub(crate) fn mse_and_grad(pred: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(targets)
        .map(|(y, t)| {
            let e = y - t;
            loss += e * e;
            2.0 * e / n
        })
        .collect();
    (loss / n, grad)
}
