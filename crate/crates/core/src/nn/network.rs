use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layer::{dense_backward, dense_forward, ConvGeometry, LayerSpec};
use super::{NnError, SgdConfig, Tensor};
use crate::seed::derive_seed;

/// Input shape plus the ordered layer chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Per-sample input shape: `[C, H, W]` for images or `[F]` for flat features.
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(input: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        Self { input, layers }
    }

    /// Per-sample shapes of every activation, `shapes[0]` being the input.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        if self.input.is_empty() || self.input.contains(&0) {
            return Err(NnError::Specification {
                index: 0,
                reason: format!("degenerate input shape {:?}", self.input),
            });
        }
        let mut shapes = vec![self.input.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.output_shape(i, shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_width(&self) -> Result<usize, NnError> {
        Ok(self.shapes()?.last().unwrap().iter().product())
    }

    /// Index of the last fully connected layer preceded by another fully connected layer;
    /// its input is the "last hidden layer" feature vector.
    pub fn penultimate_boundary(&self) -> Option<usize> {
        let dense: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Dense { .. }))
            .map(|(i, _)| i)
            .collect();
        if dense.len() < 2 {
            return None;
        }
        dense.last().copied()
    }

    /// The desk-scale regression network: three stride-2 3×3 conv + ReLU blocks
    /// followed by a rectified hidden FC layer and a linear FC output layer.
    ///
    /// Conv layers use He-scaled initialization (they stand in for pre-trained
    /// filters); FC layers keep the default `N(0, 0.005²)` draw.
    pub fn micro_net(extent: usize, options: &MicroNetOptions) -> Self {
        let mut layers = Vec::new();
        let mut channels = 1;
        let mut spatial = extent;
        for &out in &options.channels {
            let fan_in = (channels * 9) as f64;
            layers.push(LayerSpec::conv_down(channels, out).with_init_std((2.0 / fan_in).sqrt()));
            layers.push(LayerSpec::Relu);
            channels = out;
            spatial = (spatial + 2 - 3) / 2 + 1;
        }
        let flat = channels * spatial * spatial;
        layers.push(LayerSpec::dense(flat, options.feature_width));
        layers.push(LayerSpec::Relu);
        if options.dropout > 0.0 {
            layers.push(LayerSpec::Dropout {
                p: options.dropout,
            });
        }
        layers.push(LayerSpec::dense(options.feature_width, options.outputs));
        Self::new(vec![1, extent, extent], layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroNetOptions {
    pub channels: Vec<usize>,
    pub feature_width: usize,
    pub outputs: usize,
    pub dropout: f64,
}

impl Default for MicroNetOptions {
    fn default() -> Self {
        Self {
            channels: vec![4, 8, 8],
            feature_width: 128,
            outputs: 16,
            dropout: 0.0,
        }
    }
}

/// Trainable parameters of one layer together with their momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
    pub weight_velocity: Tensor,
    pub bias_velocity: Tensor,
}

/// Gradient of the objective with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Per-layer gradients; `None` for layers without parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn scale(&mut self, factor: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.weight.data_mut().iter_mut().for_each(|v| *v *= factor);
            g.bias.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Forward-pass behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout masks are drawn from a generator seeded by `seed`, the sample index and the layer.
    Train { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    shapes: Vec<Vec<usize>>,
    params: Vec<Option<Params>>,
    decay_multipliers: Vec<f64>,
}

/// Activations recorded during a forward pass, needed for backpropagation.
struct Trace {
    /// `inputs[l]` is the input of layer `l`; the final entry is the network output.
    activations: Vec<Vec<f64>>,
    dropout_masks: Vec<Option<Vec<f64>>>,
}

impl Network {
    /// Fresh network: weights drawn from `N(0, std²)` per layer, biases and momentum zeroed.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, NnError> {
        let shapes = arch.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "nn.init"));
        let mut params = Vec::with_capacity(arch.layers.len());
        for (index, layer) in arch.layers.iter().enumerate() {
            let Some((wshape, bshape)) = layer.param_shapes() else {
                params.push(None);
                continue;
            };
            let std = layer.init_std().unwrap();
            if !(std.is_finite() && std >= 0.0) {
                return Err(NnError::Specification {
                    index,
                    reason: format!("invalid init std {std}"),
                });
            }
            let normal = Normal::new(0.0, std).unwrap();
            let mut weight = Tensor::zeros(&wshape);
            weight
                .data_mut()
                .iter_mut()
                .for_each(|w| *w = normal.sample(&mut rng));
            params.push(Some(Params {
                weight_velocity: Tensor::zeros(&wshape),
                bias_velocity: Tensor::zeros(&bshape),
                bias: Tensor::zeros(&bshape),
                weight,
            }));
        }
        let decay_multipliers = vec![1.0; arch.layers.len()];
        Ok(Self {
            arch,
            shapes,
            params,
            decay_multipliers,
        })
    }

    pub(crate) fn from_parts(
        arch: Architecture,
        params: Vec<Option<Params>>,
        decay_multipliers: Vec<f64>,
    ) -> Result<Self, NnError> {
        let shapes = arch.shapes()?;
        if params.len() != arch.layers.len() || decay_multipliers.len() != arch.layers.len() {
            return Err(NnError::Format("layer count mismatch".into()));
        }
        for (i, (layer, p)) in arch.layers.iter().zip(&params).enumerate() {
            match (layer.param_shapes(), p) {
                (None, None) => {}
                (Some((ws, bs)), Some(p)) => {
                    if p.weight.shape() != ws.as_slice()
                        || p.weight_velocity.shape() != ws.as_slice()
                        || p.bias.shape() != bs.as_slice()
                        || p.bias_velocity.shape() != bs.as_slice()
                    {
                        return Err(NnError::Format(format!("parameter shapes of layer {i}")));
                    }
                }
                _ => return Err(NnError::Format(format!("parameter presence of layer {i}"))),
            }
        }
        Ok(Self {
            arch,
            shapes,
            params,
            decay_multipliers,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Option<Params>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<Params>] {
        &mut self.params
    }

    pub fn decay_multipliers(&self) -> &[f64] {
        &self.decay_multipliers
    }

    pub fn set_decay_multiplier(&mut self, layer: usize, value: f64) {
        self.decay_multipliers[layer] = value;
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_width(&self) -> usize {
        self.shapes.last().unwrap().iter().product()
    }

    /// Width of the activation entering layer `layer`.
    pub fn activation_width(&self, layer: usize) -> usize {
        self.shapes[layer].iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// All weights (biases excluded) in layer order.
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.params
            .iter()
            .flatten()
            .flat_map(|p| p.weight.data().iter().copied())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize, NnError> {
        let sample = &self.shapes[0];
        if batch.shape().len() != sample.len() + 1 || &batch.shape()[1..] != sample.as_slice() {
            let mut expected = vec![batch.rows()];
            expected.extend_from_slice(sample);
            return Err(NnError::ShapeMismatch {
                expected,
                actual: batch.shape().to_vec(),
            });
        }
        Ok(batch.rows())
    }

    fn run(&self, x: &[f64], mode: Mode, sample: usize, stop: usize) -> Trace {
        let mut activations = Vec::with_capacity(stop + 1);
        let mut dropout_masks = Vec::with_capacity(stop);
        activations.push(x.to_vec());
        for l in 0..stop {
            let input = activations.last().unwrap();
            let out_len: usize = self.shapes[l + 1].iter().product();
            let mut out = vec![0.0; out_len];
            let mut mask = None;
            match &self.arch.layers[l] {
                spec @ LayerSpec::Conv { .. } => {
                    let p = self.params[l].as_ref().unwrap();
                    ConvGeometry::new(spec, &self.shapes[l], &self.shapes[l + 1]).forward(
                        input,
                        p.weight.data(),
                        p.bias.data(),
                        &mut out,
                    );
                }
                LayerSpec::Dense { .. } => {
                    let p = self.params[l].as_ref().unwrap();
                    dense_forward(input, p.weight.data(), p.bias.data(), &mut out);
                }
                LayerSpec::Relu => {
                    for (o, &v) in out.iter_mut().zip(input) {
                        *o = v.max(0.0);
                    }
                }
                LayerSpec::Dropout { p } => match mode {
                    Mode::Train { seed } if *p > 0.0 => {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                            seed,
                            &format!("dropout.{sample}.{l}"),
                        ));
                        let keep = 1.0 - p;
                        let m: Vec<f64> = (0..out_len)
                            .map(|_| {
                                if rng.random::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        for ((o, &v), &s) in out.iter_mut().zip(input).zip(&m) {
                            *o = v * s;
                        }
                        mask = Some(m);
                    }
                    _ => out.copy_from_slice(input),
                },
            }
            activations.push(out);
            dropout_masks.push(mask);
        }
        Trace {
            activations,
            dropout_masks,
        }
    }

    /// Forward pass over a batch `[N, ...input]`; returns `[N, outputs]`.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Tensor, NnError> {
        self.activations(batch, self.arch.layers.len(), mode)
    }

    /// Activations entering layer `layer` (the network output when `layer == layers.len()`).
    pub fn activations(&self, batch: &Tensor, layer: usize, mode: Mode) -> Result<Tensor, NnError> {
        let n = self.check_batch(batch)?;
        let width = self.activation_width(layer);
        let mut data = Vec::with_capacity(n * width);
        for i in 0..n {
            let mut trace = self.run(batch.row(i), mode, i, layer);
            data.append(trace.activations.last_mut().unwrap());
        }
        Tensor::new(vec![n, width], data)
    }

    /// Forward for a single sample given as a flat slice.
    pub fn predict_one(&self, x: &[f64]) -> Vec<f64> {
        let mut trace = self.run(x, Mode::Eval, 0, self.arch.layers.len());
        trace.activations.pop().unwrap()
    }

    /// Sign pattern of every ReLU input over the batch; used to detect kinks in finite differences.
    pub fn relu_pattern(&self, batch: &Tensor) -> Result<Vec<bool>, NnError> {
        let n = self.check_batch(batch)?;
        let mut pattern = Vec::new();
        for i in 0..n {
            let trace = self.run(batch.row(i), Mode::Eval, i, self.arch.layers.len());
            for (l, layer) in self.arch.layers.iter().enumerate() {
                if matches!(layer, LayerSpec::Relu) {
                    pattern.extend(trace.activations[l].iter().map(|&v| v > 0.0));
                }
            }
        }
        Ok(pattern)
    }

    fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| ParamGrad {
                        weight: Tensor::zeros(p.weight.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect(),
        }
    }

    fn backward(&self, trace: &Trace, grad_out: Vec<f64>, grads: &mut Gradients) {
        let mut grad = grad_out;
        for l in (0..self.arch.layers.len()).rev() {
            let input = &trace.activations[l];
            let mut grad_in = vec![0.0; input.len()];
            match &self.arch.layers[l] {
                spec @ LayerSpec::Conv { .. } => {
                    let p = self.params[l].as_ref().unwrap();
                    let g = grads.layers[l].as_mut().unwrap();
                    ConvGeometry::new(spec, &self.shapes[l], &self.shapes[l + 1]).backward(
                        input,
                        p.weight.data(),
                        &grad,
                        g.weight.data_mut(),
                        g.bias.data_mut(),
                        (l > 0).then_some(grad_in.as_mut_slice()),
                    );
                }
                LayerSpec::Dense { .. } => {
                    let p = self.params[l].as_ref().unwrap();
                    let g = grads.layers[l].as_mut().unwrap();
                    dense_backward(
                        input,
                        p.weight.data(),
                        &grad,
                        g.weight.data_mut(),
                        g.bias.data_mut(),
                        &mut grad_in,
                    );
                }
                LayerSpec::Relu => {
                    for ((gi, &g), &x) in grad_in.iter_mut().zip(&grad).zip(input) {
                        *gi = if x > 0.0 { g } else { 0.0 };
                    }
                }
                LayerSpec::Dropout { .. } => match &trace.dropout_masks[l] {
                    Some(mask) => {
                        for ((gi, &g), &m) in grad_in.iter_mut().zip(&grad).zip(mask) {
                            *gi = g * m;
                        }
                    }
                    None => grad_in.copy_from_slice(&grad),
                },
            }
            if l == 0 {
                break;
            }
            grad = grad_in;
        }
    }

    /// Euclidean loss of the batch and its gradient with respect to every parameter.
    /// The L2 term is not included; it enters through [`Network::sgd_step`].
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor,
        targets: &Tensor,
        mode: Mode,
    ) -> Result<(f64, Gradients), NnError> {
        let n = self.check_batch(batch)?;
        let out_w = self.output_width();
        if targets.shape() != [n, out_w] {
            return Err(NnError::ShapeMismatch {
                expected: vec![n, out_w],
                actual: targets.shape().to_vec(),
            });
        }
        let m = n as f64;
        let mut grads = self.zero_gradients();
        let mut loss = 0.0;
        for i in 0..n {
            let trace = self.run(batch.row(i), mode, i, self.arch.layers.len());
            let pred = trace.activations.last().unwrap();
            let grad_out: Vec<f64> = pred
                .iter()
                .zip(targets.row(i))
                .map(|(f, y)| {
                    loss += (f - y) * (f - y);
                    (f - y) / m
                })
                .collect();
            self.backward(&trace, grad_out, &mut grads);
        }
        Ok((loss / (2.0 * m), grads))
    }

    /// `Σ_l d_l · Σ w²` over weights (biases excluded).
    pub fn weighted_square_norm(&self) -> f64 {
        self.params
            .iter()
            .zip(&self.decay_multipliers)
            .filter_map(|(p, d)| p.as_ref().map(|p| d * p.weight.sum_of_squares()))
            .sum()
    }

    /// One momentum SGD update with step-decayed learning rate and L2 weight decay.
    pub fn sgd_step(
        &mut self,
        grads: &Gradients,
        config: &SgdConfig,
        iteration: u64,
    ) -> Result<(), NnError> {
        if grads.layers.len() != self.params.len() {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.params.len()],
                actual: vec![grads.layers.len()],
            });
        }
        for (layer, (p, g)) in self.params.iter().zip(&grads.layers).enumerate() {
            match (p, g) {
                (Some(p), Some(g)) => {
                    if g.weight.shape() != p.weight.shape() || g.bias.shape() != p.bias.shape() {
                        return Err(NnError::ShapeMismatch {
                            expected: p.weight.shape().to_vec(),
                            actual: g.weight.shape().to_vec(),
                        });
                    }
                    if !g.weight.is_finite() || !g.bias.is_finite() {
                        return Err(NnError::NonFinite { layer });
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(NnError::ShapeMismatch {
                        expected: vec![layer],
                        actual: vec![],
                    })
                }
            }
        }
        let lr = config.learning_rate_at(iteration);
        let momentum = config.momentum;
        for ((p, g), &mult) in self
            .params
            .iter_mut()
            .zip(&grads.layers)
            .zip(&self.decay_multipliers)
        {
            let (Some(p), Some(g)) = (p, g) else { continue };
            let decay = config.weight_decay * mult;
            for ((w, v), &dw) in p
                .weight
                .data_mut()
                .iter_mut()
                .zip(p.weight_velocity.data_mut())
                .zip(g.weight.data())
            {
                *v = momentum * *v - lr * (dw + decay * *w);
                *w += *v;
            }
            for ((b, v), &db) in p
                .bias
                .data_mut()
                .iter_mut()
                .zip(p.bias_velocity.data_mut())
                .zip(g.bias.data())
            {
                *v = momentum * *v - lr * db;
                *b += *v;
            }
        }
        Ok(())
    }

    /// Reset every momentum buffer to zero.
    pub fn clear_momentum(&mut self) {
        for p in self.params.iter_mut().flatten() {
            p.weight_velocity.data_mut().iter_mut().for_each(|v| *v = 0.0);
            p.bias_velocity.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
