use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::layers::{
    linear_backward, linear_forward, relu, relu_backward, softmax_cross_entropy, Conv3d, Im2Col, MaxPool3d,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of independent gradient accumulators per batch. Fixed so the
/// reduction order never depends on the thread count.
const GRAD_CHUNKS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv(Conv3d),
    Relu,
    Pool(MaxPool3d),
    Flatten,
    Linear { inputs: usize, outputs: usize },
}

impl Layer {
    fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::Pool(_) => "pool",
            Layer::Flatten => "flatten",
            Layer::Linear { .. } => "fc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    /// `[channels, depth, height, width]` of one example.
    pub input: [usize; 4],
    pub layers: Vec<Layer>,
}

/// One step of the dry run: a layer label and its output shape.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ShapeStep {
    pub layer: String,
    pub shape: Vec<usize>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::eeg(32, 5, 3)
    }
}

impl NetworkSpec {
    /// Two conv-conv-pool stages (32 then 64 channels) and a two-way linear
    /// head, for `[1, channels, bands, frames]` inputs.
    pub fn eeg(channels: usize, bands: usize, frames: usize) -> Self {
        let conv = |i, o| {
            Layer::Conv(Conv3d {
                in_channels: i,
                out_channels: o,
                kernel: [3; 3],
                stride: [1; 3],
                pad: [1; 3],
            })
        };
        let pool = Layer::Pool(MaxPool3d {
            kernel: [2; 3],
            stride: [2; 3],
            pad: [0, 1, 1],
        });
        let input = [1, channels, bands, frames];
        let mut layers = vec![
            conv(1, 32),
            Layer::Relu,
            conv(32, 32),
            Layer::Relu,
            pool,
            conv(32, 64),
            Layer::Relu,
            conv(64, 64),
            Layer::Relu,
            pool,
            Layer::Flatten,
        ];
        let flat = Self {
            input,
            layers: layers.clone(),
        }
        .shape_chain()
        .ok()
        .and_then(|c| c.last().map(|s| s.shape[0]))
        .unwrap_or(0);
        layers.push(Layer::Linear {
            inputs: flat,
            outputs: 2,
        });
        Self { input, layers }
    }

    /// Propagates the input shape through every layer, failing on the first
    /// inconsistency.
    pub fn shape_chain(&self) -> Result<Vec<ShapeStep>> {
        let mut shape = self.input.to_vec();
        let mut steps = Vec::with_capacity(self.layers.len());
        let mut counters = [0usize; 5];
        for layer in &self.layers {
            shape = match *layer {
                Layer::Conv(c) => {
                    if shape.len() != 4 || shape[0] != c.in_channels {
                        return Err(Error::shape("conv3d input", &shape, &[c.in_channels]));
                    }
                    let d = super::layers::output_dims([shape[1], shape[2], shape[3]], c.kernel, c.stride, c.pad)?;
                    vec![c.out_channels, d[0], d[1], d[2]]
                }
                Layer::Relu => shape,
                Layer::Pool(p) => {
                    if shape.len() != 4 {
                        return Err(Error::InvalidShape {
                            shape,
                            reason: "pool expects a 4-d activation".into(),
                        });
                    }
                    let d = p.output_dims([shape[1], shape[2], shape[3]])?;
                    vec![shape[0], d[0], d[1], d[2]]
                }
                Layer::Flatten => vec![shape.iter().product()],
                Layer::Linear { inputs, outputs } => {
                    if shape != [inputs] {
                        return Err(Error::shape("linear input", &shape, &[inputs]));
                    }
                    vec![outputs]
                }
            };
            let slot = match layer {
                Layer::Conv(_) => 0,
                Layer::Relu => 1,
                Layer::Pool(_) => 2,
                Layer::Flatten => 3,
                Layer::Linear { .. } => 4,
            };
            counters[slot] += 1;
            steps.push(ShapeStep {
                layer: format!("{}{}", layer.name(), counters[slot]),
                shape: shape.clone(),
            });
        }
        match steps.last() {
            Some(s) if s.shape.len() == 1 => Ok(steps),
            _ => Err(Error::Config("network must end in a flat class-score vector".into())),
        }
    }

    pub fn classes(&self) -> Result<usize> {
        Ok(self.shape_chain()?.last().expect("non-empty").shape[0])
    }

    /// Name and shape of every learnable tensor, in parameter order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let (mut convs, mut fcs) = (0, 0);
        for layer in &self.layers {
            match *layer {
                Layer::Conv(c) => {
                    convs += 1;
                    out.push((format!("conv{convs}.weight"), c.weight_shape().to_vec()));
                    out.push((format!("conv{convs}.bias"), vec![c.out_channels]));
                }
                Layer::Linear { inputs, outputs } => {
                    fcs += 1;
                    out.push((format!("fc{fcs}.weight"), vec![outputs, inputs]));
                    out.push((format!("fc{fcs}.bias"), vec![outputs]));
                }
                _ => {}
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Param>,
    pub rng_seed: u64,
}

impl ModelParams {
    /// He-normal weights, zero biases.
    pub fn he_init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = spec
            .parameter_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let value = if name.ends_with(".weight") {
                    let fan_in: usize = shape[1..].iter().product();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    let n = shape.iter().product();
                    Tensor::new(&shape, (0..n).map(|_| normal.sample(&mut rng)).collect()).expect("shape")
                } else {
                    Tensor::zeros(&shape)
                };
                Param {
                    name,
                    grad: Tensor::zeros_like(&value),
                    value,
                }
            })
            .collect();
        Self {
            tensors,
            rng_seed: seed,
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.tensors {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|p| p.value.data().iter().all(|v| v.is_finite()))
    }
}

enum Cache {
    Conv(Im2Col),
    Relu(Tensor),
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Flatten(Vec<usize>),
    Linear(Vec<f64>),
}

/// ReLU on/off states and pool winners for one input; two inputs with the
/// same pattern lie on the same linear piece of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationPattern {
    relu: Vec<bool>,
    pools: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: ModelParams,
}

impl Network {
    /// Validates the shape chain and initialises parameters.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.shape_chain()?;
        let params = ModelParams::he_init(&spec, seed);
        Ok(Self { spec, params })
    }

    /// Wraps existing parameters after checking them against the spec.
    pub fn with_params(spec: NetworkSpec, params: ModelParams) -> Result<Self> {
        spec.shape_chain()?;
        let expected = spec.parameter_shapes();
        if expected.len() != params.tensors.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.tensors.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(&params.tensors) {
            if name != &p.name || shape.as_slice() != p.value.shape() || p.grad.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "parameter {} {:?} does not match {name} {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    fn input_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let want = &self.spec.input;
        if x.shape() == want {
            Ok(x.clone())
        } else if want[0] == 1 && x.shape() == &want[1..] {
            x.reshape(want)
        } else {
            Err(Error::shape("network input", x.shape(), want))
        }
    }

    fn run(&self, x: &Tensor, mut caches: Option<&mut Vec<Cache>>) -> Result<Tensor> {
        let mut act = self.input_tensor(x)?;
        let mut p = 0;
        for layer in &self.spec.layers {
            act = match *layer {
                Layer::Conv(c) => {
                    let (w, b) = (&self.params.tensors[p].value, &self.params.tensors[p + 1].value);
                    p += 2;
                    let (out, lowered) = c.forward(&act, w.data(), b.data())?;
                    if let Some(cs) = caches.as_deref_mut() {
                        cs.push(Cache::Conv(lowered));
                    }
                    out
                }
                Layer::Relu => {
                    let out = relu(&act);
                    if let Some(cs) = caches.as_deref_mut() {
                        cs.push(Cache::Relu(act));
                    }
                    out
                }
                Layer::Pool(pool) => {
                    let (out, argmax) = pool.forward(&act)?;
                    if let Some(cs) = caches.as_deref_mut() {
                        cs.push(Cache::Pool {
                            input_shape: act.shape().to_vec(),
                            argmax,
                        });
                    }
                    out
                }
                Layer::Flatten => {
                    let shape = act.shape().to_vec();
                    let n = act.len();
                    if let Some(cs) = caches.as_deref_mut() {
                        cs.push(Cache::Flatten(shape));
                    }
                    act.reshape(&[n])?
                }
                Layer::Linear { outputs, .. } => {
                    let (w, b) = (&self.params.tensors[p].value, &self.params.tensors[p + 1].value);
                    p += 2;
                    let y = linear_forward(act.data(), w, b)?;
                    if let Some(cs) = caches.as_deref_mut() {
                        cs.push(Cache::Linear(act.into_data()));
                    }
                    Tensor::new(&[outputs], y)?
                }
            };
        }
        Ok(act)
    }

    /// Class scores for one `[1, C, B, F]` (or `[C, B, F]`) example.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.run(x, None)?.into_data())
    }

    pub fn forward_batch(&self, xs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        xs.par_iter().map(|x| self.forward(x)).collect()
    }

    pub fn predict(&self, x: &Tensor) -> Result<u8> {
        Ok(argmax(&self.forward(x)?) as u8)
    }

    pub fn activation_pattern(&self, x: &Tensor) -> Result<ActivationPattern> {
        let mut caches = Vec::new();
        self.run(x, Some(&mut caches))?;
        let mut pattern = ActivationPattern {
            relu: Vec::new(),
            pools: Vec::new(),
        };
        for c in caches {
            match c {
                Cache::Relu(pre) => pattern.relu.extend(pre.data().iter().map(|&v| v > 0.0)),
                Cache::Pool { argmax, .. } => pattern.pools.extend(argmax),
                _ => {}
            }
        }
        Ok(pattern)
    }

    /// Mean cross-entropy over a batch.
    pub fn loss(&self, xs: &[&Tensor], labels: &[u8]) -> Result<f64> {
        let logits = xs.par_iter().map(|x| self.forward(x)).collect::<Result<Vec<_>>>()?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    }

    /// Runs one example forward, then backpropagates `dlogits(logits)` into
    /// `grads`. Returns the logits.
    fn backprop_example(
        &self,
        x: &Tensor,
        dlogits: impl FnOnce(&[f64]) -> Result<Vec<f64>>,
        grads: &mut [Vec<f64>],
    ) -> Result<Vec<f64>> {
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let logits = self.run(x, Some(&mut caches))?.into_data();
        let d = dlogits(&logits)?;
        let mut grad = Tensor::new(&[d.len()], d)?;
        let mut p = self.params.tensors.len();
        let first_param_layer = self
            .spec
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Conv(_) | Layer::Linear { .. }));
        for (i, (layer, cache)) in self.spec.layers.iter().zip(caches).enumerate().rev() {
            let need_input = Some(i) != first_param_layer;
            grad = match (layer, cache) {
                (Layer::Conv(c), Cache::Conv(lowered)) => {
                    p -= 2;
                    let g = c.backward(&lowered, self.params.tensors[p].value.data(), &grad, need_input)?;
                    axpy(&mut grads[p], &g.weight);
                    axpy(&mut grads[p + 1], &g.bias);
                    match g.input {
                        Some(t) => t,
                        None => break,
                    }
                }
                (Layer::Relu, Cache::Relu(pre)) => relu_backward(&pre, &grad),
                (Layer::Pool(pool), Cache::Pool { input_shape, argmax }) => {
                    pool.backward(&input_shape, &argmax, &grad)?
                }
                (Layer::Flatten, Cache::Flatten(shape)) => grad.reshape(&shape)?,
                (Layer::Linear { inputs, .. }, Cache::Linear(input)) => {
                    p -= 2;
                    let (dx, dw, db) = linear_backward(&input, &self.params.tensors[p].value, grad.data());
                    axpy(&mut grads[p], &dw);
                    axpy(&mut grads[p + 1], &db);
                    if !need_input {
                        break;
                    }
                    Tensor::new(&[*inputs], dx)?
                }
                _ => unreachable!("cache order follows layer order"),
            };
        }
        Ok(logits)
    }

    /// Mean cross-entropy over the batch and its gradient, written into the
    /// parameters' gradient buffers. Returns the loss and the logits.
    pub fn backward(&mut self, xs: &[&Tensor], labels: &[u8]) -> Result<(f64, Vec<Vec<f64>>)> {
        if xs.len() != labels.len() {
            return Err(Error::shape("backward batch", &[xs.len()], &[labels.len()]));
        }
        if xs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidLabel(bad));
        }
        let batch = xs.len() as f64;
        let chunk = xs.len().div_ceil(GRAD_CHUNKS);
        let zeros = || -> Vec<Vec<f64>> { self.params.tensors.iter().map(|p| vec![0.0; p.value.len()]).collect() };
        let partials = xs
            .par_chunks(chunk)
            .zip(labels.par_chunks(chunk))
            .map(|(xc, yc)| {
                let mut acc = zeros();
                let mut losses = Vec::with_capacity(xc.len());
                let mut logits = Vec::with_capacity(xc.len());
                for (x, &y) in xc.iter().zip(yc) {
                    let mut loss = 0.0;
                    let z = self.backprop_example(
                        x,
                        |z| {
                            let (l, g) = softmax_cross_entropy(&[z.to_vec()], &[y])?;
                            loss = l;
                            Ok(g[0].iter().map(|v| v / batch).collect())
                        },
                        &mut acc,
                    )?;
                    losses.push(loss);
                    logits.push(z);
                }
                Ok((acc, losses, logits))
            })
            .collect::<Result<Vec<_>>>()?;
        self.params.zero_grad();
        let mut loss = 0.0;
        let mut all_logits = Vec::with_capacity(xs.len());
        for (part, losses, logits) in partials {
            for (param, g) in self.params.tensors.iter_mut().zip(part) {
                axpy(param.grad.data_mut(), &g);
            }
            loss += losses.iter().sum::<f64>();
            all_logits.extend(logits);
        }
        Ok((loss / batch, all_logits))
    }
}

fn axpy(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
