//! Dense and 1-D convolutional networks with hand-written backpropagation,
//! Adam/SGD training, a versioned weights file and the three-stage cascade.
//!
//! Activations of a batch are stored row-major, one sample after another.
//! Sequence activations are time-major (`len x channels` per sample), so a
//! convolution is an im2col followed by one matrix product and `Flatten` is a
//! reshape.

mod cascade;
mod gemm;
pub(crate) mod io;
mod train;

use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

pub use cascade::{route, CascadeModel, CascadePrediction, StageTimings};
pub use io::{load_weights, read_weights, save_weights, write_weights, FORMAT_VERSION, MAGIC};
pub use train::{
    gradient_check, train, train_xy, EpochStats, GradCheck, Optimizer, TrainConfig, TrainHistory,
};

use gemm::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Stride 1, zero "same" padding; `kernel` must be odd.
    Conv1D {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Flatten,
    Relu,
    Softmax,
}

impl Layer {
    fn has_params(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv1D { .. })
    }

    /// Weight and bias dimensions. Dense weights are `[outputs, inputs]`,
    /// convolution weights `[out_channels, kernel, in_channels]`.
    pub fn param_dims(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            Layer::Conv1D {
                in_channels,
                out_channels,
                kernel,
            } => Some((vec![out_channels, kernel, in_channels], vec![out_channels])),
            _ => None,
        }
    }
}

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Seq { len: usize, channels: usize },
}

impl Shape {
    pub fn size(self) -> usize {
        match self {
            Shape::Flat(n) => n,
            Shape::Seq { len, channels } => len * channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

fn shape_err(layer: usize, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        layer,
        detail: detail.into(),
    }
}

impl NetworkSpec {
    /// Activation shapes: the input followed by the output of every layer.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = vec![self.input];
        if self.input.size() == 0 {
            return Err(shape_err(0, "empty input"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let next = match (*layer, cur) {
                (Layer::Dense { inputs, outputs }, Shape::Flat(n)) => {
                    if inputs != n || outputs == 0 {
                        return Err(shape_err(
                            i,
                            format!("dense expects {inputs} inputs, receives {n}"),
                        ));
                    }
                    Shape::Flat(outputs)
                }
                (
                    Layer::Conv1D {
                        in_channels,
                        out_channels,
                        kernel,
                    },
                    Shape::Seq { len, channels },
                ) => {
                    if in_channels != channels || out_channels == 0 || kernel % 2 == 0 {
                        return Err(shape_err(
                            i,
                            format!("conv1d expects {in_channels} channels and an odd kernel, receives {channels} (kernel {kernel})"),
                        ));
                    }
                    Shape::Seq {
                        len,
                        channels: out_channels,
                    }
                }
                (Layer::Flatten, s) => Shape::Flat(s.size()),
                (Layer::Relu, s) => s,
                (Layer::Softmax, Shape::Flat(n)) => {
                    if i + 1 != self.layers.len() {
                        return Err(shape_err(i, "softmax must be the last layer"));
                    }
                    Shape::Flat(n)
                }
                (l, s) => return Err(shape_err(i, format!("{l:?} cannot take a {s:?} input"))),
            };
            shapes.push(next);
        }
        if self.layers.last() != Some(&Layer::Softmax) {
            return Err(shape_err(
                self.layers.len(),
                "the last layer must be softmax",
            ));
        }
        if self.layers.len() < 2 || !self.layers[self.layers.len() - 2].has_params() {
            return Err(shape_err(
                self.layers.len() - 1,
                "softmax must follow a dense or conv layer",
            ));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn input_size(&self) -> usize {
        self.input.size()
    }

    pub fn num_classes(&self) -> usize {
        self.shapes().map_or(0, |s| s.last().unwrap().size())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::param_dims)
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }

    /// Width of the first flattened activation, if any.
    pub fn flatten_width(&self) -> Option<usize> {
        let shapes = self.shapes().ok()?;
        self.layers
            .iter()
            .position(|l| *l == Layer::Flatten)
            .map(|i| shapes[i + 1].size())
    }

    /// One-line textual form, parsed back by [`NetworkSpec::parse`].
    pub fn canonical(&self) -> String {
        let mut s = match self.input {
            Shape::Flat(n) => format!("input flat {n}"),
            Shape::Seq { len, channels } => format!("input seq {len} {channels}"),
        };
        for l in &self.layers {
            let _ = match *l {
                Layer::Dense { inputs, outputs } => write!(s, "; dense {inputs} {outputs}"),
                Layer::Conv1D {
                    in_channels,
                    out_channels,
                    kernel,
                } => write!(s, "; conv1d {in_channels} {out_channels} {kernel}"),
                Layer::Flatten => write!(s, "; flatten"),
                Layer::Relu => write!(s, "; relu"),
                Layer::Softmax => write!(s, "; softmax"),
            };
        }
        s
    }

    pub fn parse(text: &str) -> Result<NetworkSpec> {
        let bad = || Error::format(format!("cannot parse network spec `{text}`"));
        let mut parts = text.split(';').map(str::trim);
        let head: Vec<&str> = parts.next().ok_or_else(bad)?.split_whitespace().collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
        let input = match head.as_slice() {
            ["input", "flat", n] => Shape::Flat(num(n)?),
            ["input", "seq", len, ch] => Shape::Seq {
                len: num(len)?,
                channels: num(ch)?,
            },
            _ => return Err(bad()),
        };
        let mut layers = Vec::new();
        for p in parts {
            let t: Vec<&str> = p.split_whitespace().collect();
            layers.push(match t.as_slice() {
                ["dense", i, o] => Layer::Dense {
                    inputs: num(i)?,
                    outputs: num(o)?,
                },
                ["conv1d", i, o, k] => Layer::Conv1D {
                    in_channels: num(i)?,
                    out_channels: num(o)?,
                    kernel: num(k)?,
                },
                ["flatten"] => Layer::Flatten,
                ["relu"] => Layer::Relu,
                ["softmax"] => Layer::Softmax,
                _ => return Err(bad()),
            });
        }
        let spec = NetworkSpec { input, layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }
}

/// Fully connected network `inputs -> hidden... -> classes` with ReLU
/// between hidden layers and a softmax output.
pub fn build_mlp(inputs: usize, hidden: &[usize], classes: usize) -> NetworkSpec {
    let mut layers = Vec::new();
    let mut prev = inputs;
    for &h in hidden {
        layers.push(Layer::Dense {
            inputs: prev,
            outputs: h,
        });
        layers.push(Layer::Relu);
        prev = h;
    }
    layers.push(Layer::Dense {
        inputs: prev,
        outputs: classes,
    });
    layers.push(Layer::Softmax);
    NetworkSpec {
        input: Shape::Flat(inputs),
        layers,
    }
}

/// Standalone ten-class dense network, 26-128-64-32-10.
pub fn build_ann() -> NetworkSpec {
    build_mlp(26, &[128, 64, 32], 10)
}

/// Output width of cascade stage `stage` (1, 2 or 3).
pub fn stage_classes(stage: usize) -> Result<usize> {
    match stage {
        1 => Ok(5),
        2 => Ok(4),
        3 => Ok(3),
        _ => Err(Error::config(format!(
            "cascade stage {stage} does not exist"
        ))),
    }
}

/// Dense stage network, 26-64-32-C.
pub fn build_stage_ann(stage: usize) -> Result<NetworkSpec> {
    Ok(build_mlp(26, &[64, 32], stage_classes(stage)?))
}

/// Two same-padded convolutions (32 and 64 filters, kernel 3) over the
/// 26 features as a one-channel sequence, then Dense 64 and Dense `classes`.
pub fn build_cnn(classes: usize) -> NetworkSpec {
    NetworkSpec {
        input: Shape::Seq {
            len: 26,
            channels: 1,
        },
        layers: vec![
            Layer::Conv1D {
                in_channels: 1,
                out_channels: 32,
                kernel: 3,
            },
            Layer::Relu,
            Layer::Conv1D {
                in_channels: 32,
                out_channels: 64,
                kernel: 3,
            },
            Layer::Relu,
            Layer::Flatten,
            Layer::Dense {
                inputs: 26 * 64,
                outputs: 64,
            },
            Layer::Relu,
            Layer::Dense {
                inputs: 64,
                outputs: classes,
            },
            Layer::Softmax,
        ],
    }
}

pub fn build_stage_cnn(stage: usize) -> Result<NetworkSpec> {
    Ok(build_cnn(stage_classes(stage)?))
}

/// A dense array with its dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: Vec<usize>) -> Tensor {
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![0.0; n],
        }
    }
}

/// Weight and bias of one layer; both empty for parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    fn empty() -> Self {
        LayerParams {
            weight: Tensor::zeros(vec![0]),
            bias: Tensor::zeros(vec![0]),
        }
    }

    fn is_empty(&self) -> bool {
        self.weight.data.is_empty() && self.bias.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: u32,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    /// One entry per layer of the spec.
    pub layers: Vec<LayerParams>,
    pub meta: TrainMeta,
}

impl NetworkWeights {
    pub fn zeros(spec: &NetworkSpec) -> NetworkWeights {
        NetworkWeights {
            layers: spec
                .layers
                .iter()
                .map(|l| match l.param_dims() {
                    Some((w, b)) => LayerParams {
                        weight: Tensor::zeros(w),
                        bias: Tensor::zeros(b),
                    },
                    None => LayerParams::empty(),
                })
                .collect(),
            meta: TrainMeta {
                seed: 0,
                epochs: 0,
                final_loss: f64::NAN,
            },
        }
    }

    /// He-normal weights for layers feeding a ReLU; the output layer uses a
    /// small N(0, 0.01) so the initial loss sits at `ln C`. Biases start at 0.
    pub fn init(spec: &NetworkSpec, seed: u64) -> NetworkWeights {
        let mut w = NetworkWeights::zeros(spec);
        w.meta.seed = seed;
        let mut rng = rng::stream(seed, &[0x1417]);
        let last = spec.layers.len() - 2;
        for (i, layer) in spec.layers.iter().enumerate() {
            let fan_in = match *layer {
                Layer::Dense { inputs, .. } => inputs,
                Layer::Conv1D {
                    in_channels,
                    kernel,
                    ..
                } => in_channels * kernel,
                _ => continue,
            };
            let std = if i == last {
                0.01
            } else {
                (2.0 / fan_in as f64).sqrt()
            };
            let dist = Normal::new(0.0, std).expect("positive std");
            for v in w.layers[i].weight.data.iter_mut() {
                *v = dist.sample(&mut rng);
            }
        }
        w
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight
                .data
                .iter()
                .chain(&l.bias.data)
                .all(|v| v.is_finite())
        })
    }

    /// Checks every tensor against `spec`, naming the first offending layer.
    pub fn check_shapes(&self, spec: &NetworkSpec) -> Result<()> {
        spec.validate()?;
        for (i, (p, l)) in self.layers.iter().zip(&spec.layers).enumerate() {
            match l.param_dims() {
                Some((w, b)) => {
                    if p.weight.dims != w || p.bias.dims != b {
                        return Err(shape_err(
                            i,
                            format!(
                                "weight {:?} / bias {:?}, spec expects {w:?} / {b:?}",
                                p.weight.dims, p.bias.dims
                            ),
                        ));
                    }
                    if p.weight.data.len() != w.iter().product::<usize>()
                        || p.bias.data.len() != b.iter().product::<usize>()
                    {
                        return Err(shape_err(i, "tensor data does not match its dimensions"));
                    }
                }
                None => {
                    if !p.is_empty() {
                        return Err(shape_err(i, format!("{l:?} carries no parameters")));
                    }
                }
            }
        }
        if self.layers.len() != spec.layers.len() {
            let layer = self.layers.len().min(spec.layers.len());
            return Err(shape_err(
                layer,
                format!(
                    "{} weight layers for a {}-layer spec",
                    self.layers.len(),
                    spec.layers.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Gradients with the same layout as [`NetworkWeights::layers`].
pub type Gradients = Vec<LayerParams>;

/// Per-batch intermediate values kept for the backward pass.
struct Cache {
    /// `acts[0]` is the input; `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
    /// im2col matrices of convolution layers.
    cols: Vec<Option<Vec<f64>>>,
    batch: usize,
}

/// A spec bound to weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Shape>,
    weights: NetworkWeights,
}

fn im2col(x: &[f64], batch: usize, len: usize, channels: usize, kernel: usize) -> Vec<f64> {
    let pad = kernel / 2;
    let width = kernel * channels;
    let mut cols = vec![0.0; batch * len * width];
    for b in 0..batch {
        let xs = &x[b * len * channels..(b + 1) * len * channels];
        for t in 0..len {
            let row = &mut cols[(b * len + t) * width..(b * len + t + 1) * width];
            for j in 0..kernel {
                let src = t + j;
                if src < pad || src - pad >= len {
                    continue;
                }
                let s = src - pad;
                row[j * channels..(j + 1) * channels]
                    .copy_from_slice(&xs[s * channels..(s + 1) * channels]);
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], batch: usize, len: usize, channels: usize, kernel: usize) -> Vec<f64> {
    let pad = kernel / 2;
    let width = kernel * channels;
    let mut dx = vec![0.0; batch * len * channels];
    for b in 0..batch {
        for t in 0..len {
            let row = &dcols[(b * len + t) * width..(b * len + t + 1) * width];
            for j in 0..kernel {
                let src = t + j;
                if src < pad || src - pad >= len {
                    continue;
                }
                let s = src - pad;
                let dst = &mut dx[(b * len + s) * channels..(b * len + s + 1) * channels];
                for (d, v) in dst.iter_mut().zip(&row[j * channels..(j + 1) * channels]) {
                    *d += v;
                }
            }
        }
    }
    dx
}

fn add_bias(y: &mut [f64], bias: &[f64]) {
    for row in y.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (z, p) in logits
        .chunks_exact(classes)
        .zip(out.chunks_exact_mut(classes))
    {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (pi, zi) in p.iter_mut().zip(z) {
            *pi = (zi - m).exp();
            sum += *pi;
        }
        for pi in p.iter_mut() {
            *pi /= sum;
        }
    }
    out
}

/// Mean cross-entropy of a batch computed from logits (log-sum-exp form).
fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> f64 {
    let total: f64 = logits
        .chunks_exact(classes)
        .zip(labels)
        .map(|(z, &y)| {
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[y]
        })
        .sum();
    total / labels.len() as f64
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

impl Network {
    pub fn new(spec: NetworkSpec, weights: NetworkWeights) -> Result<Network> {
        let shapes = spec.shapes()?;
        weights.check_shapes(&spec)?;
        Ok(Network {
            spec,
            shapes,
            weights,
        })
    }

    /// A freshly initialized network (see [`NetworkWeights::init`]).
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Network> {
        let w = NetworkWeights::init(&spec, seed);
        Network::new(spec, w)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut NetworkWeights {
        &mut self.weights
    }

    pub fn into_weights(self) -> NetworkWeights {
        self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap().size()
    }

    pub fn input_size(&self) -> usize {
        self.shapes[0].size()
    }

    fn check_input(&self, x: &[f64], batch: usize) -> Result<()> {
        if batch == 0 || x.len() != batch * self.input_size() {
            return Err(shape_err(
                0,
                format!(
                    "input of {} values is not a batch of {}-wide rows",
                    x.len(),
                    self.input_size()
                ),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite network input"));
        }
        Ok(())
    }

    /// Output of layer `i` for a batch, plus the im2col matrix of a
    /// convolution.
    fn apply_layer(&self, i: usize, input: &[f64], batch: usize) -> (Vec<f64>, Option<Vec<f64>>) {
        let p = &self.weights.layers[i];
        match self.spec.layers[i] {
            Layer::Dense { inputs, outputs } => {
                let mut y = vec![0.0; batch * outputs];
                gemm(
                    batch,
                    inputs,
                    outputs,
                    input,
                    false,
                    &p.weight.data,
                    true,
                    &mut y,
                    0.0,
                );
                add_bias(&mut y, &p.bias.data);
                (y, None)
            }
            Layer::Conv1D {
                in_channels,
                out_channels,
                kernel,
            } => {
                let Shape::Seq { len, .. } = self.shapes[i] else {
                    unreachable!("validated shape")
                };
                let c = im2col(input, batch, len, in_channels, kernel);
                let mut y = vec![0.0; batch * len * out_channels];
                gemm(
                    batch * len,
                    kernel * in_channels,
                    out_channels,
                    &c,
                    false,
                    &p.weight.data,
                    true,
                    &mut y,
                    0.0,
                );
                add_bias(&mut y, &p.bias.data);
                (y, Some(c))
            }
            Layer::Flatten => (input.to_vec(), None),
            Layer::Relu => (input.iter().map(|v| v.max(0.0)).collect(), None),
            Layer::Softmax => unreachable!("softmax is applied separately"),
        }
    }

    /// Runs every layer except the final softmax; the last cached activation
    /// holds the logits.
    fn forward_cache(&self, x: &[f64], batch: usize) -> Cache {
        let n_layers = self.spec.layers.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut cols = vec![None; n_layers];
        acts.push(x.to_vec());
        for i in 0..n_layers - 1 {
            let (out, c) = self.apply_layer(i, acts.last().unwrap(), batch);
            cols[i] = c;
            acts.push(out);
        }
        Cache { acts, cols, batch }
    }

    /// Logits from the input of layer `start` onward.
    fn forward_from(&self, start: usize, mut act: Vec<f64>, batch: usize) -> Vec<f64> {
        for i in start..self.spec.layers.len() - 1 {
            act = self.apply_layer(i, &act, batch).0;
        }
        act
    }

    /// Class probabilities for a batch of `batch` rows stored back to back.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(x, batch)?;
        let cache = self.forward_cache(x, batch);
        Ok(softmax_rows(cache.acts.last().unwrap(), self.num_classes()))
    }

    /// Class probabilities for one input row.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(x, 1)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.forward(x).map(|p| argmax(&p))
    }

    /// Mean cross-entropy of a labeled batch.
    pub fn loss(&self, x: &[f64], labels: &[usize]) -> Result<f64> {
        self.check_input(x, labels.len())?;
        self.check_labels(labels)?;
        let cache = self.forward_cache(x, labels.len());
        Ok(cross_entropy(
            cache.acts.last().unwrap(),
            labels,
            self.num_classes(),
        ))
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        let c = self.num_classes();
        match labels.iter().find(|&&l| l >= c) {
            Some(l) => Err(Error::input(format!(
                "label {l} outside the {c} network outputs"
            ))),
            None => Ok(()),
        }
    }

    /// Mean cross-entropy, its gradient with respect to every parameter, and
    /// the batch's probabilities.
    pub fn loss_and_grad(&self, x: &[f64], labels: &[usize]) -> Result<(f64, Gradients, Vec<f64>)> {
        let batch = labels.len();
        self.check_input(x, batch)?;
        self.check_labels(labels)?;
        let cache = self.forward_cache(x, batch);
        let classes = self.num_classes();
        let logits = cache.acts.last().unwrap();
        let loss = cross_entropy(logits, labels, classes);
        let probs = softmax_rows(logits, classes);
        let mut delta = probs.clone();
        for (row, &y) in delta.chunks_exact_mut(classes).zip(labels) {
            row[y] -= 1.0;
        }
        for v in delta.iter_mut() {
            *v /= batch as f64;
        }
        let grads = self.backward(&cache, delta);
        Ok((loss, grads, probs))
    }

    fn backward(&self, cache: &Cache, mut delta: Vec<f64>) -> Gradients {
        let batch = cache.batch;
        let n_layers = self.spec.layers.len();
        let mut grads: Gradients = NetworkWeights::zeros(&self.spec).layers;
        for i in (0..n_layers - 1).rev() {
            let input = &cache.acts[i];
            let p = &self.weights.layers[i];
            delta = match self.spec.layers[i] {
                Layer::Dense { inputs, outputs } => {
                    let g = &mut grads[i];
                    gemm(
                        outputs,
                        batch,
                        inputs,
                        &delta,
                        true,
                        input,
                        false,
                        &mut g.weight.data,
                        0.0,
                    );
                    for row in delta.chunks_exact(outputs) {
                        for (b, d) in g.bias.data.iter_mut().zip(row) {
                            *b += d;
                        }
                    }
                    if i == 0 {
                        break;
                    }
                    let mut dx = vec![0.0; batch * inputs];
                    gemm(
                        batch,
                        outputs,
                        inputs,
                        &delta,
                        false,
                        &p.weight.data,
                        false,
                        &mut dx,
                        0.0,
                    );
                    dx
                }
                Layer::Conv1D {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let Shape::Seq { len, .. } = self.shapes[i] else {
                        unreachable!("validated shape")
                    };
                    let cols = cache.cols[i].as_ref().expect("conv cache");
                    let width = kernel * in_channels;
                    let g = &mut grads[i];
                    gemm(
                        out_channels,
                        batch * len,
                        width,
                        &delta,
                        true,
                        cols,
                        false,
                        &mut g.weight.data,
                        0.0,
                    );
                    for row in delta.chunks_exact(out_channels) {
                        for (b, d) in g.bias.data.iter_mut().zip(row) {
                            *b += d;
                        }
                    }
                    if i == 0 {
                        break;
                    }
                    let mut dcols = vec![0.0; batch * len * width];
                    gemm(
                        batch * len,
                        out_channels,
                        width,
                        &delta,
                        false,
                        &p.weight.data,
                        false,
                        &mut dcols,
                        0.0,
                    );
                    col2im(&dcols, batch, len, in_channels, kernel)
                }
                Layer::Flatten => delta,
                Layer::Relu => {
                    let out = &cache.acts[i + 1];
                    delta
                        .iter()
                        .zip(out)
                        .map(|(d, o)| if *o > 0.0 { *d } else { 0.0 })
                        .collect()
                }
                Layer::Softmax => unreachable!("softmax is last"),
            };
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_arithmetic() {
        let ann = build_ann();
        assert_eq!(
            ann.param_count(),
            26 * 128 + 128 + 128 * 64 + 64 + 64 * 32 + 32 + 32 * 10 + 10
        );
        assert_eq!(ann.param_count(), 14_122);
        assert_eq!(ann.num_classes(), 10);
        for (stage, c) in [(1, 5), (2, 4), (3, 3)] {
            assert_eq!(build_stage_ann(stage).unwrap().num_classes(), c);
            assert_eq!(build_stage_cnn(stage).unwrap().num_classes(), c);
        }
        assert!(build_stage_ann(4).is_err());
        let cnn = build_cnn(10);
        assert_eq!(cnn.flatten_width(), Some(1664));
        assert_eq!(cnn.num_classes(), 10);
    }

    #[test]
    fn spec_text_round_trip() {
        for spec in [build_ann(), build_cnn(10), build_stage_ann(2).unwrap()] {
            assert_eq!(NetworkSpec::parse(&spec.canonical()).unwrap(), spec);
        }
        assert_ne!(build_ann().digest(), build_cnn(10).digest());
        assert!(NetworkSpec::parse("input flat 26; dense 26 3").is_err());
        assert!(NetworkSpec::parse("input flat 26; dense 25 3; softmax").is_err());
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        for spec in [build_ann(), build_cnn(7)] {
            let c = spec.num_classes();
            let net = Network::new(spec.clone(), NetworkWeights::zeros(&spec)).unwrap();
            let p = net.forward(&[0.3; 26]).unwrap();
            assert!(p.iter().all(|v| (v - 1.0 / c as f64).abs() < 1e-15));
        }
    }

    #[test]
    fn softmax_shift_invariance_and_purity() {
        let mut net = Network::init(build_cnn(10), 3).unwrap();
        let x: Vec<f64> = (0..26).map(|i| (i as f64 * 0.77).sin()).collect();
        let p = net.forward(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|v| *v >= 0.0));
        assert_eq!(net.forward(&x).unwrap(), p);
        let last = net.spec().layers.len() - 2;
        for b in net.weights_mut().layers[last].bias.data.iter_mut() {
            *b += 3.5;
        }
        let q = net.forward(&x).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn input_validation() {
        let net = Network::init(build_ann(), 0).unwrap();
        assert!(matches!(
            net.forward(&[0.0; 25]),
            Err(Error::ShapeMismatch { .. })
        ));
        let mut x = [0.0; 26];
        x[3] = f64::NAN;
        assert!(net.forward(&x).is_err());
        assert!(net.loss(&[0.0; 26], &[10]).is_err());
    }

    #[test]
    fn batch_equals_rows() {
        let net = Network::init(build_cnn(4), 9).unwrap();
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|r| (0..26).map(|i| ((r * 26 + i) as f64).cos()).collect())
            .collect();
        let flat: Vec<f64> = rows.concat();
        let pb = net.forward_batch(&flat, 5).unwrap();
        for (r, row) in rows.iter().enumerate() {
            let p = net.forward(row).unwrap();
            for (a, b) in p.iter().zip(&pb[r * 4..(r + 1) * 4]) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    /// Direct convolution, independent of im2col and the GEMM kernel.
    #[test]
    fn conv_matches_direct_sum() {
        let spec = NetworkSpec {
            input: Shape::Seq {
                len: 6,
                channels: 2,
            },
            layers: vec![
                Layer::Conv1D {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                },
                Layer::Flatten,
                Layer::Dense {
                    inputs: 18,
                    outputs: 2,
                },
                Layer::Softmax,
            ],
        };
        let net = Network::init(spec, 4).unwrap();
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).sin()).collect();
        let cache = net.forward_cache(&x, 1);
        let w = &net.weights().layers[0];
        for t in 0..6 {
            for o in 0..3 {
                let mut s = w.bias.data[o];
                for j in 0..3 {
                    let src = t as i64 + j as i64 - 1;
                    if !(0..6).contains(&src) {
                        continue;
                    }
                    for c in 0..2 {
                        s += w.weight.data[(o * 3 + j) * 2 + c] * x[src as usize * 2 + c];
                    }
                }
                assert!((cache.acts[1][t * 3 + o] - s).abs() < 1e-14);
            }
        }
    }
}
