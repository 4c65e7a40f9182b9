//! Mini-batch training and finite-difference gradient checking.

use rand::seq::SliceRandom;

use super::{argmax, cross_entropy, Gradients, Layer, Network, NetworkSpec, NetworkWeights};
use crate::dataset::{train_count, Dataset};
use crate::error::{Error, Result};
use crate::rng;

const SHUFFLE_STREAM: u64 = 0x5F0F;
const HOLDOUT_STREAM: u64 = 0x401D;
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Adam { .. } => "adam",
            Optimizer::Sgd => "sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Epochs without a validation-loss improvement before stopping; 0
    /// disables early stopping.
    pub early_stop_patience: usize,
    /// Share of each class held out of training to drive early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            early_stop_patience: 20,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::config("epochs and batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation fraction must lie in [0, 1)"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::config(
                    "Adam needs betas in [0, 1) and a positive epsilon",
                ));
            }
        }
        Ok(())
    }

    fn uses_holdout(&self) -> bool {
        self.early_stop_patience > 0 && self.validation_fraction > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Loss over the training rows before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_rows: usize,
    pub val_rows: usize,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

fn flat_params(w: &mut NetworkWeights) -> impl Iterator<Item = &mut Vec<f64>> {
    w.layers
        .iter_mut()
        .flat_map(|l| [&mut l.weight.data, &mut l.bias.data])
}

fn flat_grads(g: &Gradients) -> impl Iterator<Item = &Vec<f64>> {
    g.iter().flat_map(|l| [&l.weight.data, &l.bias.data])
}

impl Adam {
    fn new(w: &NetworkWeights) -> Self {
        let sizes: Vec<usize> = w
            .layers
            .iter()
            .flat_map(|l| [l.weight.data.len(), l.bias.data.len()])
            .collect();
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

fn step(w: &mut NetworkWeights, g: &Gradients, cfg: &TrainConfig, adam: &mut Adam) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, d) in flat_params(w).zip(flat_grads(g)) {
                for (pi, di) in p.iter_mut().zip(d) {
                    *pi -= lr * di;
                }
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            adam.t += 1;
            let c1 = 1.0 - beta1.powi(adam.t);
            let c2 = 1.0 - beta2.powi(adam.t);
            for (((p, d), m), v) in flat_params(w)
                .zip(flat_grads(g))
                .zip(adam.m.iter_mut())
                .zip(adam.v.iter_mut())
            {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * d[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * d[i] * d[i];
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

fn gather(x: &[f64], width: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&x[r * width..(r + 1) * width]);
    }
    out
}

/// Mean loss and accuracy of `net` over `rows`.
fn evaluate(net: &Network, x: &[f64], labels: &[usize], rows: &[usize]) -> (f64, f64) {
    let width = net.input_size();
    let classes = net.num_classes();
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in rows.chunks(EVAL_CHUNK) {
        let xb = gather(x, width, chunk);
        let yb: Vec<usize> = chunk.iter().map(|&r| labels[r]).collect();
        let cache = net.forward_cache(&xb, chunk.len());
        let logits = cache.acts.last().unwrap();
        loss += cross_entropy(logits, &yb, classes) * chunk.len() as f64;
        correct += logits
            .chunks_exact(classes)
            .zip(&yb)
            .filter(|(z, &y)| argmax(z) == y)
            .count();
    }
    (loss / rows.len() as f64, correct as f64 / rows.len() as f64)
}

/// Splits row indices into (train, validation) per class.
fn holdout(labels: &[usize], classes: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    if !cfg.uses_holdout() {
        return ((0..labels.len()).collect(), Vec::new());
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..classes {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if rows.len() < 2 {
            train.extend(rows);
            continue;
        }
        rows.shuffle(&mut rng::stream(cfg.seed, &[HOLDOUT_STREAM, c as u64]));
        let k = train_count(rows.len(), 1.0 - cfg.validation_fraction);
        train.extend_from_slice(&rows[..k]);
        val.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Trains a freshly initialized network on `n` rows stored back to back in
/// `x`.
///
/// Rows are visited in a seeded permutation of their given order each epoch.
/// With early stopping enabled, a stratified share of the rows is held out,
/// training stops after `early_stop_patience` epochs without a validation
/// improvement and the best weights are restored.
pub fn train_xy(
    spec: &NetworkSpec,
    x: &[f64],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(NetworkWeights, TrainHistory)> {
    cfg.validate()?;
    if labels.is_empty() {
        return Err(Error::input("no training rows"));
    }
    let mut net = Network::init(spec.clone(), cfg.seed)?;
    net.check_input(x, labels.len())?;
    net.check_labels(labels)?;
    let width = net.input_size();
    let (train_rows, val_rows) = holdout(labels, net.num_classes(), cfg);

    let (initial_loss, _) = evaluate(&net, x, labels, &train_rows);
    let mut adam = Adam::new(net.weights());
    let mut history = TrainHistory {
        initial_loss,
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        train_rows: train_rows.len(),
        val_rows: val_rows.len(),
    };
    let mut best: Option<(f64, NetworkWeights)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let mut order = train_rows.clone();
        order.shuffle(&mut rng::stream(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = gather(x, width, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&r| labels[r]).collect();
            let (loss, grads, probs) = net.loss_and_grad(&xb, &yb)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss became {loss} at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            let c = net.num_classes();
            correct += probs
                .chunks_exact(c)
                .zip(&yb)
                .filter(|(p, &y)| argmax(p) == y)
                .count();
            step(net.weights_mut(), &grads, cfg, &mut adam);
        }
        let mut stats = EpochStats {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_loss: None,
            val_accuracy: None,
        };
        if !val_rows.is_empty() {
            let (vl, va) = evaluate(&net, x, labels, &val_rows);
            stats.val_loss = Some(vl);
            stats.val_accuracy = Some(va);
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, net.weights().clone()));
                history.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
            }
        } else {
            history.best_epoch = epoch;
        }
        history.epochs.push(stats);
        if !val_rows.is_empty() && since_best >= cfg.early_stop_patience {
            history.stopped_early = epoch < cfg.epochs;
            break;
        }
    }

    let mut weights = match best {
        Some((_, w)) => w,
        None => net.into_weights(),
    };
    if !weights.is_finite() {
        return Err(Error::Numerical(
            "training produced non-finite weights".into(),
        ));
    }
    weights.meta.seed = cfg.seed;
    weights.meta.epochs = history.epochs.len() as u32;
    weights.meta.final_loss = history.epochs[history.best_epoch - 1].train_loss;
    Ok((weights, history))
}

/// Trains on a (scaled) dataset whose labels index the network outputs.
pub fn train(
    spec: &NetworkSpec,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(NetworkWeights, TrainHistory)> {
    data.validate()?;
    if data.num_classes() != spec.num_classes() {
        return Err(Error::input(format!(
            "dataset has {} classes, network has {} outputs",
            data.num_classes(),
            spec.num_classes()
        )));
    }
    let x: Vec<f64> = data.features.iter().flatten().copied().collect();
    train_xy(spec, &x, &data.labels, cfg)
}

/// Outcome of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max |a - n| / max(|a|, |n|, floor)` over all parameters.
    pub max_rel_error: f64,
    /// Layer and flat index (weights first, then biases) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Denominator floor of the relative error: gradients much smaller than this
/// are compared in absolute terms, where central differences lose precision
/// to rounding in the loss.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Checks every parameter by central differences with step `h`.
///
/// Moving one weight or bias changes a single output unit of its layer, so
/// each probe recomputes that unit from the perturbed parameter and runs the
/// remaining layers unchanged.
pub fn gradient_check(net: &Network, x: &[f64], labels: &[usize], h: f64) -> Result<GradCheck> {
    let (_, grads, _) = net.loss_and_grad(x, labels)?;
    let batch = labels.len();
    let cache = net.forward_cache(x, batch);
    let classes = net.num_classes();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (i, layer) in net.spec.layers.iter().enumerate() {
        let (a_mat, rows, width, units) = match *layer {
            Layer::Dense { inputs, outputs } => (&cache.acts[i], batch, inputs, outputs),
            Layer::Conv1D {
                in_channels,
                out_channels,
                kernel,
            } => {
                let len = cache.acts[i + 1].len() / (batch * out_channels);
                (
                    cache.cols[i].as_ref().expect("conv cache"),
                    batch * len,
                    kernel * in_channels,
                    out_channels,
                )
            }
            _ => continue,
        };
        let p = &net.weights.layers[i];
        let base = &cache.acts[i + 1];
        let n_w = p.weight.data.len();
        let probe = |unit: usize, w_row: &[f64], bias: f64| -> f64 {
            let mut y = base.clone();
            for r in 0..rows {
                let a = &a_mat[r * width..(r + 1) * width];
                y[r * units + unit] = bias + a.iter().zip(w_row).map(|(u, v)| u * v).sum::<f64>();
            }
            let logits = net.forward_from(i + 1, y, batch);
            cross_entropy(&logits, labels, classes)
        };
        for idx in 0..n_w + p.bias.data.len() {
            let unit = if idx < n_w { idx / width } else { idx - n_w };
            let mut row = p.weight.data[unit * width..(unit + 1) * width].to_vec();
            let b0 = p.bias.data[unit];
            let (plus, minus) = if idx < n_w {
                let k = idx % width;
                let w0 = row[k];
                row[k] = w0 + h;
                let lp = probe(unit, &row, b0);
                row[k] = w0 - h;
                let lm = probe(unit, &row, b0);
                (lp, lm)
            } else {
                (probe(unit, &row, b0 + h), probe(unit, &row, b0 - h))
            };
            let numeric = (plus - minus) / (2.0 * h);
            let g = &grads[i];
            let analytic = if idx < n_w {
                g.weight.data[idx]
            } else {
                g.bias.data[idx - n_w]
            };
            let rel = (analytic - numeric).abs()
                / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            if rel > out.max_rel_error || out.checked == 0 {
                out.max_rel_error = rel;
                out.worst = (i, idx);
                out.analytic = analytic;
                out.numeric = numeric;
            }
            out.checked += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{build_ann, build_cnn, build_mlp};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, gap: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            x.push(d.sample(&mut rng) + gap * c as f64 - gap / 2.0);
            x.push(d.sample(&mut rng));
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_toy_is_learned() {
        let (x, y) = blobs(200, 6.0, 1);
        let spec = build_mlp(2, &[16], 2);
        let cfg = TrainConfig {
            epochs: 50,
            early_stop_patience: 0,
            seed: 4,
            ..TrainConfig::default()
        };
        let (w, h) = train_xy(&spec, &x, &y, &cfg).unwrap();
        let net = Network::new(spec, w).unwrap();
        let rows: Vec<usize> = (0..200).collect();
        let (_, acc) = evaluate(&net, &x, &y, &rows);
        assert_eq!(acc, 1.0);
        assert_eq!(h.epochs.len(), 50);
        assert!(h.epochs.last().unwrap().train_loss < h.initial_loss);
    }

    #[test]
    fn same_seed_same_weights() {
        let (x, y) = blobs(64, 2.0, 2);
        let spec = build_mlp(2, &[8, 8], 2);
        let cfg = TrainConfig {
            epochs: 30,
            early_stop_patience: 5,
            seed: 7,
            ..TrainConfig::default()
        };
        let a = train_xy(&spec, &x, &y, &cfg).unwrap();
        let b = train_xy(&spec, &x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train_xy(&spec, &x, &y, &TrainConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn early_stopping_restores_best() {
        // labels independent of inputs: validation loss stops improving fast
        let (x, _) = blobs(120, 0.0, 3);
        let y: Vec<usize> = (0..120).map(|i| (i * 7 / 3) % 2).collect();
        let spec = build_mlp(2, &[32], 2);
        let cfg = TrainConfig {
            epochs: 300,
            learning_rate: 1e-2,
            early_stop_patience: 5,
            seed: 1,
            ..TrainConfig::default()
        };
        let (w, h) = train_xy(&spec, &x, &y, &cfg).unwrap();
        assert!(h.stopped_early);
        assert_eq!(h.epochs.len(), h.best_epoch + 5);
        let best = h.epochs[h.best_epoch - 1].val_loss.unwrap();
        assert!(h.epochs.iter().all(|e| e.val_loss.unwrap() >= best));
        assert_eq!(w.meta.epochs as usize, h.epochs.len());
        assert_eq!(h.val_rows + h.train_rows, 120);
    }

    #[test]
    fn ann_and_cnn_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let d = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..5 * 26).map(|_| d.sample(&mut rng)).collect();
        let labels = [0, 3, 7, 9, 3];
        for spec in [build_ann(), build_cnn(10)] {
            let net = Network::init(spec, 5).unwrap();
            let gc = gradient_check(&net, &x, &labels, 1e-5).unwrap();
            assert_eq!(gc.checked, net.spec().param_count());
            assert!(gc.max_rel_error < 1e-4, "{gc:?}");
        }
    }

    #[test]
    fn bad_config_and_nan_loss() {
        let spec = build_mlp(2, &[4], 2);
        assert!(train_xy(
            &spec,
            &[0.0, 0.0],
            &[0],
            &TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            }
        )
        .is_err());
        assert!(train_xy(&spec, &[], &[], &TrainConfig::default()).is_err());
        let cfg = TrainConfig {
            learning_rate: 1e300,
            optimizer: Optimizer::Sgd,
            early_stop_patience: 0,
            epochs: 20,
            ..TrainConfig::default()
        };
        let (x, y) = blobs(40, 1.0, 0);
        assert!(matches!(
            train_xy(&spec, &x, &y, &cfg),
            Err(Error::Numerical(_))
        ));
    }
}
