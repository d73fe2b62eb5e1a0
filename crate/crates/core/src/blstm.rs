//! Stacked bidirectional LSTM sequence classifier.
//!
//! Each layer runs one LSTM forward in time and one backward, and
//! concatenates their hidden states per timestep as the next layer's input.
//! The last layer's outputs are averaged over time and mapped to class
//! scores by a dense layer followed by softmax. Everything is `f64` so that
//! finite-difference checks can hold tight tolerances.
//!
//! All parameters live in one flat vector. Per direction the gate weights
//! form a `4H x (I + H)` row-major matrix over `[input; previous hidden]`
//! with gate blocks in the order input, forget, output, candidate.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{item_stream, stream};
use crate::seq::FeatureSeq;

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the loss.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlstmConfig {
    pub input_size: usize,
    /// Hidden units per direction, one entry per layer.
    pub hidden_sizes: Vec<usize>,
    pub classes: usize,
    pub seed: u64,
}

impl Default for BlstmConfig {
    fn default() -> Self {
        Self {
            input_size: 3,
            hidden_sizes: vec![64, 64, 64],
            classes: 2,
            seed: 0,
        }
    }
}

impl BlstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be positive".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("need at least one layer and positive hidden sizes".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DirLayout {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerLayout {
    input: usize,
    hidden: usize,
    dirs: [DirLayout; 2],
}

impl LayerLayout {
    fn cols(&self) -> usize {
        self.input + self.hidden
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    layers: Vec<LayerLayout>,
    readout_w: usize,
    readout_b: usize,
    features: usize,
    classes: usize,
    total: usize,
}

impl Layout {
    fn new(config: &BlstmConfig) -> Self {
        let mut off = 0;
        let mut input = config.input_size;
        let mut layers = Vec::new();
        for &hidden in &config.hidden_sizes {
            let mut dir = || {
                let w = off;
                off += 4 * hidden * (input + hidden);
                let b = off;
                off += 4 * hidden;
                DirLayout { w, b }
            };
            let dirs = [dir(), dir()];
            layers.push(LayerLayout { input, hidden, dirs });
            input = 2 * hidden;
        }
        let readout_w = off;
        off += config.classes * input;
        let readout_b = off;
        off += config.classes;
        Self {
            layers,
            readout_w,
            readout_b,
            features: input,
            classes: config.classes,
            total: off,
        }
    }
}

/// Named parameter block with its shape, used for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Copy of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `[forward, backward]` weights, each `4H x (I + H)` row-major.
    pub weights: [Vec<f64>; 2],
    pub biases: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlstmNetwork {
    config: BlstmConfig,
    layout: Layout,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPosterior {
    pub probs: Vec<f64>,
    pub predicted: usize,
}

impl ClassPosterior {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let predicted = argmax(&probs);
        Self { probs, predicted }
    }

    /// Cross-entropy against `target`, see [`loss`].
    pub fn error(&self, target: usize) -> f64 {
        loss(self, target)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Cross-entropy of a posterior against a class index. With two classes
/// this is the binary form on `y = P(class 1)`.
pub fn loss(posterior: &ClassPosterior, target: usize) -> f64 {
    if posterior.probs.len() == 2 {
        let y = clamp_prob(posterior.probs[1]);
        let z = if target == 1 { 1.0 } else { 0.0 };
        -(z * y.ln() + (1.0 - z) * (1.0 - y).ln())
    } else {
        -clamp_prob(posterior.probs[target]).ln()
    }
}

/// Probability the posterior assigns to the one-hot target, as a product
/// over classes of `y_k ^ z_k`.
pub fn sequence_likelihood(posterior: &ClassPosterior, target: usize) -> f64 {
    if posterior.probs.len() == 2 {
        let y = clamp_prob(posterior.probs[1]);
        let z = if target == 1 { 1.0 } else { 0.0 };
        y.powf(z) * (1.0 - y).powf(1.0 - z)
    } else {
        posterior
            .probs
            .iter()
            .enumerate()
            .map(|(k, &p)| if k == target { clamp_prob(p) } else { 1.0 })
            .product()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cached activations of one direction, indexed by processing step.
struct DirTrace {
    order: Vec<usize>,
    concat: Vec<f64>,
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
}

struct LayerTrace {
    dirs: [DirTrace; 2],
}

struct Trace {
    layers: Vec<LayerTrace>,
    pooled: Vec<f64>,
    posterior: ClassPosterior,
}

/// Analytic gradients of the loss for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub inputs: FeatureSeq,
    pub loss: f64,
}

impl BlstmNetwork {
    /// Freshly initialized network: weights uniform in `±1/sqrt(fan_in)`,
    /// biases zero except the forget gate at +1.
    pub fn new(config: BlstmConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = stream(config.seed, "init");
        for l in &layout.layers {
            let r = 1.0 / (l.cols() as f64).sqrt();
            for d in l.dirs {
                for p in &mut params[d.w..d.w + 4 * l.hidden * l.cols()] {
                    *p = rng.random_range(-r..=r);
                }
                for p in &mut params[d.b + l.hidden..d.b + 2 * l.hidden] {
                    *p = 1.0;
                }
            }
        }
        let r = 1.0 / (layout.features as f64).sqrt();
        for p in &mut params[layout.readout_w..layout.readout_b] {
            *p = rng.random_range(-r..=r);
        }
        Ok(Self { config, layout, params })
    }

    /// Network with every parameter set to zero.
    pub fn zeros(config: BlstmConfig) -> Result<Self> {
        let mut net = Self::new(config)?;
        net.params.iter_mut().for_each(|p| *p = 0.0);
        Ok(net)
    }

    pub fn from_params(config: BlstmConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::ShapeError(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ShapeError("non-finite parameter".into()));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &BlstmConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn layer(&self, index: usize) -> LstmLayerParams {
        let l = &self.layout.layers[index];
        let wlen = 4 * l.hidden * l.cols();
        let part = |d: DirLayout| {
            (
                self.params[d.w..d.w + wlen].to_vec(),
                self.params[d.b..d.b + 4 * l.hidden].to_vec(),
            )
        };
        let (wf, bf) = part(l.dirs[0]);
        let (wb, bb) = part(l.dirs[1]);
        LstmLayerParams {
            input_size: l.input,
            hidden_size: l.hidden,
            weights: [wf, wb],
            biases: [bf, bb],
        }
    }

    /// Mutable weights and biases of one direction (0 forward, 1 backward).
    pub fn direction_mut(&mut self, layer: usize, direction: usize) -> (&mut [f64], &mut [f64]) {
        let l = &self.layout.layers[layer];
        let d = l.dirs[direction];
        let wlen = 4 * l.hidden * l.cols();
        let (head, tail) = self.params.split_at_mut(d.b);
        (&mut head[d.w..d.w + wlen], &mut tail[..4 * l.hidden])
    }

    /// Mutable readout weights (`K x F` row-major) and biases.
    pub fn readout_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let (head, tail) = self.params.split_at_mut(self.layout.readout_b);
        (&mut head[self.layout.readout_w..], &mut tail[..self.layout.classes])
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (i, l) in self.layout.layers.iter().enumerate() {
            for (d, name) in l.dirs.iter().zip(["fwd", "bwd"]) {
                out.push(Tensor {
                    name: format!("layer{i}.{name}.weight"),
                    shape: vec![4 * l.hidden, l.cols()],
                    data: self.params[d.w..d.w + 4 * l.hidden * l.cols()].to_vec(),
                });
                out.push(Tensor {
                    name: format!("layer{i}.{name}.bias"),
                    shape: vec![4 * l.hidden],
                    data: self.params[d.b..d.b + 4 * l.hidden].to_vec(),
                });
            }
        }
        let lay = &self.layout;
        out.push(Tensor {
            name: "readout.weight".into(),
            shape: vec![lay.classes, lay.features],
            data: self.params[lay.readout_w..lay.readout_b].to_vec(),
        });
        out.push(Tensor {
            name: "readout.bias".into(),
            shape: vec![lay.classes],
            data: self.params[lay.readout_b..].to_vec(),
        });
        out
    }

    /// Rebuild from tensors, checking names, shapes and lengths.
    pub fn from_tensors(config: BlstmConfig, tensors: &[Tensor]) -> Result<Self> {
        let template = Self::zeros(config.clone())?;
        let expected = template.to_tensors();
        if expected.len() != tensors.len() {
            return Err(Error::ShapeError(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(template.params.len());
        for (e, t) in expected.iter().zip(tensors) {
            if e.name != t.name || e.shape != t.shape {
                return Err(Error::ShapeError(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, e.name, e.shape
                )));
            }
            if t.data.len() != t.shape.iter().product::<usize>() {
                return Err(Error::ShapeError(format!("tensor {} has the wrong length", t.name)));
            }
            params.extend_from_slice(&t.data);
        }
        Self::from_params(config, params)
    }

    fn check_input(&self, seq: &FeatureSeq) -> Result<()> {
        if seq.width != self.config.input_size {
            return Err(Error::ShapeError(format!(
                "sequence width {} does not match network input {}",
                seq.width, self.config.input_size
            )));
        }
        if seq.is_empty() {
            return Err(Error::ShapeError("empty sequence".into()));
        }
        Ok(())
    }

    fn run_direction(&self, l: &LayerLayout, d: DirLayout, x: &FeatureSeq, reverse: bool, out: &mut [f64]) -> DirTrace {
        let (n_in, h, cols) = (l.input, l.hidden, l.cols());
        let t_len = x.len();
        let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
        let w = &self.params[d.w..d.w + 4 * h * cols];
        let b = &self.params[d.b..d.b + 4 * h];
        let mut trace = DirTrace {
            concat: vec![0.0; t_len * cols],
            gates: vec![0.0; t_len * 4 * h],
            cell: vec![0.0; t_len * h],
            tanh_cell: vec![0.0; t_len * h],
            order,
        };
        let offset = if reverse { h } else { 0 };
        let mut z = vec![0.0; 4 * h];
        for k in 0..t_len {
            let t = trace.order[k];
            let concat = &mut trace.concat[k * cols..(k + 1) * cols];
            concat[..n_in].copy_from_slice(x.row(t));
            if k > 0 {
                let prev_t = trace.order[k - 1];
                concat[n_in..].copy_from_slice(&out[prev_t * 2 * h + offset..prev_t * 2 * h + offset + h]);
            }
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &w[r * cols..(r + 1) * cols];
                *zr = b[r] + row.iter().zip(concat.iter()).map(|(a, c)| a * c).sum::<f64>();
            }
            let gates = &mut trace.gates[k * 4 * h..(k + 1) * 4 * h];
            for j in 0..h {
                gates[j] = sigmoid(z[j]);
                gates[h + j] = sigmoid(z[h + j]);
                gates[2 * h + j] = sigmoid(z[2 * h + j]);
                gates[3 * h + j] = z[3 * h + j].tanh();
            }
            for j in 0..h {
                let c_prev = if k > 0 { trace.cell[(k - 1) * h + j] } else { 0.0 };
                let c = gates[h + j] * c_prev + gates[j] * gates[3 * h + j];
                let tc = c.tanh();
                trace.cell[k * h + j] = c;
                trace.tanh_cell[k * h + j] = tc;
                out[t * 2 * h + offset + j] = gates[2 * h + j] * tc;
            }
        }
        trace
    }

    fn run(&self, seq: &FeatureSeq) -> Result<Trace> {
        self.check_input(seq)?;
        let t_len = seq.len();
        let mut x = seq.clone();
        let mut layers = Vec::with_capacity(self.layout.layers.len());
        for l in &self.layout.layers {
            let mut out = vec![0.0; t_len * 2 * l.hidden];
            let fwd = self.run_direction(l, l.dirs[0], &x, false, &mut out);
            let bwd = self.run_direction(l, l.dirs[1], &x, true, &mut out);
            layers.push(LayerTrace { dirs: [fwd, bwd] });
            x = FeatureSeq::new(2 * l.hidden, out)?;
        }
        let f = self.layout.features;
        let mut pooled = vec![0.0; f];
        for t in 0..t_len {
            for (p, v) in pooled.iter_mut().zip(x.row(t)) {
                *p += v;
            }
        }
        pooled.iter_mut().for_each(|p| *p /= t_len as f64);
        let (rw, rb) = (self.layout.readout_w, self.layout.readout_b);
        let scores: Vec<f64> = (0..self.layout.classes)
            .map(|k| {
                self.params[rb + k]
                    + self.params[rw + k * f..rw + (k + 1) * f]
                        .iter()
                        .zip(&pooled)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        Ok(Trace {
            layers,
            pooled,
            posterior: ClassPosterior::from_probs(softmax(&scores)),
        })
    }

    pub fn forward(&self, seq: &FeatureSeq) -> Result<ClassPosterior> {
        Ok(self.run(seq)?.posterior)
    }

    pub fn predict(&self, seq: &FeatureSeq) -> Result<ClassPosterior> {
        self.forward(seq)
    }

    /// Posteriors for many sequences, computed in parallel.
    pub fn predict_all(&self, seqs: &[FeatureSeq]) -> Result<Vec<ClassPosterior>> {
        seqs.par_iter().map(|s| self.predict(s)).collect()
    }

    /// Loss and exact gradients for one labelled sequence, by
    /// backpropagation through time over both directions and all layers.
    pub fn backward(&self, seq: &FeatureSeq, target: usize) -> Result<Gradients> {
        if target >= self.classes() {
            return Err(Error::InvalidInput(format!("target {target} outside {} classes", self.classes())));
        }
        let trace = self.run(seq)?;
        let t_len = seq.len();
        let lay = &self.layout;
        let f = lay.features;
        let mut grad = vec![0.0; lay.total];

        let mut d_scores = trace.posterior.probs.clone();
        d_scores[target] -= 1.0;
        let mut d_pooled = vec![0.0; f];
        for (k, ds) in d_scores.iter().enumerate() {
            grad[lay.readout_b + k] = *ds;
            for j in 0..f {
                grad[lay.readout_w + k * f + j] = ds * trace.pooled[j];
                d_pooled[j] += ds * self.params[lay.readout_w + k * f + j];
            }
        }
        // every timestep contributes equally to the mean
        let mut d_out: Vec<f64> = (0..t_len).flat_map(|_| d_pooled.iter().map(|d| d / t_len as f64)).collect();

        for (li, l) in lay.layers.iter().enumerate().rev() {
            let mut d_x = vec![0.0; t_len * l.input];
            for di in 0..2 {
                self.backward_direction(l, l.dirs[di], &trace.layers[li].dirs[di], di, &d_out, &mut d_x, &mut grad);
            }
            d_out = d_x;
        }
        Ok(Gradients {
            params: grad,
            inputs: FeatureSeq::new(self.config.input_size, d_out)?,
            loss: loss(&trace.posterior, target),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_direction(
        &self,
        l: &LayerLayout,
        d: DirLayout,
        tr: &DirTrace,
        dir: usize,
        d_out: &[f64],
        d_x: &mut [f64],
        grad: &mut [f64],
    ) {
        let (n_in, h, cols) = (l.input, l.hidden, l.cols());
        let offset = dir * h;
        let w = &self.params[d.w..d.w + 4 * h * cols];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for k in (0..tr.order.len()).rev() {
            let t = tr.order[k];
            let gates = &tr.gates[k * 4 * h..(k + 1) * 4 * h];
            for j in 0..h {
                let dh = d_out[t * 2 * h + offset + j] + dh_next[j];
                let (i, fg, o, g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = tr.tanh_cell[k * h + j];
                let c_prev = if k > 0 { tr.cell[(k - 1) * h + j] } else { 0.0 };
                let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                dz[j] = dc * g * i * (1.0 - i);
                dz[h + j] = dc * c_prev * fg * (1.0 - fg);
                dz[2 * h + j] = dh * tc * o * (1.0 - o);
                dz[3 * h + j] = dc * i * (1.0 - g * g);
                dc_next[j] = dc * fg;
            }
            let concat = &tr.concat[k * cols..(k + 1) * cols];
            let mut d_concat = vec![0.0; cols];
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                grad[d.b + r] += dzr;
                let gw = &mut grad[d.w + r * cols..d.w + (r + 1) * cols];
                let row = &w[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    gw[c] += dzr * concat[c];
                    d_concat[c] += dzr * row[c];
                }
            }
            for c in 0..n_in {
                d_x[t * n_in + c] += d_concat[c];
            }
            dh_next.copy_from_slice(&d_concat[n_in..]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            patience: 20,
            max_epochs: 200,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.patience < 1 || self.max_epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("patience, max_epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_accuracy: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    pub epochs_run: usize,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// The report with wall time zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }
}

/// A sequence with its class index.
pub type Labelled = (FeatureSeq, usize);

/// Fraction of `data` whose predicted class matches the label.
pub fn accuracy(net: &BlstmNetwork, data: &[Labelled]) -> Result<f64> {
    Ok(evaluate(net, data)?.0)
}

/// Accuracy and mean cross-entropy over `data`.
pub fn evaluate(net: &BlstmNetwork, data: &[Labelled]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::InvalidSplit("empty evaluation set".into()));
    }
    let scored: Vec<(bool, f64)> = data
        .par_iter()
        .map(|(s, y)| net.predict(s).map(|p| (p.predicted == *y, loss(&p, *y))))
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    let hits = scored.iter().filter(|(h, _)| *h).count() as f64;
    Ok((hits / n, scored.iter().map(|(_, l)| l).sum::<f64>() / n))
}

/// Momentum SGD over seeded shuffles with early stopping on validation
/// accuracy, ties going to the lower validation loss. The network ends up
/// holding the best epoch's parameters.
/// Per-sample gradients run in parallel but are summed in batch order, so
/// results do not depend on the thread count.
pub fn train(net: &mut BlstmNetwork, train_set: &[Labelled], validation: &[Labelled], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::InvalidSplit("training and validation sets must be non-empty".into()));
    }
    for (s, y) in train_set.iter().chain(validation) {
        if *y >= net.classes() {
            return Err(Error::InvalidSplit(format!("label {y} outside {} classes", net.classes())));
        }
        net.check_input(s)?;
    }
    let start = Instant::now();
    let mut velocity = vec![0.0; net.param_count()];
    let mut best_params = net.params.clone();
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut item_stream(config.seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let grads: Vec<Gradients> = batch
                .par_iter()
                .map(|&i| net.backward(&train_set[i].0, train_set[i].1))
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut total = vec![0.0; net.param_count()];
            for g in &grads {
                loss_sum += g.loss;
                for (t, v) in total.iter_mut().zip(&g.params) {
                    *t += v;
                }
            }
            for ((p, v), g) in net.params.iter_mut().zip(velocity.iter_mut()).zip(&total) {
                *v = config.momentum * *v - config.learning_rate * g * scale;
                *p += *v;
            }
        }
        let (acc, val_loss) = evaluate(net, validation)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            validation_accuracy: acc,
            validation_loss: val_loss,
        });
        if acc > best.0 || (acc == best.0 && val_loss < best.1) {
            best = (acc, val_loss);
            best_epoch = epoch;
            best_params.copy_from_slice(&net.params);
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    net.params = best_params;
    Ok(TrainReport {
        epochs_run: epochs.len(),
        epochs,
        best_epoch,
        best_validation_accuracy: best.0,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Floor on the relative-error denominator. Below it, rounding noise in
/// the central difference (about 1e-11 absolute) would dominate.
pub const GRAD_FLOOR: f64 = 1e-6;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

/// Largest relative error between `grads` and central differences of the
/// loss, over every parameter and every input feature.
pub fn compare_with_finite_differences(net: &BlstmNetwork, seq: &FeatureSeq, target: usize, grads: &Gradients) -> Result<f64> {
    let eval = |n: &BlstmNetwork, s: &FeatureSeq| -> Result<f64> { Ok(loss(&n.forward(s)?, target)) };
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..net.param_count() {
        let orig = probe.params[i];
        probe.params[i] = orig + FD_STEP;
        let up = eval(&probe, seq)?;
        probe.params[i] = orig - FD_STEP;
        let down = eval(&probe, seq)?;
        probe.params[i] = orig;
        worst = worst.max(relative_error(grads.params[i], (up - down) / (2.0 * FD_STEP)));
    }
    let mut x = seq.clone();
    for i in 0..x.data.len() {
        let orig = x.data[i];
        x.data[i] = orig + FD_STEP;
        let up = eval(net, &x)?;
        x.data[i] = orig - FD_STEP;
        let down = eval(net, &x)?;
        x.data[i] = orig;
        worst = worst.max(relative_error(grads.inputs.data[i], (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub input_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub classes: usize,
    pub length: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            input_size: 3,
            hidden_sizes: vec![4, 4],
            classes: 3,
            length: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_relative_error: f64,
    pub per_trial: Vec<f64>,
    pub passed: bool,
}

/// Backprop against central differences on `trials` random networks and
/// inputs drawn from `config.seed`.
pub fn gradient_check(config: &GradCheckConfig, trials: usize, tolerance: f64) -> Result<GradCheckReport> {
    if config.length == 0 {
        return Err(Error::Config("gradient check needs a positive length".into()));
    }
    let per_trial: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = item_stream(config.seed, "gradcheck", trial as u64);
            let net = BlstmNetwork::new(BlstmConfig {
                input_size: config.input_size,
                hidden_sizes: config.hidden_sizes.clone(),
                classes: config.classes,
                seed: rng.random(),
            })?;
            let data: Vec<f64> = (0..config.length * config.input_size).map(|_| rng.random_range(-1.0..1.0)).collect();
            let seq = FeatureSeq::new(config.input_size, data)?;
            let target = rng.random_range(0..config.classes);
            let grads = net.backward(&seq, target)?;
            compare_with_finite_differences(&net, &seq, target, &grads)
        })
        .collect::<Result<_>>()?;
    let max_relative_error = per_trial.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        trials,
        max_relative_error,
        passed: max_relative_error < tolerance,
        per_trial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(classes: usize) -> BlstmConfig {
        BlstmConfig {
            input_size: 2,
            hidden_sizes: vec![3, 2],
            classes,
            seed: 5,
        }
    }

    fn seq(rows: &[[f64; 2]]) -> FeatureSeq {
        FeatureSeq::new(2, rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = BlstmNetwork::zeros(small(4)).unwrap();
        let p = net.forward(&seq(&[[1.0, -2.0], [3.0, 0.5]])).unwrap();
        for v in &p.probs {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert_eq!(p.predicted, 0);
    }

    #[test]
    fn zero_network_gradients() {
        let net = BlstmNetwork::zeros(small(3)).unwrap();
        let g = net.backward(&seq(&[[1.0, 2.0], [0.5, -1.0], [0.0, 1.0]]), 1).unwrap();
        let lay = &net.layout;
        let expect = [1.0 / 3.0, 1.0 / 3.0 - 1.0, 1.0 / 3.0];
        for (k, e) in expect.iter().enumerate() {
            assert!((g.params[lay.readout_b + k] - e).abs() < 1e-15);
        }
        // with zero readout weights nothing flows back into the recurrent layers
        assert!(g.params[..lay.readout_w].iter().all(|&v| v == 0.0));
        assert!(g.inputs.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn width_mismatch() {
        let net = BlstmNetwork::new(small(2)).unwrap();
        let bad = FeatureSeq::new(3, vec![0.0; 6]).unwrap();
        assert!(matches!(net.forward(&bad), Err(Error::ShapeError(_))));
    }

    #[test]
    fn reversal_changes_posterior() {
        let net = BlstmNetwork::new(small(2)).unwrap();
        let s = seq(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 2.0], [0.3, -0.7]]);
        let a = net.forward(&s).unwrap();
        let b = net.forward(&s.reversed()).unwrap();
        assert!((a.probs[0] - b.probs[0]).abs() > 1e-9);
    }

    #[test]
    fn predict_is_forward() {
        let net = BlstmNetwork::new(small(3)).unwrap();
        let s = seq(&[[0.2, 0.1], [0.4, -0.3]]);
        assert_eq!(net.predict(&s).unwrap(), net.forward(&s).unwrap());
    }

    #[test]
    fn loss_values() {
        let half = ClassPosterior::from_probs(vec![0.5, 0.5]);
        assert!((loss(&half, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        let three = ClassPosterior::from_probs(vec![0.2, 0.7, 0.1]);
        assert!((loss(&three, 1) - 0.356_674_943_938_732_4).abs() < 1e-12);
        let sure = ClassPosterior::from_probs(vec![0.0, 1.0]);
        assert!(loss(&sure, 1) < 1e-11);
        assert!(loss(&sure, 0).is_finite());
    }

    #[test]
    fn likelihood_values() {
        let p = ClassPosterior::from_probs(vec![0.1, 0.6, 0.3]);
        assert_eq!(sequence_likelihood(&p, 2), 0.3);
        let u = ClassPosterior::from_probs(vec![0.25; 4]);
        assert_eq!(sequence_likelihood(&u, 3), 0.25);
    }

    #[test]
    fn gradients_match_differences() {
        let net = BlstmNetwork::new(small(3)).unwrap();
        let s = seq(&[[0.5, -0.2], [0.1, 0.9], [-0.4, 0.3], [0.8, 0.0]]);
        let g = net.backward(&s, 2).unwrap();
        let err = compare_with_finite_differences(&net, &s, 2, &g).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let net = BlstmNetwork::new(small(2)).unwrap();
        let s = seq(&[[0.5, -0.2], [0.1, 0.9]]);
        let mut g = net.backward(&s, 0).unwrap();
        let i = net.layout.layers[0].dirs[0].w + 1;
        g.params[i] *= 1.5;
        assert!(compare_with_finite_differences(&net, &s, 0, &g).unwrap() > 1e-4);
    }

    #[test]
    fn tensor_round_trip() {
        let net = BlstmNetwork::new(small(2)).unwrap();
        let back = BlstmNetwork::from_tensors(net.config().clone(), &net.to_tensors()).unwrap();
        assert_eq!(back, net);
        let mut tensors = net.to_tensors();
        tensors[0].shape = vec![1, 1];
        assert!(matches!(
            BlstmNetwork::from_tensors(net.config().clone(), &tensors),
            Err(Error::ShapeError(_))
        ));
    }

    #[test]
    fn empty_split_rejected() {
        let mut net = BlstmNetwork::new(small(2)).unwrap();
        let data = vec![(seq(&[[0.0, 0.0]]), 0)];
        assert!(matches!(
            train(&mut net, &[], &data, &TrainConfig::default()),
            Err(Error::InvalidSplit(_))
        ));
    }
}
