//! Small dense feed-forward networks with hand-written backpropagation and
//! Adam, in `f64`.
//!
//! Parameters live in one flat vector so the optimiser, serialisation and
//! finite-difference checks all work on the same layout: for each layer the
//! weight matrix `(fan_in, fan_out)` in row-major order followed by its bias.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Identity => {}
        }
    }

    /// Multiplies `delta` by the derivative, expressed through the activation value `a`.
    fn backprop(self, a: &Array2<f64>, delta: &mut Array2<f64>) {
        match self {
            Activation::Tanh => ndarray::Zip::from(delta).and(a).for_each(|d, &a| *d *= 1.0 - a * a),
            Activation::Relu => ndarray::Zip::from(delta).and(a).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Sigmoid => ndarray::Zip::from(delta).and(a).for_each(|d, &a| *d *= a * (1.0 - a)),
            Activation::Identity => {}
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::invalid("activation", format!("unknown activation `{other}`"))),
        }
    }
}

/// Logistic function kept strictly inside `(0, 1)`.
pub fn sigmoid(z: f64) -> f64 {
    const LO: f64 = 1e-15;
    (1.0 / (1.0 + (-z).exp())).clamp(LO, 1.0 - LO)
}

/// Component-wise threshold at one half; exactly 0.5 rounds up.
pub fn round_off(p: &[f64]) -> Vec<bool> {
    p.iter().map(|&v| v >= 0.5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl NetworkConfig {
    /// Sigmoid-output net for exercise probabilities.
    pub fn decision(input_dim: usize, output_dim: usize, hidden: &[usize], act: Activation) -> Self {
        NetworkConfig {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            hidden_activation: act,
            output_activation: Activation::Sigmoid,
        }
    }

    /// Identity-output net for least-squares regression.
    pub fn regression(input_dim: usize, output_dim: usize, hidden: &[usize], act: Activation) -> Self {
        NetworkConfig {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            hidden_activation: act,
            output_activation: Activation::Identity,
        }
    }

    /// Node counts from input to output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(&self.hidden);
        s.push(self.output_dim);
        s
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Hex digest identifying the architecture.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid("network", "layer widths must be positive"));
        }
        Ok(())
    }
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

fn layer_slots(cfg: &NetworkConfig) -> Vec<LayerSlot> {
    let sizes = cfg.layer_sizes();
    let mut off = 0;
    sizes
        .windows(2)
        .map(|w| {
            let slot = LayerSlot {
                fan_in: w[0],
                fan_out: w[1],
                w: off,
                b: off + w[0] * w[1],
            };
            off += w[0] * w[1] + w[1];
            slot
        })
        .collect()
}

/// A network with its input standardisation and output affine map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: Vec<f64>,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_shift: Vec<f64>,
    pub output_scale: Vec<f64>,
}

/// Activations of every layer from one forward pass, kept for backprop.
pub struct ForwardCache {
    acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Network output after the output affine map is applied by [`Network::forward_cached`].
    pub fn last_activation(&self) -> &Array2<f64> {
        self.acts.last().expect("at least one layer")
    }
}

impl Network {
    /// Zero biases and `N(0, 1/fan_in)` weights.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; config.n_params()];
        for s in layer_slots(&config) {
            let normal = Normal::new(0.0, (1.0 / s.fan_in as f64).sqrt()).expect("positive std");
            for p in &mut params[s.w..s.b] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(Self::with_params(config, params))
    }

    pub fn zeros(config: NetworkConfig) -> Self {
        let n = config.n_params();
        Self::with_params(config, vec![0.0; n])
    }

    fn with_params(config: NetworkConfig, params: Vec<f64>) -> Self {
        Network {
            input_shift: vec![0.0; config.input_dim],
            input_scale: vec![1.0; config.input_dim],
            output_shift: vec![0.0; config.output_dim],
            output_scale: vec![1.0; config.output_dim],
            params,
            config,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// Weight matrix of layer `l` (0-based, excluding the input layer).
    pub fn weights(&self, l: usize) -> ArrayView2<'_, f64> {
        let s = layer_slots(&self.config)[l];
        ArrayView2::from_shape((s.fan_in, s.fan_out), &self.params[s.w..s.b]).expect("slot shape")
    }

    pub fn weights_mut(&mut self, l: usize) -> ArrayViewMut2<'_, f64> {
        let s = layer_slots(&self.config)[l];
        ArrayViewMut2::from_shape((s.fan_in, s.fan_out), &mut self.params[s.w..s.b]).expect("slot shape")
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let s = layer_slots(&self.config)[l];
        &mut self.params[s.b..s.b + s.fan_out]
    }

    /// Sets the input standardisation from the column moments of `x` over `rows`.
    pub fn fit_input_scaling(&mut self, x: ArrayView2<f64>, rows: &[usize]) {
        let (shift, scale) = column_moments(x, rows);
        self.input_shift = shift;
        self.input_scale = scale;
    }

    /// Sets the output affine map from the column moments of `y` over `rows`.
    pub fn fit_output_scaling(&mut self, y: ArrayView2<f64>, rows: &[usize]) {
        let (mean, inv_std) = column_moments(y, rows);
        self.output_shift = mean;
        self.output_scale = inv_std.iter().map(|s| 1.0 / s).collect();
    }

    /// Applies the input standardisation.
    pub fn standardize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.to_owned();
        for (mut col, (&m, &s)) in z.axis_iter_mut(Axis(1)).zip(self.input_shift.iter().zip(&self.input_scale)) {
            col.mapv_inplace(|v| (v - m) * s);
        }
        z
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: self.config.input_dim,
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Batch forward pass on raw inputs, one row per sample.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        for start in (0..x.nrows()).step_by(CHUNK) {
            let end = (start + CHUNK).min(x.nrows());
            let z = self.standardize(x.slice(s![start..end, ..]));
            out.slice_mut(s![start..end, ..]).assign(&self.forward_cached(z).0);
        }
        Ok(out)
    }

    /// Forward pass for a single input vector.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Format(e.to_string()))?;
        Ok(self.forward(view)?.row(0).to_vec())
    }

    /// Forward pass on already standardised inputs, keeping activations.
    pub fn forward_cached(&self, x_std: Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let slots = layer_slots(&self.config);
        let mut acts = Vec::with_capacity(slots.len() + 1);
        acts.push(x_std);
        for (l, s) in slots.iter().enumerate() {
            let w = ArrayView2::from_shape((s.fan_in, s.fan_out), &self.params[s.w..s.b]).expect("slot shape");
            let b = ndarray::ArrayView1::from(&self.params[s.b..s.b + s.fan_out]);
            let mut z = acts[l].dot(&w);
            z += &b;
            let act = if l + 1 == slots.len() {
                self.config.output_activation
            } else {
                self.config.hidden_activation
            };
            act.apply(&mut z);
            acts.push(z);
        }
        let mut out = acts.last().expect("layers").clone();
        for (mut col, (&m, &s)) in out.axis_iter_mut(Axis(1)).zip(self.output_shift.iter().zip(&self.output_scale)) {
            col.mapv_inplace(|v| m + s * v);
        }
        (out, ForwardCache { acts })
    }

    /// Gradient of the loss w.r.t. the flat parameters given `dL/d output`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> Vec<f64> {
        let slots = layer_slots(&self.config);
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = grad_out.clone();
        for (mut col, &s) in delta.axis_iter_mut(Axis(1)).zip(&self.output_scale) {
            col.mapv_inplace(|v| v * s);
        }
        for l in (0..slots.len()).rev() {
            let s = slots[l];
            let act = if l + 1 == slots.len() {
                self.config.output_activation
            } else {
                self.config.hidden_activation
            };
            act.backprop(&cache.acts[l + 1], &mut delta);
            {
                let (gw, gb) = grad[s.w..s.b + s.fan_out].split_at_mut(s.fan_in * s.fan_out);
                let mut gw = ArrayViewMut2::from_shape((s.fan_in, s.fan_out), gw).expect("slot shape");
                general_mat_mul(1.0, &cache.acts[l].t(), &delta, 0.0, &mut gw);
                for (g, v) in gb.iter_mut().zip(delta.sum_axis(Axis(0))) {
                    *g = v;
                }
            }
            if l > 0 {
                let w = ArrayView2::from_shape((s.fan_in, s.fan_out), &self.params[s.w..s.b]).expect("slot shape");
                delta = delta.dot(&w.t());
            }
        }
        grad
    }

    /// One optimiser update with an externally computed gradient.
    pub fn train_step(&mut self, adam: &mut Adam, grad: &[f64], lr: f64) -> Result<()> {
        adam.step(&mut self.params, grad, lr)
    }

    /// Serialises with a format version and architecture hash.
    pub fn to_json(&self) -> Result<String> {
        let file = NetworkFile {
            format_version: NETWORK_FORMAT_VERSION,
            config_hash: self.config.hash(),
            network: self.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s)?;
        if file.format_version != NETWORK_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported network format {}", file.format_version)));
        }
        if file.config_hash != file.network.config.hash() {
            return Err(Error::Format("network config hash mismatch".into()));
        }
        if file.network.params.len() != file.network.config.n_params() {
            return Err(Error::ShapeMismatch {
                context: "network parameters",
                expected: file.network.config.n_params(),
                actual: file.network.params.len(),
            });
        }
        Ok(file.network)
    }
}

/// Rows per block in batched passes; larger blocks fall out of cache.
const CHUNK: usize = 1024;

const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    format_version: u32,
    config_hash: String,
    network: Network,
}

/// Column means and reciprocal standard deviations (1 for constant columns).
fn column_moments(x: ArrayView2<f64>, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let cols = x.ncols();
    let mut mean = vec![0.0; cols];
    let mut sq = vec![0.0; cols];
    for &r in rows {
        for c in 0..cols {
            mean[c] += x[[r, c]];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for &r in rows {
        for c in 0..cols {
            let d = x[[r, c]] - mean[c];
            sq[c] += d * d;
        }
    }
    let inv = sq
        .iter()
        .map(|&s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, inv)
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != params.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                context: "optimiser gradient",
                expected: params.len(),
                actual: grad.len(),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient entry {i}"),
                date: None,
            });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Mini-batch schedule with a step-wise geometric learning-rate decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub batch_size: usize,
    /// Total number of mini-batches.
    pub steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// The rate drops once every this many batches.
    pub decay_every: usize,
}

impl TrainSchedule {
    pub fn new(batch_size: usize, steps: usize) -> Self {
        TrainSchedule {
            batch_size,
            steps,
            lr_start: 1e-2,
            lr_end: 1e-6,
            decay_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::invalid("schedule", "batch size and decay interval must be positive"));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return Err(Error::invalid("schedule", "learning rates must be positive and non-increasing"));
        }
        Ok(())
    }

    /// Learning rate for 0-based batch `step`.
    pub fn lr(&self, step: usize) -> f64 {
        let stages = self.steps.div_ceil(self.decay_every).saturating_sub(1);
        if stages == 0 {
            return self.lr_start;
        }
        let k = (step / self.decay_every).min(stages) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(k / stages as f64)
    }
}

/// Summary of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Mean loss over the last tenth of the batches.
    pub final_loss: f64,
}

/// Mini-batch training loop.
///
/// `inputs_std` must already be standardised with the network's input
/// scaling. Batches are drawn from `rows` in shuffled epochs; `loss` receives
/// the selected row indices and the network output, writes `dL/d output`
/// into its third argument and returns the batch loss.
pub fn fit<F>(
    net: &mut Network,
    inputs_std: ArrayView2<f64>,
    rows: &[usize],
    schedule: &TrainSchedule,
    seed: u64,
    mut loss: F,
) -> Result<TrainReport>
where
    F: FnMut(&[usize], &Array2<f64>, &mut Array2<f64>) -> f64,
{
    schedule.validate()?;
    if rows.is_empty() {
        return Err(Error::invalid("training rows", "no samples to train on"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = rows.to_vec();
    let batch = schedule.batch_size.min(order.len());
    let mut cursor = order.len();
    let mut adam = Adam::new(net.params.len());
    let tail = (schedule.steps / 10).max(1);
    let mut tail_sum = 0.0;
    let mut idx = Vec::with_capacity(batch);
    let mut grad_out = Array2::zeros((batch, net.output_dim()));
    for step in 0..schedule.steps {
        if cursor + batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        idx.clear();
        idx.extend_from_slice(&order[cursor..cursor + batch]);
        cursor += batch;
        let mut out = Array2::zeros((batch, net.output_dim()));
        let mut caches = Vec::with_capacity(batch.div_ceil(CHUNK));
        for start in (0..batch).step_by(CHUNK) {
            let end = (start + CHUNK).min(batch);
            let mut xb = Array2::zeros((end - start, inputs_std.ncols()));
            for (r, &i) in idx[start..end].iter().enumerate() {
                xb.row_mut(r).assign(&inputs_std.row(i));
            }
            let (o, cache) = net.forward_cached(xb);
            out.slice_mut(s![start..end, ..]).assign(&o);
            caches.push(cache);
        }
        grad_out.fill(0.0);
        let l = loss(&idx, &out, &mut grad_out);
        if !l.is_finite() {
            return Err(Error::NonFinite {
                what: format!("training loss at batch {step}"),
                date: None,
            });
        }
        if step + tail >= schedule.steps {
            tail_sum += l;
        }
        let mut grad = vec![0.0; net.params.len()];
        for (c, cache) in caches.iter().enumerate() {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(batch);
            let part = net.backward(cache, &grad_out.slice(s![start..end, ..]).to_owned());
            grad.iter_mut().zip(part).for_each(|(g, p)| *g += p);
        }
        net.train_step(&mut adam, &grad, schedule.lr(step))?;
    }
    Ok(TrainReport {
        steps: schedule.steps,
        final_loss: tail_sum / tail.min(schedule.steps).max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn zero_net_sigmoid_is_half() {
        let cfg = NetworkConfig::decision(3, 2, &[4, 4], Activation::Tanh);
        let net = Network::zeros(cfg);
        let out = net.forward(array![[1.0, -2.0, 3.0], [0.0, 0.0, 0.0]].view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_identity_layer() {
        let cfg = NetworkConfig::regression(2, 2, &[], Activation::Tanh);
        let mut net = Network::zeros(cfg);
        net.weights_mut(0).assign(&array![[1.0, 0.0], [0.0, 1.0]]);
        let out = net.forward(array![[3.5, -1.25]].view()).unwrap();
        assert_eq!(out, array![[3.5, -1.25]]);
    }

    #[test]
    fn hand_built_two_two_one() {
        let cfg = NetworkConfig::decision(2, 1, &[2], Activation::Tanh);
        let mut net = Network::zeros(cfg);
        net.weights_mut(0).assign(&array![[0.5, -1.0], [0.25, 2.0]]);
        net.bias_mut(0).copy_from_slice(&[0.1, -0.2]);
        net.weights_mut(1).assign(&array![[1.5], [-0.5]]);
        net.bias_mut(1).copy_from_slice(&[0.3]);
        let x = [1.0, 2.0];
        let h1 = (0.5 * 1.0 + 0.25 * 2.0 + 0.1f64).tanh();
        let h2 = (-1.0 * 1.0 + 2.0 * 2.0 - 0.2f64).tanh();
        let expected = 1.0 / (1.0 + (-(1.5 * h1 - 0.5 * h2 + 0.3)).exp());
        assert_relative_eq!(net.forward_one(&x).unwrap()[0], expected, max_relative = 1e-14);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = Network::zeros(NetworkConfig::decision(3, 1, &[2], Activation::Tanh));
        assert!(matches!(net.forward(array![[1.0, 2.0]].view()), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn round_off_threshold() {
        assert_eq!(round_off(&[0.5]), vec![true]);
        assert_eq!(round_off(&[0.4999, 0.5001]), vec![false, true]);
        assert_eq!(round_off(&[0.9; 4]), vec![true; 4]);
    }

    /// Loss `Σ c ⊙ out` with fixed random weights `c`.
    fn linear_loss(net: &Network, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
        let (out, _) = net.forward_cached(x.clone());
        (&out * c).sum()
    }

    fn finite_difference_check(cfg: NetworkConfig, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::new(cfg.clone(), seed).unwrap();
        for p in net.params.iter_mut() {
            *p += 0.1 * rng.random::<f64>();
        }
        net.output_shift = (0..cfg.output_dim).map(|_| rng.random()).collect();
        net.output_scale = (0..cfg.output_dim).map(|_| 0.5 + rng.random::<f64>()).collect();
        let x = Array2::from_shape_fn((5, cfg.input_dim), |_| rng.random::<f64>() * 2.0 - 1.0);
        let c = Array2::from_shape_fn((5, cfg.output_dim), |_| rng.random::<f64>() * 2.0 - 1.0);
        let (_, cache) = net.forward_cached(x.clone());
        let grad = net.backward(&cache, &c);
        let h = 1e-6;
        for i in 0..net.params.len() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = linear_loss(&net, &x, &c);
            net.params[i] = orig - h;
            let down = linear_loss(&net, &x, &c);
            net.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
            assert!(err < 1e-5, "param {i}: fd {fd} vs analytic {}", grad[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(NetworkConfig::decision(3, 2, &[4, 5, 3], Activation::Tanh), 1);
        finite_difference_check(NetworkConfig::regression(4, 3, &[6, 6], Activation::Tanh), 2);
        finite_difference_check(NetworkConfig::regression(2, 1, &[5], Activation::Sigmoid), 3);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut adam = Adam::new(3);
        adam.step(&mut p, &[0.0; 3], 1e-2).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![1.0];
        let err = Adam::new(1).step(&mut p, &[f64::NAN], 1e-2).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn adam_solves_quadratic_bowl() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let target: Vec<f64> = (0..20).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let mut theta: Vec<f64> = (0..20).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let schedule = TrainSchedule {
            lr_end: 1e-4,
            ..TrainSchedule::new(1, 5000)
        };
        let mut adam = Adam::new(20);
        for step in 0..schedule.steps {
            let grad: Vec<f64> = theta.iter().zip(&target).map(|(t, s)| 2.0 * (t - s)).collect();
            adam.step(&mut theta, &grad, schedule.lr(step)).unwrap();
        }
        let err = theta.iter().zip(&target).map(|(t, s)| (t - s).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn schedule_decays_geometrically() {
        let s = TrainSchedule::new(10, 1000);
        assert_eq!(s.lr(0), 1e-2);
        assert_eq!(s.lr(99), 1e-2);
        assert_relative_eq!(s.lr(999), 1e-6, max_relative = 1e-12);
        assert!((1..1000).all(|i| s.lr(i) <= s.lr(i - 1)));
    }

    #[test]
    fn regression_of_constant() {
        let cfg = NetworkConfig::regression(2, 1, &[8, 8], Activation::Tanh);
        let mut net = Network::new(cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((512, 2), |_| rng.random::<f64>());
        let rows: Vec<usize> = (0..512).collect();
        net.fit_input_scaling(x.view(), &rows);
        net.fit_output_scaling(Array2::from_elem((512, 1), 4.2).view(), &rows);
        let xs = net.standardize(x.view());
        let schedule = TrainSchedule {
            lr_end: 1e-4,
            ..TrainSchedule::new(64, 2000)
        };
        let report = fit(&mut net, xs.view(), &rows, &schedule, 1, |_, out, g| {
            let b = out.nrows() as f64;
            let mut l = 0.0;
            for (o, gv) in out.iter().zip(g.iter_mut()) {
                l += (o - 4.2) * (o - 4.2) / b;
                *gv = 2.0 * (o - 4.2) / b;
            }
            l
        })
        .unwrap();
        assert!(report.final_loss < 1e-4, "{report:?}");
        assert_relative_eq!(net.forward_one(&[0.3, 0.7]).unwrap()[0], 4.2, epsilon = 1e-2);
    }

    #[test]
    fn training_is_deterministic_and_serialises() {
        let cfg = NetworkConfig::decision(2, 1, &[4], Activation::Tanh);
        let train = || {
            let mut net = Network::new(cfg.clone(), 11).unwrap();
            let x = Array2::from_shape_fn((64, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
            let rows: Vec<usize> = (0..64).collect();
            fit(&mut net, x.view(), &rows, &TrainSchedule::new(16, 50), 4, |idx, out, g| {
                for (r, &i) in idx.iter().enumerate() {
                    g[[r, 0]] = out[[r, 0]] - (i % 2) as f64;
                }
                0.0
            })
            .unwrap();
            net
        };
        let a = train();
        let b = train();
        assert_eq!(a, b);
        let back = Network::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
    }
}
