//! A small dense-network engine: forward pass, backpropagation, SGD and Adam.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Outcome;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Activation::Elu, Activation::Relu, Activation::Tanh, Activation::Sigmoid];

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative at pre-activation `z`, given `a = apply(z)`.
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            _ => Err(Error::Domain { param: "activation".into(), value: s.into() }),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    /// Mean squared error.
    L2,
    /// Mean absolute error.
    L1,
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L2" | "l2" => Ok(Loss::L2),
            "L1" | "l1" => Ok(Loss::L1),
            _ => Err(Error::Domain { param: "loss_function".into(), value: s.into() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Domain { param: "optimizer".into(), value: s.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub n_layers: usize,
    pub n_units: usize,
    pub activation: Activation,
    pub loss: Loss,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub adam_beta1: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            n_layers: 2,
            n_units: 16,
            activation: Activation::Tanh,
            loss: Loss::L2,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-2,
            batch_size: 11,
            n_epochs: 100,
            adam_beta1: 0.9,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |p: &str, v: String| Err(Error::InvalidParam { param: p.into(), reason: v });
        if self.n_layers < 1 {
            return bad("n_layers", "must be at least 1".into());
        }
        if self.n_units < 1 {
            return bad("n_units", "must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("{} is not positive", self.learning_rate));
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return bad("adam_beta1", format!("{} is outside [0, 1)", self.adam_beta1));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptySample);
        }
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), got: targets.len() });
        }
        let (di, dt) = (inputs[0].len(), targets[0].len());
        for (x, y) in inputs.iter().zip(&targets) {
            if x.len() != di {
                return Err(Error::DimensionMismatch { expected: di, got: x.len() });
            }
            if y.len() != dt {
                return Err(Error::DimensionMismatch { expected: dt, got: y.len() });
            }
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.targets[0].len()
    }
}

/// Fully connected network: `n_layers` hidden layers of equal width and a
/// linear output layer. Parameters live in one flat vector, layer by layer,
/// each layer as a row-major weight matrix followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
    pub activation: Activation,
}

impl Mlp {
    pub fn zeros(input_dim: usize, output_dim: usize, n_layers: usize, n_units: usize, activation: Activation) -> Self {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat(n_units).take(n_layers));
        dims.push(output_dim);
        let n: usize = dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Mlp { dims, params: vec![0.0; n], activation }
    }

    /// Weights uniform in ±1/sqrt(fan_in), biases zero.
    pub fn init(input_dim: usize, output_dim: usize, cfg: &MlpConfig, seed: u64) -> Self {
        let mut net = Self::zeros(input_dim, output_dim, cfg.n_layers, cfg.n_units, cfg.activation);
        let mut r = rng::stream(seed);
        let mut off = 0;
        for l in 0..net.dims.len() - 1 {
            let (fan_in, fan_out) = (net.dims[l], net.dims[l + 1]);
            let lim = 1.0 / (fan_in as f64).sqrt();
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = r.gen_range(-lim..lim);
            }
            off += fan_out * (fan_in + 1);
        }
        net
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn n_layers_total(&self) -> usize {
        self.dims.len() - 1
    }

    /// Offset of layer `l`'s weights; its biases follow at `+ out * in`.
    fn offset(&self, l: usize) -> usize {
        self.dims[..=l].windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    fn layer_forward(&self, l: usize, a: &[f64], z: &mut Vec<f64>) {
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let off = self.offset(l);
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_out * (n_in + 1)];
        z.clear();
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            z.push(b[o] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>());
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let last = self.n_layers_total() - 1;
        for l in 0..=last {
            self.layer_forward(l, &a, &mut z);
            if l < last {
                a = z.iter().map(|v| self.activation.apply(*v)).collect();
            } else {
                a = z.clone();
            }
        }
        a
    }
}

fn loss_and_slope(loss: Loss, pred: f64, target: f64) -> (f64, f64) {
    let r = pred - target;
    match loss {
        Loss::L2 => (r * r, 2.0 * r),
        Loss::L1 => (r.abs(), if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 }),
    }
}

/// Mean loss over the batch and the gradient with respect to every parameter,
/// in the network's flat parameter order.
pub fn mlp_forward_backward(net: &Mlp, loss: Loss, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    if inputs.is_empty() {
        return Err(Error::EmptySample);
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: inputs.len(), got: targets.len() });
    }
    let nl = net.n_layers_total();
    let out_dim = net.dims[nl];
    let scale = 1.0 / (inputs.len() * out_dim) as f64;
    let offsets: Vec<usize> = (0..nl).map(|l| net.offset(l)).collect();
    let mut grad = vec![0.0; net.n_params()];
    let mut total = 0.0;
    let mut zs: Vec<Vec<f64>> = vec![Vec::new(); nl];
    let mut acts: Vec<Vec<f64>> = vec![Vec::new(); nl + 1];
    for (x, y) in inputs.iter().zip(targets) {
        if x.len() != net.dims[0] {
            return Err(Error::DimensionMismatch { expected: net.dims[0], got: x.len() });
        }
        if y.len() != out_dim {
            return Err(Error::DimensionMismatch { expected: out_dim, got: y.len() });
        }
        acts[0].clone_from(x);
        for l in 0..nl {
            let (head, tail) = acts.split_at_mut(l + 1);
            net.layer_forward(l, &head[l], &mut zs[l]);
            let a = &mut tail[0];
            a.clear();
            if l + 1 < nl {
                a.extend(zs[l].iter().map(|v| net.activation.apply(*v)));
            } else {
                a.extend_from_slice(&zs[l]);
            }
        }
        let mut delta: Vec<f64> = Vec::with_capacity(out_dim);
        for (p, t) in acts[nl].iter().zip(y) {
            let (v, s) = loss_and_slope(loss, *p, *t);
            total += v;
            delta.push(s * scale);
        }
        for l in (0..nl).rev() {
            let (n_in, n_out) = (net.dims[l], net.dims[l + 1]);
            let off = offsets[l];
            let a_in = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let g = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (gi, ai) in g.iter_mut().zip(a_in) {
                        *gi += d * ai;
                    }
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &net.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        for (pi, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                            *pi += wi * d;
                        }
                    }
                }
                for (i, p) in prev.iter_mut().enumerate() {
                    *p *= net.activation.derivative(zs[l - 1][i], acts[l][i]);
                }
                delta = prev;
            }
        }
    }
    let loss_value = total * scale;
    if !loss_value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("network loss or gradient".into()));
    }
    Ok((loss_value, grad))
}

/// Plain SGD or Adam (β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, beta1: f64, n_params: usize) -> Self {
        let state = if kind == OptimizerKind::Adam { n_params } else { 0 };
        Optimizer { kind, lr, beta1, beta2: 0.999, eps: 1e-8, m: vec![0.0; state], v: vec![0.0; state], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - self.beta1.powi(self.t);
                let c2 = 1.0 - self.beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                }
            }
        }
    }
}

/// Mean squared error of the network on a dataset.
pub fn mse(net: &Mlp, data: &Dataset) -> f64 {
    let mut s = 0.0;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        for (p, t) in net.forward(x).iter().zip(y) {
            s += (p - t).powi(2);
        }
    }
    s / (data.len() * data.output_dim()) as f64
}

/// Train with mini-batches reshuffled every epoch and return the test mean
/// squared error. A non-finite loss, gradient or prediction is a divergence.
pub fn mlp_train(cfg: &MlpConfig, train: &Dataset) -> Result<Mlp> {
    cfg.validate()?;
    let mut net = Mlp::init(train.input_dim(), train.output_dim(), cfg, rng::derive_named(cfg.seed, "init", &[]));
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.adam_beta1, net.n_params());
    let mut shuffle = rng::stream(rng::derive_named(cfg.seed, "shuffle", &[]));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut xb: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_size);
    let mut yb: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.n_epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.push(train.inputs[i].clone());
                yb.push(train.targets[i].clone());
            }
            let (_, grad) = mlp_forward_backward(&net, cfg.loss, &xb, &yb)?;
            opt.step(&mut net.params, &grad);
        }
    }
    if net.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("network parameters".into()));
    }
    Ok(net)
}

pub fn mlp_train_eval(cfg: &MlpConfig, train: &Dataset, test: &Dataset) -> Outcome {
    match mlp_train(cfg, train) {
        Ok(net) => {
            let e = mse(&net, test);
            if e.is_finite() {
                Outcome::ok(e).with_tag("n_params", net.n_params())
            } else {
                Outcome::diverged()
            }
        }
        Err(Error::NonFinite(_)) => Outcome::diverged(),
        Err(e) => Outcome::failed(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.3 - 0.6, 0.2 * i as f64]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] * x[1] + 0.1]).collect();
        (xs, ys)
    }

    #[test]
    fn zero_network_loss_is_mean_square_target() {
        let (xs, ys) = toy();
        let net = Mlp::zeros(2, 1, 2, 3, Activation::Tanh);
        let (l, _) = mlp_forward_backward(&net, Loss::L2, &xs, &ys).unwrap();
        let expect = ys.iter().map(|y| y[0] * y[0]).sum::<f64>() / ys.len() as f64;
        assert!((l - expect).abs() < 1e-15);
    }

    #[test]
    fn relu_dead_units_block_gradient() {
        let cfg = MlpConfig { n_layers: 1, n_units: 3, activation: Activation::Relu, ..Default::default() };
        let mut net = Mlp::init(1, 1, &cfg, 3);
        // first layer: weights 0, biases -1, so every pre-activation is negative
        net.params_mut()[..3].fill(0.0);
        net.params_mut()[3..6].fill(-1.0);
        let (_, g) = mlp_forward_backward(&net, Loss::L2, &[vec![0.4]], &[vec![1.0]]).unwrap();
        assert!(g[..6].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn optimizer_steps() {
        let mut p = vec![0.5, -1.0, 2.0];
        let mut adam = Optimizer::new(OptimizerKind::Adam, 0.1, 0.9, 3);
        adam.step(&mut p, &[0.0, 0.0, 0.0]);
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        let mut sgd = Optimizer::new(OptimizerKind::Sgd, 0.1, 0.9, 3);
        sgd.step(&mut p, &[1.0, -2.0, 0.5]);
        assert_eq!(p, vec![0.5 - 0.1, -1.0 + 0.2, 2.0 - 0.05]);
    }

    #[test]
    fn constant_target_is_learned() {
        let xs: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64 / 10.0]).collect();
        let ys = vec![vec![0.8]; 11];
        let data = Dataset::new(xs, ys).unwrap();
        let cfg = MlpConfig { n_epochs: 300, learning_rate: 1e-2, ..Default::default() };
        let o = mlp_train_eval(&cfg, &data, &data);
        assert!(o.error.unwrap() < 1e-3, "{:?}", o);
    }
}
