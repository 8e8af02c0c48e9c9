//! Dense feed-forward networks with reverse-mode gradients and Adam.
//!
//! Parameters of a network live in one flat `Vec<f64>`. Layer `l` occupies
//! `out_l * in_l` row-major weights (`w[o * in + i]`) followed by `out_l`
//! biases; gradients use the same layout so optimizers work on flat slices.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementwise activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Relu,
    Tanh,
    Identity,
}

impl Unit {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Unit::Relu => x.max(0.0),
            Unit::Tanh => x.tanh(),
            Unit::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unit::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unit::Tanh => 1.0 - y * y,
            Unit::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Softmax,
    /// One elementwise unit per output.
    Mixed(Vec<Unit>),
}

impl Activation {
    fn final_only(&self) -> bool {
        matches!(self, Activation::Softmax | Activation::Mixed(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    fn n_params(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

fn validate_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::config("network needs at least one layer"));
    }
    for (l, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::config(format!("layer {l} has a zero dimension")));
        }
        if l > 0 && specs[l - 1].out_dim != s.in_dim {
            return Err(Error::config(format!(
                "layer {l} expects {} inputs but layer {} produces {}",
                s.in_dim,
                l - 1,
                specs[l - 1].out_dim
            )));
        }
        if s.activation.final_only() && l + 1 != specs.len() {
            return Err(Error::config(format!(
                "layer {l}: softmax/mixed only allowed on the final layer"
            )));
        }
        if let Activation::Mixed(units) = &s.activation {
            if units.len() != s.out_dim {
                return Err(Error::config(format!(
                    "layer {l}: mixed activation lists {} units for {} outputs",
                    units.len(),
                    s.out_dim
                )));
            }
        }
    }
    Ok(())
}

/// Activations recorded by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `values[l]` is the input of layer `l`; the last entry is the output.
    values: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(specs)?;
        for l in 0..net.specs.len() {
            let s = &net.specs[l];
            let limit = (6.0 / (s.in_dim + s.out_dim) as f64).sqrt();
            let off = net.offsets[l];
            for w in &mut net.params[off..off + s.in_dim * s.out_dim] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(specs: Vec<LayerSpec>) -> Result<Self> {
        validate_chain(&specs)?;
        let mut offsets = Vec::with_capacity(specs.len());
        let mut n = 0;
        for s in &specs {
            offsets.push(n);
            n += s.n_params();
        }
        Ok(Self {
            specs,
            offsets,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(specs: Vec<LayerSpec>, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(specs)?;
        if params.len() != net.params.len() {
            return Err(Error::ShapeMismatch {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("network parameters must be finite"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn in_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    /// Weights of layer `l` (row-major, `out x in`).
    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let s = &self.specs[l];
        let off = self.offsets[l];
        &mut self.params[off..off + s.in_dim * s.out_dim]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let s = &self.specs[l];
        let off = self.offsets[l] + s.in_dim * s.out_dim;
        &mut self.params[off..off + s.out_dim]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn affine(&self, l: usize, x: &[f64], out: &mut Vec<f64>) {
        let s = &self.specs[l];
        let off = self.offsets[l];
        let w = &self.params[off..off + s.in_dim * s.out_dim];
        let b = &self.params[off + s.in_dim * s.out_dim..off + s.n_params()];
        out.clear();
        out.extend(
            w.chunks_exact(s.in_dim)
                .zip(b)
                .map(|(row, &bias)| row.iter().zip(x).fold(bias, |acc, (wi, xi)| acc + wi * xi)),
        );
    }

    fn activate(act: &Activation, pre: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match act {
            Activation::Relu => out.extend(pre.iter().map(|&x| Unit::Relu.apply(x))),
            Activation::Tanh => out.extend(pre.iter().map(|&x| Unit::Tanh.apply(x))),
            Activation::Identity => out.extend_from_slice(pre),
            Activation::Mixed(units) => out.extend(pre.iter().zip(units).map(|(&x, u)| u.apply(x))),
            Activation::Softmax => {
                let m = pre.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                out.extend(pre.iter().map(|&x| (x - m).exp()));
                let z: f64 = out.iter().sum();
                out.iter_mut().for_each(|v| *v /= z);
            }
        }
    }

    /// Forward pass keeping every intermediate value for [`Network::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.specs.len() + 1);
        let mut pre = Vec::with_capacity(self.specs.len());
        values.push(x.to_vec());
        for (l, s) in self.specs.iter().enumerate() {
            let mut z = Vec::with_capacity(s.out_dim);
            self.affine(l, &values[l], &mut z);
            let mut y = Vec::with_capacity(s.out_dim);
            Self::activate(&s.activation, &z, &mut y);
            pre.push(z);
            values.push(y);
        }
        let out = values[values.len() - 1].clone();
        Ok((out, ForwardCache { values, pre }))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut z = Vec::new();
        for (l, s) in self.specs.iter().enumerate() {
            self.affine(l, &cur, &mut z);
            Self::activate(&s.activation, &z, &mut cur);
        }
        Ok(cur)
    }

    /// Gradients of a scalar loss with respect to the parameters and the
    /// input, given `upstream = dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = vec![0.0; self.params.len()];
        let dx = self.backward_accumulate(cache, upstream, &mut grads)?;
        Ok((grads, dx))
    }

    /// Like [`Network::backward`] but adds the parameter gradient into `grads`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if cache.values.len() != self.specs.len() + 1 || cache.values[0].len() != self.in_dim() {
            return Err(Error::input("forward cache does not match this network"));
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.out_dim(),
                got: upstream.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let mut g = upstream.to_vec();
        for l in (0..self.specs.len()).rev() {
            let s = &self.specs[l];
            let y = &cache.values[l + 1];
            let z = &cache.pre[l];
            let dz: Vec<f64> = match &s.activation {
                Activation::Relu => g
                    .iter()
                    .zip(z)
                    .map(|(gi, &zi)| gi * Unit::Relu.derivative(zi, 0.0))
                    .collect(),
                Activation::Tanh => g
                    .iter()
                    .zip(y)
                    .map(|(gi, &yi)| gi * Unit::Tanh.derivative(0.0, yi))
                    .collect(),
                Activation::Identity => g.clone(),
                Activation::Mixed(units) => g
                    .iter()
                    .zip(z.iter().zip(y))
                    .zip(units)
                    .map(|((gi, (&zi, &yi)), u)| gi * u.derivative(zi, yi))
                    .collect(),
                Activation::Softmax => {
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    g.iter().zip(y).map(|(gi, yi)| yi * (gi - dot)).collect()
                }
            };
            let x = &cache.values[l];
            let off = self.offsets[l];
            let nw = s.in_dim * s.out_dim;
            let w = &self.params[off..off + nw];
            let (gw, gb) = grads[off..off + s.n_params()].split_at_mut(nw);
            for (o, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (gwi, xi) in gw[o * s.in_dim..(o + 1) * s.in_dim].iter_mut().zip(x) {
                    *gwi += d * xi;
                }
            }
            let mut dx = vec![0.0; s.in_dim];
            for (row, &d) in w.chunks_exact(s.in_dim).zip(&dz) {
                if d == 0.0 {
                    continue;
                }
                for (dxi, wi) in dx.iter_mut().zip(row) {
                    *dxi += wi * d;
                }
            }
            g = dx;
        }
        Ok(g)
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        let layers = self
            .specs
            .iter()
            .enumerate()
            .map(|(l, s)| {
                let off = self.offsets[l];
                let nw = s.in_dim * s.out_dim;
                LayerCheckpoint {
                    in_dim: s.in_dim,
                    out_dim: s.out_dim,
                    activation: s.activation.clone(),
                    weights: self.params[off..off + nw].to_vec(),
                    bias: self.params[off + nw..off + s.n_params()].to_vec(),
                }
            })
            .collect();
        NetCheckpoint {
            format: NET_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layers,
        }
    }

    pub fn from_checkpoint(ck: &NetCheckpoint) -> Result<Self> {
        if ck.format != NET_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unexpected format tag {:?}",
                ck.format
            )));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        let specs: Vec<LayerSpec> = ck
            .layers
            .iter()
            .map(|l| LayerSpec::new(l.in_dim, l.out_dim, l.activation.clone()))
            .collect();
        let mut params = Vec::new();
        for (i, l) in ck.layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Checkpoint(format!(
                    "layer {i} arrays do not match its shape"
                )));
            }
            params.extend_from_slice(&l.weights);
            params.extend_from_slice(&l.bias);
        }
        Self::from_params(specs, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: NetCheckpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_checkpoint(&ck)
    }
}

pub const NET_FORMAT: &str = "heatplan-net";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk network layout: the layer chain with flat row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format: String,
    pub version: u32,
    pub layers: Vec<LayerCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                got: params.len(),
            });
        }
        if grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                got: grads.len(),
            });
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Floor added inside the logarithm of [`cross_entropy`].
pub const LOG_FLOOR: f64 = 1e-12;

/// Cross-entropy between a predicted and a target distribution, with its
/// gradient with respect to the prediction.
pub fn cross_entropy(prediction: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if prediction.len() != target.len() {
        return Err(Error::ShapeMismatch {
            expected: target.len(),
            got: prediction.len(),
        });
    }
    for (name, d) in [("prediction", prediction), ("target", target)] {
        if d.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::input(format!(
                "{name} has negative or non-finite entries"
            )));
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::input(format!("{name} sums to {s}, expected 1")));
        }
    }
    let loss = -prediction
        .iter()
        .zip(target)
        .map(|(p, t)| t * (p + LOG_FLOOR).ln())
        .sum::<f64>();
    let grad = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| -t / (p + LOG_FLOOR))
        .collect();
    Ok((loss, grad))
}
