//! Dense ReLU networks and the ADAM optimizer.
//!
//! An [`Mlp`] is a plain stack of affine layers with elementwise
//! activations. Parameters live in the network as value tensors; each
//! forward pass registers them as leaves on the caller's tape, so gradients
//! come back keyed by the returned node ids.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation '{other}'"
            ))),
        }
    }

    fn apply_plain(self, x: &mut [f64]) {
        match self {
            Activation::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => x.iter_mut().for_each(|v| *v = tensor::sigmoid(*v)),
            Activation::Identity => {}
        }
    }
}

/// One affine layer: `y = act(x · weight + bias)`, weight is `[in × out]`.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Initialize a dense network. Weights are He draws `N(0, 2/fan_in)`
/// (variance `2/fan_in`), biases zero; deterministic for a given seed.
pub fn init_mlp(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Mlp> {
    if dims.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "init_mlp needs at least 2 dims, got {:?}",
            dims
        )));
    }
    if let Some(zero) = dims.iter().position(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "init_mlp: zero width at position {zero} in {:?}",
            dims
        )));
    }
    if activations.len() != dims.len() - 1 {
        return Err(Error::InvalidArgument(format!(
            "init_mlp: {} dims need {} activations, got {}",
            dims.len(),
            dims.len() - 1,
            activations.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (i, window) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (window[0], window[1]);
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let wdata: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| normal.sample(&mut rng))
            .collect();
        layers.push(DenseLayer {
            weight: Tensor::new(vec![fan_in, fan_out], wdata)?,
            bias: Tensor::zeros(vec![fan_out]),
            activation: activations[i],
        });
    }
    Ok(Mlp { layers })
}

impl Mlp {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::ShapeMismatch {
                    op: "mlp chain",
                    left: pair[0].weight.shape().to_vec(),
                    right: pair[1].weight.shape().to_vec(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").output_dim()
    }

    /// Parameters in canonical order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Forward pass recorded on a tape. Registers every parameter as a leaf
    /// and returns the output node plus parameter node ids in canonical
    /// order (matching [`Mlp::params`]).
    pub fn forward_on(&self, tape: &mut Tape, x: NodeId) -> Result<(NodeId, Vec<NodeId>)> {
        let got = tape.value(x).shape().to_vec();
        if got.len() != 2 || got[1] != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "mlp forward",
                left: got,
                right: vec![self.input_dim()],
            });
        }
        let mut param_ids = Vec::with_capacity(self.layers.len() * 2);
        let mut h = x;
        for layer in &self.layers {
            let w = tape.leaf(layer.weight.clone());
            let b = tape.leaf(layer.bias.clone());
            param_ids.push(w);
            param_ids.push(b);
            let affine = tape.matmul(h, w)?;
            let biased = tape.add_row(affine, b)?;
            h = match layer.activation {
                Activation::Relu => tape.relu(biased)?,
                Activation::Sigmoid => tape.sigmoid(biased)?,
                Activation::Identity => biased,
            };
        }
        Ok((h, param_ids))
    }

    /// Tape-free forward pass for evaluation and sampling. Uses the same
    /// kernels as the taped path, so values agree bit for bit.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "mlp infer",
                left: x.shape().to_vec(),
                right: vec![self.input_dim()],
            });
        }
        let mut h = x.clone();
        for layer in &self.layers {
            let (m, k) = (h.shape()[0], h.shape()[1]);
            let n = layer.output_dim();
            let mut data = tensor::matmul(h.data(), layer.weight.data(), m, k, n);
            for i in 0..m {
                for (d, b) in data[i * n..(i + 1) * n].iter_mut().zip(layer.bias.data()) {
                    *d += b;
                }
            }
            layer.activation.apply_plain(&mut data);
            h = Tensor::new(vec![m, n], data)?;
        }
        Ok(h)
    }
}

// ── ADAM ─────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor], config: AdamConfig) -> Self {
        AdamState {
            config,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub(crate) fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub(crate) fn restore(config: AdamConfig, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, t: u64) -> Self {
        AdamState { config, m, v, t }
    }
}

/// One ADAM update with bias correction:
/// `m ← β1·m + (1-β1)·g`, `v ← β2·v + (1-β2)·g²`,
/// `param ← param − lr·m̂ / (√v̂ + ε)`.
///
/// `grads[i]` may be `None` when no gradient flowed to parameter `i`
/// (treated as zero). Non-finite gradients abort with a diagnostic.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut Tensor],
    grads: &[Option<&Tensor>],
) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "adam_step: {} params, {} grads, state tracks {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    context: "gradient".into(),
                    diagnostic: format!("parameter {i}, shape {:?}", g.shape()),
                });
            }
        }
    }

    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);

    for (i, param) in params.iter_mut().enumerate() {
        let g = match grads[i] {
            Some(g) => g,
            None => continue,
        };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for ((pv, gv), (mv, vv)) in param
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
