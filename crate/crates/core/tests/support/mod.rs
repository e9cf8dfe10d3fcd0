//! Shared helpers for the oracle-style integration tests. Everything here
//! is independent of the library's own computation paths: Monte-Carlo
//! estimators and closed forms only.

#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use vaelab_core::nn::{Activation, DenseLayer, Mlp};
use vaelab_core::vae::{DecoderFamily, ModelConfig, VaeModel};
use vaelab_core::Tensor;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Monte-Carlo estimate of `E_{z~q}[log q(z) - log p(z)]` for a diagonal
/// Gaussian q against the standard normal, with its standard error.
pub fn mc_kl_estimate<R: Rng>(mu: &[f64], log_var: &[f64], n: usize, rng: &mut R) -> (f64, f64) {
    let d = mu.len();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut log_q = 0.0;
        let mut log_p = 0.0;
        for j in 0..d {
            let sd = (0.5 * log_var[j]).exp();
            let eps: f64 = StandardNormal.sample(rng);
            let z = mu[j] + sd * eps;
            log_q += -0.5 * LN_2PI - 0.5 * log_var[j] - 0.5 * eps * eps;
            log_p += -0.5 * LN_2PI - 0.5 * z * z;
        }
        samples.push(log_q - log_p);
    }
    mean_se(&samples)
}

pub fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// A d=D=1 model with a fixed affine decoder `f(z) = w·z + b`, Gaussian
/// observation noise, and an arbitrary (random) encoder. Its marginal
/// likelihood is available in closed form.
pub fn linear_gaussian_model(w: f64, b: f64, sigma: f64, seed: u64) -> VaeModel {
    let mut model = VaeModel::init(&ModelConfig {
        input_dim: 1,
        hidden: vec![4],
        latent_dim: 1,
        family: DecoderFamily::gaussian(sigma).unwrap(),
        seed,
    })
    .unwrap();
    model.decoder = Mlp::from_layers(vec![DenseLayer {
        weight: Tensor::new(vec![1, 1], vec![w]).unwrap(),
        bias: Tensor::vector(vec![b]),
        activation: Activation::Identity,
    }])
    .unwrap();
    model
}

/// Exact `log P(x)` of the linear-Gaussian model above:
/// `x = w·z + b + σ·η` with `z, η ~ N(0,1)`, so `x ~ N(b, w² + σ²)`.
pub fn exact_log_marginal(w: f64, b: f64, sigma: f64, x: f64) -> f64 {
    let var = w * w + sigma * sigma;
    -0.5 * LN_2PI - 0.5 * var.ln() - (x - b) * (x - b) / (2.0 * var)
}

/// Closed-form KL between two 1-D Gaussians.
pub fn gaussian_kl(m0: f64, s0: f64, m1: f64, s1: f64) -> f64 {
    (s1 / s0).ln() + (s0 * s0 + (m0 - m1) * (m0 - m1)) / (2.0 * s1 * s1) - 0.5
}
