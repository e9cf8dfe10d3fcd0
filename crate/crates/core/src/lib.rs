//! A dependency-light generative-modeling engine: tape-based reverse-mode
//! autodiff, dense ReLU networks with ADAM, variational and conditional
//! variational autoencoders trained on the evidence lower bound, plus 1-D
//! numerical oracles for the inverse-CDF latent construction.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`autodiff`] — dense `f64` tensors and the Wengert tape.
//! - [`nn`] — dense layers, He initialization, ADAM, checkpoints.
//! - [`vae`] / [`cvae`] — encoders, reparameterized sampling, closed-form
//!   KL, decoder likelihoods, training and evaluation.
//! - [`data`] — IDX ingestion, stochastic binarization, column
//!   conditioning, the 2-D ring generator, seeded batching.
//! - [`oracle`] — quadrature verification that the prescribed Gaussian
//!   recognition model approaches the exact posterior as the decoder noise
//!   shrinks.

pub mod autodiff;
pub mod checkpoint;
pub mod cvae;
pub mod data;
pub mod error;
pub mod nn;
pub mod oracle;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use tensor::Tensor;
