//! The variational autoencoder objective: amortized Gaussian recognition,
//! reparameterized sampling, closed-form KL against the prior, decoder
//! likelihoods, single-sample training and multi-sample evaluation.
//!
//! Every evaluation path (KL, reconstruction likelihood, ELBO terms) runs
//! through the same tape ops as training, so reported values and trained
//! values agree bit for bit.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::nn::{adam_step, init_mlp, Activation, AdamConfig, AdamState, Mlp};
use crate::tensor::Tensor;

/// Observation model for the decoder output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecoderFamily {
    /// Factorized Bernoulli on targets in [0,1]; decoder emits logits.
    Bernoulli,
    /// Isotropic Gaussian with fixed scale; decoder emits the mean.
    Gaussian { sigma: f64 },
}

impl DecoderFamily {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(DecoderFamily::Gaussian { sigma })
        } else {
            Err(Error::InvalidArgument(format!(
                "gaussian decoder needs sigma > 0, got {sigma}"
            )))
        }
    }
}

/// Per-sample diagonal Gaussian posterior parameters.
#[derive(Clone, Debug)]
pub struct GaussianPosterior {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl GaussianPosterior {
    pub fn new(mu: Tensor, log_var: Tensor) -> Result<Self> {
        if mu.shape() != log_var.shape() {
            return Err(Error::ShapeMismatch {
                op: "GaussianPosterior",
                left: mu.shape().to_vec(),
                right: log_var.shape().to_vec(),
            });
        }
        Ok(GaussianPosterior { mu, log_var })
    }
}

/// Decomposed objective value, in nats. `total = recon - kl` exactly as
/// computed.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

/// Architecture and initialization choices for [`VaeModel::init`].
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub family: DecoderFamily,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct VaeModel {
    /// Maps `[batch × D]` inputs to `[batch × 2d]` (mu ‖ log_var).
    pub encoder: Mlp,
    /// Maps `[batch × d]` codes to `[batch × D]` outputs.
    pub decoder: Mlp,
    pub latent_dim: usize,
    pub family: DecoderFamily,
    /// Prior is `N(0, prior_scale² I)`; 1 except on models produced by
    /// [`lambda_absorb_transform`].
    pub prior_scale: f64,
}

impl VaeModel {
    /// Build encoder `[D, hidden.., 2d]` and decoder `[d, hidden-reversed..,
    /// D]`, ReLU hidden layers, identity outputs.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        if cfg.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent_dim must be positive".into()));
        }
        if let DecoderFamily::Gaussian { sigma } = cfg.family {
            DecoderFamily::gaussian(sigma)?;
        }
        let mut enc_dims = vec![cfg.input_dim];
        enc_dims.extend(&cfg.hidden);
        enc_dims.push(2 * cfg.latent_dim);
        let mut dec_dims = vec![cfg.latent_dim];
        dec_dims.extend(cfg.hidden.iter().rev());
        dec_dims.push(cfg.input_dim);

        let acts = |n: usize| {
            let mut a = vec![Activation::Relu; n - 1];
            a.push(Activation::Identity);
            a
        };
        let encoder = init_mlp(&enc_dims, &acts(enc_dims.len() - 1), cfg.seed)?;
        let decoder = init_mlp(
            &dec_dims,
            &acts(dec_dims.len() - 1),
            cfg.seed ^ 0x9e37_79b9_7f4a_7c15,
        )?;
        Ok(VaeModel {
            encoder,
            decoder,
            latent_dim: cfg.latent_dim,
            family: cfg.family,
            prior_scale: 1.0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// ADAM state covering encoder then decoder parameters, the order
    /// [`train_step`] applies updates in.
    pub fn adam_state(&self, config: AdamConfig) -> AdamState {
        let params: Vec<&Tensor> = self
            .encoder
            .params()
            .into_iter()
            .chain(self.decoder.params())
            .collect();
        AdamState::new(&params, config)
    }
}

// ── On-tape machinery (shared with the cvae module) ──────────────────

pub(crate) struct PosteriorNodes {
    pub mu: NodeId,
    pub log_var: NodeId,
}

/// Forward the encoder and split its output into (mu, log_var), with
/// log_var clamped to [-10, 10].
pub(crate) fn encode_nodes(
    tape: &mut Tape,
    encoder: &Mlp,
    latent_dim: usize,
    x: NodeId,
) -> Result<(PosteriorNodes, Vec<NodeId>)> {
    let (out, param_ids) = encoder.forward_on(tape, x)?;
    let width = tape.value(out).shape()[1];
    if width != 2 * latent_dim {
        return Err(Error::ShapeMismatch {
            op: "encode",
            left: vec![width],
            right: vec![2 * latent_dim],
        });
    }
    let mu = tape.slice_cols(out, 0, latent_dim)?;
    let lv_raw = tape.slice_cols(out, latent_dim, 2 * latent_dim)?;
    let log_var = tape.clamp(lv_raw, LOG_VAR_MIN, LOG_VAR_MAX)?;
    Ok((PosteriorNodes { mu, log_var }, param_ids))
}

pub(crate) const LOG_VAR_MIN: f64 = -10.0;
pub(crate) const LOG_VAR_MAX: f64 = 10.0;

/// `z = mu + exp(log_var / 2) ⊙ eps` on the tape.
pub(crate) fn reparameterize_nodes(
    tape: &mut Tape,
    q: &PosteriorNodes,
    eps: NodeId,
) -> Result<NodeId> {
    let half_lv = tape.scale(q.log_var, 0.5)?;
    let std = tape.exp(half_lv)?;
    let noise = tape.mul(std, eps)?;
    tape.add(q.mu, noise)
}

/// Per-row KL divergence of the posterior from `N(0, prior_var · I)`:
/// `½ Σ_j (σ²/s² + μ²/s² − 1 − log(σ²/s²))`.
pub(crate) fn kl_nodes(tape: &mut Tape, q: &PosteriorNodes, prior_var: f64) -> Result<NodeId> {
    let inv = 1.0 / prior_var;
    let exp_lv = tape.exp(q.log_var)?;
    let t1 = tape.scale(exp_lv, inv)?;
    let mu2 = tape.square(q.mu)?;
    let t2 = tape.scale(mu2, inv)?;
    let var_terms = tape.add(t1, t2)?;
    let neg_lv = tape.neg(q.log_var)?;
    let shifted = tape.add(var_terms, neg_lv)?;
    // −1 + ln(s²) collapses to −1 for the standard prior.
    let inner = tape.add_scalar(shifted, prior_var.ln() - 1.0)?;
    let per_row = tape.sum_axis(inner, 1)?;
    tape.scale(per_row, 0.5)
}

/// Per-row log-likelihood of `target` under the decoder output.
/// Gaussian drops the θ-independent normalizing constant.
pub(crate) fn recon_nodes(
    tape: &mut Tape,
    family: DecoderFamily,
    decoder_out: NodeId,
    target: &Tensor,
) -> Result<NodeId> {
    match family {
        DecoderFamily::Bernoulli => {
            if let Some(bad) = target.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain {
                    op: "recon_log_likelihood",
                    detail: format!("bernoulli target {bad} outside [0,1]"),
                });
            }
            let ce = tape.sigmoid_ce_logits(decoder_out, target)?;
            let per_row = tape.sum_axis(ce, 1)?;
            tape.neg(per_row)
        }
        DecoderFamily::Gaussian { sigma } => {
            let t = tape.leaf(target.clone());
            let diff = tape.sub(t, decoder_out)?;
            let sq = tape.square(diff)?;
            let ssq = tape.sum_axis(sq, 1)?;
            tape.scale(ssq, -0.5 / (sigma * sigma))
        }
    }
}

pub(crate) struct Objective {
    pub recon_rows: NodeId,
    pub kl_rows: NodeId,
    pub recon_mean: NodeId,
    pub kl_mean: NodeId,
    pub total: NodeId,
    pub neg_total: NodeId,
    pub enc_param_ids: Vec<NodeId>,
    pub dec_param_ids: Vec<NodeId>,
}

impl Objective {
    pub fn terms(&self, tape: &Tape) -> ElboTerms {
        ElboTerms {
            recon: tape.value(self.recon_mean).item(),
            kl: tape.value(self.kl_mean).item(),
            total: tape.value(self.total).item(),
        }
    }
}

/// The single-sample objective on a tape: encode, reparameterize with the
/// supplied noise, decode (optionally concatenating conditioning columns),
/// and assemble `mean(recon) − mean(kl)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn build_objective(
    tape: &mut Tape,
    encoder: &Mlp,
    decoder: &Mlp,
    latent_dim: usize,
    family: DecoderFamily,
    prior_scale: f64,
    enc_input: &Tensor,
    cond: Option<&Tensor>,
    target: &Tensor,
    eps: &Tensor,
) -> Result<Objective> {
    let x = tape.leaf(enc_input.clone());
    let (q, enc_param_ids) = encode_nodes(tape, encoder, latent_dim, x)?;
    let eps_id = tape.leaf(eps.clone());
    let z = reparameterize_nodes(tape, &q, eps_id)?;
    let dec_in = match cond {
        Some(c) => {
            let cid = tape.leaf(c.clone());
            tape.concat_cols(z, cid)?
        }
        None => z,
    };
    let (dec_out, dec_param_ids) = decoder.forward_on(tape, dec_in)?;
    let recon_rows = recon_nodes(tape, family, dec_out, target)?;
    let kl_rows = kl_nodes(tape, &q, prior_scale * prior_scale)?;
    let recon_mean = tape.mean(recon_rows)?;
    let kl_mean = tape.mean(kl_rows)?;
    let total = tape.sub(recon_mean, kl_mean)?;
    let neg_total = tape.neg(total)?;
    Ok(Objective {
        recon_rows,
        kl_rows,
        recon_mean,
        kl_mean,
        total,
        neg_total,
        enc_param_ids,
        dec_param_ids,
    })
}

pub(crate) fn standard_normal<R: Rng>(rng: &mut R, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches draw count")
}

// ── Public operations ────────────────────────────────────────────────

/// Posterior parameters for a batch of inputs.
pub fn encode(model: &VaeModel, x: &Tensor) -> Result<GaussianPosterior> {
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone());
    let (q, _) = encode_nodes(&mut tape, &model.encoder, model.latent_dim, xid)?;
    GaussianPosterior::new(tape.value(q.mu).clone(), tape.value(q.log_var).clone())
}

/// `z = mu + exp(log_var/2) ⊙ eps`.
pub fn reparameterize(q: &GaussianPosterior, eps: &Tensor) -> Result<Tensor> {
    if eps.shape() != q.mu.shape() {
        return Err(Error::ShapeMismatch {
            op: "reparameterize",
            left: q.mu.shape().to_vec(),
            right: eps.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let nodes = PosteriorNodes {
        mu: tape.leaf(q.mu.clone()),
        log_var: tape.leaf(q.log_var.clone()),
    };
    let eps_id = tape.leaf(eps.clone());
    let z = reparameterize_nodes(&mut tape, &nodes, eps_id)?;
    Ok(tape.value(z).clone())
}

/// Per-row KL divergence `D[N(mu, diag σ²) ‖ N(0, I)]` in nats.
pub fn kl_gaussian_std(q: &GaussianPosterior) -> Result<Tensor> {
    let mut tape = Tape::new();
    let nodes = PosteriorNodes {
        mu: tape.leaf(q.mu.clone()),
        log_var: tape.leaf(q.log_var.clone()),
    };
    let kl = kl_nodes(&mut tape, &nodes, 1.0)?;
    Ok(tape.value(kl).clone())
}

/// Per-row `log P(x | z)` under the decoder family (Gaussian with the
/// constant dropped).
pub fn recon_log_likelihood(model: &VaeModel, x: &Tensor, z: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let zid = tape.leaf(z.clone());
    let (out, _) = model.decoder.forward_on(&mut tape, zid)?;
    let recon = recon_nodes(&mut tape, model.family, out, x)?;
    Ok(tape.value(recon).clone())
}

/// Objective terms for one specific noise draw; pure evaluation, no update.
pub fn elbo_with_eps(model: &VaeModel, x: &Tensor, eps: &Tensor) -> Result<ElboTerms> {
    let mut tape = Tape::new();
    let obj = build_objective(
        &mut tape,
        &model.encoder,
        &model.decoder,
        model.latent_dim,
        model.family,
        model.prior_scale,
        x,
        None,
        x,
        eps,
    )?;
    Ok(obj.terms(&tape))
}

/// Terms plus the gradient of the training loss (−total) with respect to
/// every parameter, in canonical encoder-then-decoder order. `None` where
/// no gradient flowed.
pub fn elbo_gradients(
    model: &VaeModel,
    x: &Tensor,
    eps: &Tensor,
) -> Result<(ElboTerms, Vec<Option<Tensor>>)> {
    let mut tape = Tape::new();
    let obj = build_objective(
        &mut tape,
        &model.encoder,
        &model.decoder,
        model.latent_dim,
        model.family,
        model.prior_scale,
        x,
        None,
        x,
        eps,
    )?;
    let terms = obj.terms(&tape);
    let mut grads = tape.backward(obj.neg_total)?;
    let out = obj
        .enc_param_ids
        .iter()
        .chain(&obj.dec_param_ids)
        .map(|&id| grads.take(id))
        .collect();
    Ok((terms, out))
}

/// One gradient step on `mean_batch [recon − kl]` with a single noise draw
/// per datapoint. Returns the objective terms at the pre-update parameters.
pub fn train_step<R: Rng>(
    model: &mut VaeModel,
    batch: &Tensor,
    opt: &mut AdamState,
    rng: &mut R,
) -> Result<ElboTerms> {
    if batch.rank() != 2 || batch.shape()[0] == 0 {
        return Err(Error::InvalidArgument(format!(
            "train_step needs a non-empty [batch × D] tensor, got {:?}",
            batch.shape()
        )));
    }
    let eps = standard_normal(rng, vec![batch.shape()[0], model.latent_dim]);
    let mut tape = Tape::new();
    let obj = build_objective(
        &mut tape,
        &model.encoder,
        &model.decoder,
        model.latent_dim,
        model.family,
        model.prior_scale,
        batch,
        None,
        batch,
        &eps,
    )?;
    let terms = obj.terms(&tape);
    if !terms.total.is_finite() {
        return Err(Error::NonFinite {
            context: "training loss".into(),
            diagnostic: format!(
                "recon {} kl {} on batch {:?}",
                terms.recon,
                terms.kl,
                batch.shape()
            ),
        });
    }
    let mut grads = tape.backward(obj.neg_total)?;

    let param_ids: Vec<NodeId> = obj
        .enc_param_ids
        .iter()
        .chain(&obj.dec_param_ids)
        .copied()
        .collect();
    let grad_tensors: Vec<Option<Tensor>> = param_ids.iter().map(|&id| grads.take(id)).collect();
    let grad_refs: Vec<Option<&Tensor>> = grad_tensors.iter().map(|g| g.as_ref()).collect();
    let mut params: Vec<&mut Tensor> = model
        .encoder
        .params_mut()
        .into_iter()
        .chain(model.decoder.params_mut())
        .collect();
    adam_step(opt, &mut params, &grad_refs)?;
    Ok(terms)
}

/// Decode `n` fresh prior draws. The encoder is never touched: samples come
/// from `z ~ N(0, prior_scale² I)` through the decoder alone, returning the
/// Gaussian mean or Bernoulli probabilities.
pub fn sample<R: Rng>(model: &VaeModel, n: usize, rng: &mut R) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample needs n >= 1".into()));
    }
    let mut z = standard_normal(rng, vec![n, model.latent_dim]);
    if model.prior_scale != 1.0 {
        let s = model.prior_scale;
        z.data_mut().iter_mut().for_each(|v| *v *= s);
    }
    decode_mean(model, &z)
}

/// Decoder output mapped to observation space (probabilities for Bernoulli,
/// mean for Gaussian).
pub fn decode_mean(model: &VaeModel, z: &Tensor) -> Result<Tensor> {
    let out = model.decoder.infer(z)?;
    Ok(match model.family {
        DecoderFamily::Bernoulli => out.map(crate::tensor::sigmoid),
        DecoderFamily::Gaussian { .. } => out,
    })
}

/// Multi-sample ELBO estimate for one row, in nats.
#[derive(Clone, Copy, Debug)]
pub struct ElboEstimate {
    pub mean: f64,
    /// Standard error of the mean over the noise draws. A single draw
    /// carries no variance information, so `n_samples = 1` reports
    /// infinity.
    pub se: f64,
    pub n_samples: usize,
}

/// The normalizing constant the Gaussian reconstruction term drops during
/// training: `−D/2 · ln(2πσ²)`. Zero for the Bernoulli family.
pub fn log_likelihood_constant(family: DecoderFamily, dim: usize) -> f64 {
    match family {
        DecoderFamily::Bernoulli => 0.0,
        DecoderFamily::Gaussian { sigma } => {
            -(dim as f64) * 0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
        }
    }
}

/// Monte-Carlo estimate of the per-example lower bound
/// `E_ε [log P(x|z) − kl]`, one [`ElboEstimate`] per row of `x`.
///
/// Unlike training, evaluation keeps the Gaussian normalizing constant, so
/// the estimate is a genuine lower bound on `log P(x)` and is directly
/// comparable with [`naive_likelihood_estimate`]. For the Bernoulli family
/// the constant is zero and `n_samples = 1` reproduces the training-step
/// forward value exactly.
pub fn elbo_estimate<R: Rng>(
    model: &VaeModel,
    x: &Tensor,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<ElboEstimate>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument(
            "elbo_estimate needs n_samples >= 1".into(),
        ));
    }
    let rows = x.shape()[0];
    let constant = log_likelihood_constant(model.family, x.shape()[1]);
    let mut per_row: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples); rows];
    for _ in 0..n_samples {
        let eps = standard_normal(rng, vec![rows, model.latent_dim]);
        let mut tape = Tape::new();
        let obj = build_objective(
            &mut tape,
            &model.encoder,
            &model.decoder,
            model.latent_dim,
            model.family,
            model.prior_scale,
            x,
            None,
            x,
            &eps,
        )?;
        let recon = tape.value(obj.recon_rows);
        let kl = tape.value(obj.kl_rows);
        for (i, row) in per_row.iter_mut().enumerate() {
            row.push(constant + (recon.data()[i] - kl.data()[i]));
        }
    }
    Ok(per_row
        .into_iter()
        .map(|samples| summarize(&samples))
        .collect())
}

fn summarize(samples: &[f64]) -> ElboEstimate {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let se = if n < 2 {
        f64::INFINITY
    } else {
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    ElboEstimate {
        mean,
        se,
        n_samples: n,
    }
}

/// Log-scale estimate of `P(X)` by direct prior sampling.
#[derive(Clone, Copy, Debug)]
pub struct LogLikelihoodEstimate {
    pub log_p: f64,
    /// Delta-method standard error of `log_p`; infinity for `n = 1`.
    pub se: f64,
    pub n_samples: usize,
}

/// Estimate `log P(x) ≈ log (1/n) Σ_i P(x|z_i)` with `z_i` drawn from the
/// prior, computed as a log-mean-exp of full Gaussian log-densities (the
/// normalizing constant is retained here, unlike training).
pub fn naive_likelihood_estimate<R: Rng>(
    model: &VaeModel,
    x: &Tensor,
    n: usize,
    rng: &mut R,
) -> Result<LogLikelihoodEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "naive_likelihood_estimate needs n >= 1".into(),
        ));
    }
    let sigma = match model.family {
        DecoderFamily::Gaussian { sigma } => sigma,
        DecoderFamily::Bernoulli => {
            return Err(Error::InvalidArgument(
                "naive_likelihood_estimate needs a gaussian decoder (full densities)".into(),
            ))
        }
    };
    let row = flatten_row(x)?;
    let dim = row.len();
    let log_norm = -(dim as f64) * 0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();

    let mut log_weights = Vec::with_capacity(n);
    let chunk = 4096;
    let mut remaining = n;
    while remaining > 0 {
        let take = remaining.min(chunk);
        let mut z = standard_normal(rng, vec![take, model.latent_dim]);
        if model.prior_scale != 1.0 {
            let s = model.prior_scale;
            z.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        let fz = model.decoder.infer(&z)?;
        for i in 0..take {
            let mut ssq = 0.0;
            for (a, b) in fz.row(i).iter().zip(&row) {
                let d = a - b;
                ssq += d * d;
            }
            log_weights.push(log_norm - ssq / (2.0 * sigma * sigma));
        }
        remaining -= take;
    }

    // log-mean-exp with a delta-method standard error.
    let m = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_weights.iter().map(|lw| (lw - m).exp()).collect();
    let mean_a = scaled.iter().sum::<f64>() / n as f64;
    let log_p = m + mean_a.ln();
    let se = if n < 2 {
        f64::INFINITY
    } else {
        let var_a = scaled
            .iter()
            .map(|a| (a - mean_a) * (a - mean_a))
            .sum::<f64>()
            / (n - 1) as f64;
        (var_a / n as f64).sqrt() / mean_a
    };
    Ok(LogLikelihoodEstimate {
        log_p,
        se,
        n_samples: n,
    })
}

fn flatten_row(x: &Tensor) -> Result<Vec<f64>> {
    match x.rank() {
        1 => Ok(x.data().to_vec()),
        2 if x.shape()[0] == 1 => Ok(x.data().to_vec()),
        _ => Err(Error::InvalidArgument(format!(
            "expected a single example ([D] or [1×D]), got {:?}",
            x.shape()
        ))),
    }
}

/// Rescale the latent space by `λ` without changing the model: the first
/// decoder weights shrink by `1/λ`, the encoder mean head grows by `λ`, the
/// log-variance head shifts by `2 ln λ`, and the prior becomes
/// `N(0, λ² I)`. Objective values and decoded samples are preserved for a
/// shared underlying noise stream.
pub fn lambda_absorb_transform(model: &VaeModel, lambda: f64) -> Result<VaeModel> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda_absorb_transform needs lambda > 0, got {lambda}"
        )));
    }
    let last = model.encoder.layers().last().expect("encoder has layers");
    if last.activation != Activation::Identity {
        return Err(Error::InvalidArgument(
            "lambda_absorb_transform needs an affine encoder output layer".into(),
        ));
    }
    let d = model.latent_dim;
    let mut out = model.clone();

    {
        let layers = out.encoder.layers_mut();
        let last = layers.last_mut().expect("encoder has layers");
        let (rows, cols) = (last.weight.shape()[0], last.weight.shape()[1]);
        debug_assert_eq!(cols, 2 * d);
        let w = last.weight.data_mut();
        for r in 0..rows {
            for c in 0..d {
                w[r * cols + c] *= lambda;
            }
        }
        let b = last.bias.data_mut();
        for v in b[..d].iter_mut() {
            *v *= lambda;
        }
        let shift = 2.0 * lambda.ln();
        for v in b[d..2 * d].iter_mut() {
            *v += shift;
        }
    }
    {
        let layers = out.decoder.layers_mut();
        let first = layers.first_mut().expect("decoder has layers");
        let w = first.weight.data_mut();
        w.iter_mut().for_each(|v| *v /= lambda);
    }
    out.prior_scale = model.prior_scale * lambda;
    Ok(out)
}
