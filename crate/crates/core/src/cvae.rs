//! Conditional VAE for one-to-many prediction, plus the deterministic
//! regressor baseline it is compared against.
//!
//! Conditioning enters by concatenation at both ends: the encoder sees
//! `concat(Y, X)`, the decoder sees `concat(z, X)`, and the latent prior
//! stays `N(0, I)`. With zero-width conditioning the objective reduces
//! exactly to the unconditional one.

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::nn::{adam_step, init_mlp, Activation, AdamConfig, AdamState, Mlp};
use crate::tensor::Tensor;
use crate::vae::{build_objective, standard_normal, DecoderFamily, ElboTerms};

#[derive(Clone, Debug)]
pub struct CvaeModel {
    /// Maps `[batch × (|Y|+|X|)]` to `[batch × 2d]`.
    pub encoder: Mlp,
    /// Maps `[batch × (d+|X|)]` to `[batch × |Y|]`.
    pub decoder: Mlp,
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub target_dim: usize,
    pub family: DecoderFamily,
}

#[derive(Clone, Debug)]
pub struct CvaeConfig {
    pub cond_dim: usize,
    pub target_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub family: DecoderFamily,
    pub seed: u64,
}

impl CvaeModel {
    pub fn init(cfg: &CvaeConfig) -> Result<Self> {
        if cfg.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent_dim must be positive".into()));
        }
        let mut enc_dims = vec![cfg.target_dim + cfg.cond_dim];
        enc_dims.extend(&cfg.hidden);
        enc_dims.push(2 * cfg.latent_dim);
        let mut dec_dims = vec![cfg.latent_dim + cfg.cond_dim];
        dec_dims.extend(cfg.hidden.iter().rev());
        dec_dims.push(cfg.target_dim);
        let acts = |n: usize| {
            let mut a = vec![Activation::Relu; n - 1];
            a.push(Activation::Identity);
            a
        };
        Ok(CvaeModel {
            encoder: init_mlp(&enc_dims, &acts(enc_dims.len() - 1), cfg.seed)?,
            decoder: init_mlp(
                &dec_dims,
                &acts(dec_dims.len() - 1),
                cfg.seed ^ 0x9e37_79b9_7f4a_7c15,
            )?,
            latent_dim: cfg.latent_dim,
            cond_dim: cfg.cond_dim,
            target_dim: cfg.target_dim,
            family: cfg.family,
        })
    }

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

fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "concat",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (m, na, nb) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut data = Vec::with_capacity(m * (na + nb));
    for i in 0..m {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor::new(vec![m, na + nb], data)
}

/// One gradient step on the conditional objective
/// `mean_batch [log P(Y|z,X) − D[Q(z|Y,X) ‖ N(0,I)]]`.
pub fn cvae_train_step<R: Rng>(
    model: &mut CvaeModel,
    x_cond: &Tensor,
    y_target: &Tensor,
    opt: &mut AdamState,
    rng: &mut R,
) -> Result<ElboTerms> {
    if x_cond.rank() != 2 || y_target.rank() != 2 || x_cond.shape()[0] != y_target.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "cvae_train_step",
            left: x_cond.shape().to_vec(),
            right: y_target.shape().to_vec(),
        });
    }
    if y_target.shape()[0] == 0 {
        return Err(Error::InvalidArgument(
            "cvae_train_step needs a non-empty batch".into(),
        ));
    }
    let enc_input = concat_rows(y_target, x_cond)?;
    let eps = standard_normal(rng, vec![y_target.shape()[0], model.latent_dim]);
    let mut tape = Tape::new();
    let obj = build_objective(
        &mut tape,
        &model.encoder,
        &model.decoder,
        model.latent_dim,
        model.family,
        1.0,
        &enc_input,
        Some(x_cond),
        y_target,
        &eps,
    )?;
    let terms = obj.terms(&tape);
    if !terms.total.is_finite() {
        return Err(Error::NonFinite {
            context: "cvae training loss".into(),
            diagnostic: format!(
                "recon {} kl {} on batch {:?}",
                terms.recon,
                terms.kl,
                y_target.shape()
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

/// Conditional objective terms for one specific noise draw.
pub fn cvae_elbo_with_eps(
    model: &CvaeModel,
    x_cond: &Tensor,
    y_target: &Tensor,
    eps: &Tensor,
) -> Result<ElboTerms> {
    let enc_input = concat_rows(y_target, x_cond)?;
    let mut tape = Tape::new();
    let obj = build_objective(
        &mut tape,
        &model.encoder,
        &model.decoder,
        model.latent_dim,
        model.family,
        1.0,
        &enc_input,
        Some(x_cond),
        y_target,
        eps,
    )?;
    Ok(obj.terms(&tape))
}

/// Terms plus the gradient of the training loss (−total) per parameter,
/// encoder first then decoder.
pub fn cvae_elbo_gradients(
    model: &CvaeModel,
    x_cond: &Tensor,
    y_target: &Tensor,
    eps: &Tensor,
) -> Result<(ElboTerms, Vec<Option<Tensor>>)> {
    let enc_input = concat_rows(y_target, x_cond)?;
    let mut tape = Tape::new();
    let obj = build_objective(
        &mut tape,
        &model.encoder,
        &model.decoder,
        model.latent_dim,
        model.family,
        1.0,
        &enc_input,
        Some(x_cond),
        y_target,
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

/// Draw `k` candidates per conditioning row by sampling `z ~ N(0,I)` and
/// decoding `concat(z, x)`; the encoder plays no part. Returns one
/// `[k × |Y|]` tensor per row of `x_cond`.
pub fn cvae_sample<R: Rng>(
    model: &CvaeModel,
    x_cond: &Tensor,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Tensor>> {
    if k == 0 {
        return Err(Error::InvalidArgument("cvae_sample needs k >= 1".into()));
    }
    if x_cond.rank() != 2 || x_cond.shape()[1] != model.cond_dim {
        return Err(Error::ShapeMismatch {
            op: "cvae_sample",
            left: x_cond.shape().to_vec(),
            right: vec![model.cond_dim],
        });
    }
    let mut out = Vec::with_capacity(x_cond.shape()[0]);
    for i in 0..x_cond.shape()[0] {
        let z = standard_normal(rng, vec![k, model.latent_dim]);
        let cond_rows = Tensor::new(vec![k, model.cond_dim], x_cond.row(i).repeat(k))?;
        let dec_in = concat_rows(&z, &cond_rows)?;
        let raw = model.decoder.infer(&dec_in)?;
        out.push(match model.family {
            DecoderFamily::Bernoulli => raw.map(crate::tensor::sigmoid),
            DecoderFamily::Gaussian { .. } => raw,
        });
    }
    Ok(out)
}

// ── Regressor baseline ───────────────────────────────────────────────

/// Deterministic `X → Y` network, identical capacity to the CVAE decoder
/// path but with no latent machinery.
#[derive(Clone, Debug)]
pub struct RegressorModel {
    pub net: Mlp,
}

impl RegressorModel {
    pub fn init(cond_dim: usize, target_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut dims = vec![cond_dim];
        dims.extend(hidden);
        dims.push(target_dim);
        let mut acts = vec![Activation::Relu; dims.len() - 2];
        acts.push(Activation::Identity);
        Ok(RegressorModel {
            net: init_mlp(&dims, &acts, seed)?,
        })
    }

    pub fn adam_state(&self, config: AdamConfig) -> AdamState {
        AdamState::new(&self.net.params(), config)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.net.infer(x)
    }
}

/// One L2 regression step: loss is the batch mean of `‖y − net(x)‖²`.
pub fn regressor_train_step(
    model: &mut RegressorModel,
    x_cond: &Tensor,
    y_target: &Tensor,
    opt: &mut AdamState,
) -> Result<f64> {
    if x_cond.shape()[0] != y_target.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "regressor_train_step",
            left: x_cond.shape().to_vec(),
            right: y_target.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let xid = tape.leaf(x_cond.clone());
    let (out, param_ids) = model.net.forward_on(&mut tape, xid)?;
    let t = tape.leaf(y_target.clone());
    let diff = tape.sub(t, out)?;
    let sq = tape.square(diff)?;
    let per_row = tape.sum_axis(sq, 1)?;
    let loss = tape.mean(per_row)?;
    let loss_val = tape.value(loss).item();
    if !loss_val.is_finite() {
        return Err(Error::NonFinite {
            context: "regressor loss".into(),
            diagnostic: format!("batch {:?}", y_target.shape()),
        });
    }
    let mut grads = tape.backward(loss)?;
    let grad_tensors: Vec<Option<Tensor>> = param_ids.iter().map(|&id| grads.take(id)).collect();
    let grad_refs: Vec<Option<&Tensor>> = grad_tensors.iter().map(|g| g.as_ref()).collect();
    let mut params = model.net.params_mut();
    adam_step(opt, &mut params, &grad_refs)?;
    Ok(loss_val)
}

/// Minimum squared error over a candidate set: `min_c ‖c − truth‖²`.
///
/// A proxy metric: it quantifies whether some sampled completion lands
/// near the ground truth, standing in for a perceptual comparison of
/// completion sheets.
pub fn best_of_k_eval(candidates: &Tensor, truth: &Tensor) -> Result<f64> {
    if candidates.rank() != 2 || candidates.shape()[0] == 0 {
        return Err(Error::InvalidArgument(
            "best_of_k_eval needs a non-empty [k × |Y|] candidate set".into(),
        ));
    }
    if candidates.shape()[1] != truth.numel() {
        return Err(Error::ShapeMismatch {
            op: "best_of_k_eval",
            left: candidates.shape().to_vec(),
            right: truth.shape().to_vec(),
        });
    }
    let mut best = f64::INFINITY;
    for i in 0..candidates.shape()[0] {
        let mut ssq = 0.0;
        for (c, t) in candidates.row(i).iter().zip(truth.data()) {
            let d = c - t;
            ssq += d * d;
        }
        best = best.min(ssq);
    }
    Ok(best)
}
