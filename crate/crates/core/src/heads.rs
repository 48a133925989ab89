//! Output heads on pooled embeddings: the sigmoid label classifier, the
//! modality discriminator behind a gradient reversal layer, and the
//! adaptive loss-weight head.
//!
//! All heads consume embeddings only; none sees raw frames. The GRL is the
//! identity in value and multiplies the incoming derivative by -lambda on
//! the way back toward the backbone; discriminator parameters themselves
//! receive unreversed gradients.

use crate::error::{Error, Result};
use crate::model::{LinearParams, ModelParams, N_LOSSES};
use crate::ops::{self, Scalar};

fn check_dim<S>(emb: &[S], want: usize, head: &str) -> Result<()> {
    if emb.len() != want {
        return Err(Error::Shape(format!("{head} expects embedding length {want}, got {}", emb.len())));
    }
    Ok(())
}

fn check_lambda<S: Scalar>(lambda: S) -> Result<()> {
    if !(lambda > S::zero()) {
        return Err(Error::Config(format!("grl lambda must be > 0, got {lambda}")));
    }
    Ok(())
}

// ── Classifier ──────────────────────────────────────────────────────────────

/// Classifier output with the cached pieces the backward pass needs.
#[derive(Debug, Clone, Copy)]
pub struct ClassifyOut<S> {
    /// sigma(clamped logit), strictly inside (0,1).
    pub score: S,
    pub logit: S,
    /// d score / d logit; zero where the clamp saturates.
    pub dscore_dlogit: S,
}

/// Sigmoid fall score of one embedding.
pub fn classify<S: Scalar>(cls: &LinearParams<S>, emb: &[S]) -> Result<ClassifyOut<S>> {
    check_dim(emb, cls.inp, "classifier")?;
    let logit = cls.forward(emb)[0];
    let (score, dscore_dlogit) = ops::sigmoid_clamped(logit);
    Ok(ClassifyOut { score, logit, dscore_dlogit })
}

/// Accumulates classifier gradients given dL/d logit; optionally adds the
/// embedding gradient.
pub fn classify_backward<S: Scalar>(
    cls: &LinearParams<S>,
    emb: &[S],
    d_logit: S,
    grad: &mut LinearParams<S>,
    d_emb: Option<&mut [S]>,
) {
    cls.backward_acc(emb, &[d_logit], grad, d_emb);
}

// ── Gradient reversal ───────────────────────────────────────────────────────

/// Identity in value.
pub fn grl_apply<S: Scalar>(x: &[S], lambda: S) -> Result<Vec<S>> {
    check_lambda(lambda)?;
    Ok(x.to_vec())
}

/// Multiplies the incoming derivative by -lambda.
pub fn grl_backward<S: Scalar>(d: &[S], lambda: S) -> Result<Vec<S>> {
    check_lambda(lambda)?;
    Ok(d.iter().map(|&v| -lambda * v).collect())
}

// ── Modality discriminator ──────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ModalityOut<S> {
    /// P(modality = RGB), strictly inside (0,1).
    pub prob: S,
    pub logit: S,
    pub dprob_dlogit: S,
    /// Post-ReLU hidden activations.
    pub hidden: Vec<S>,
}

/// Discriminator probability that `emb` came from the RGB stream.
pub fn discriminate_modality<S: Scalar>(
    params: &ModelParams<S>,
    emb: &[S],
    lambda: S,
) -> Result<ModalityOut<S>> {
    check_dim(emb, params.disc1.inp, "modality discriminator")?;
    let x = grl_apply(emb, lambda)?;
    let mut hidden = params.disc1.forward(&x);
    ops::relu_inplace(&mut hidden);
    let logit = params.disc2.forward(&hidden)[0];
    let (prob, dprob_dlogit) = ops::sigmoid_clamped(logit);
    Ok(ModalityOut { prob, logit, dprob_dlogit, hidden })
}

/// Backward through the discriminator given dL/d logit. Parameter gradients
/// are unreversed; the embedding gradient crosses the GRL and is added to
/// `d_emb` multiplied by -lambda.
pub fn modality_backward<S: Scalar>(
    params: &ModelParams<S>,
    emb: &[S],
    out: &ModalityOut<S>,
    d_logit: S,
    lambda: S,
    grads: &mut ModelParams<S>,
    d_emb: &mut [S],
) -> Result<()> {
    check_lambda(lambda)?;
    let mut d_hidden = vec![S::zero(); out.hidden.len()];
    params.disc2.backward_acc(&out.hidden, &[d_logit], &mut grads.disc2, Some(&mut d_hidden));
    ops::relu_backward_inplace(&mut d_hidden, &out.hidden);
    let mut d_x = vec![S::zero(); emb.len()];
    params.disc1.backward_acc(emb, &d_hidden, &mut grads.disc1, Some(&mut d_x));
    let rev = grl_backward(&d_x, lambda)?;
    for (g, &r) in d_emb.iter_mut().zip(&rev) {
        *g += r;
    }
    Ok(())
}

// ── Loss-weight head ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct WeightOut<S> {
    /// Softmax weights on the 5-simplex.
    pub p: Vec<S>,
    pub h1: Vec<S>,
    pub h2: Vec<S>,
    pub logits: Vec<S>,
}

/// Five softmax loss weights from a (detached) embedding.
pub fn loss_weights<S: Scalar>(params: &ModelParams<S>, emb: &[S]) -> Result<WeightOut<S>> {
    check_dim(emb, params.wh1.inp, "weight head")?;
    let mut h1 = params.wh1.forward(emb);
    ops::relu_inplace(&mut h1);
    let mut h2 = params.wh2.forward(&h1);
    ops::relu_inplace(&mut h2);
    let logits = params.wh3.forward(&h2);
    debug_assert_eq!(logits.len(), N_LOSSES);
    let p = ops::softmax(&logits);
    Ok(WeightOut { p, h1, h2, logits })
}

/// Backward through the weight head given dL/dP. The input embedding is
/// detached by contract, so no embedding gradient is produced.
pub fn loss_weights_backward<S: Scalar>(
    params: &ModelParams<S>,
    emb: &[S],
    out: &WeightOut<S>,
    d_p: &[S],
    grads: &mut ModelParams<S>,
) -> Result<()> {
    if d_p.len() != N_LOSSES {
        return Err(Error::Shape(format!("weight-head gradient must have {N_LOSSES} entries, got {}", d_p.len())));
    }
    let d_logits = ops::softmax_backward(&out.p, d_p);
    let mut d_h2 = vec![S::zero(); out.h2.len()];
    params.wh3.backward_acc(&out.h2, &d_logits, &mut grads.wh3, Some(&mut d_h2));
    ops::relu_backward_inplace(&mut d_h2, &out.h2);
    let mut d_h1 = vec![S::zero(); out.h1.len()];
    params.wh2.backward_acc(&out.h1, &d_h2, &mut grads.wh2, Some(&mut d_h1));
    ops::relu_backward_inplace(&mut d_h1, &out.h1);
    params.wh1.backward_acc(emb, &d_h1, &mut grads.wh1, None);
    Ok(())
}
