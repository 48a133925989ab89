//! The five training losses and their fixed-weight and adaptive
//! compositions.
//!
//! Conventions shared by every term: scores and probabilities come from
//! [`crate::ops::sigmoid_clamped`], cross-entropy uses the full two-term
//! binary form, and reduction is the mean over contributing samples.
//! Gradients are expressed with respect to logits, where the clamped
//! sigmoid makes them exactly `(s - y) / n` inside the clamp and zero
//! outside it.

use crate::error::{Error, Result};
use crate::ops::{self, Scalar};
use crate::xbm::XBMEntry;

pub const DEFAULT_MARGIN: f64 = 0.3;

/// Values of the five loss terms for one step, ordered
/// (cls, pseudo, modality, bridge, triplet).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle<S> {
    pub cls: S,
    pub pseudo: S,
    pub modality: S,
    pub bridge: S,
    pub triplet: S,
    /// Depth samples that passed the pseudo-label threshold.
    pub pseudo_count: usize,
}

impl<S: Scalar> LossBundle<S> {
    pub fn zero() -> Self {
        LossBundle {
            cls: S::zero(),
            pseudo: S::zero(),
            modality: S::zero(),
            bridge: S::zero(),
            triplet: S::zero(),
            pseudo_count: 0,
        }
    }

    pub fn values(&self) -> [S; 5] {
        [self.cls, self.pseudo, self.modality, self.bridge, self.triplet]
    }

    /// Fails with the offending term's name the moment anything goes
    /// non-finite.
    pub fn check_finite(&self, step: u64) -> Result<()> {
        for (term, v) in ["cls", "pseudo", "modality", "bridge", "triplet"].iter().zip(self.values()) {
            if !v.is_finite() {
                return Err(Error::NonFinite { term, step });
            }
        }
        Ok(())
    }
}

/// Composition weights: fixed lambdas or the adaptive softmax vector P.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossWeights<S> {
    Fixed([S; 5]),
    Adaptive([S; 5]),
}

impl<S: Scalar> LossWeights<S> {
    pub fn uniform_fixed() -> Self {
        LossWeights::Fixed([S::one(); 5])
    }

    pub fn values(&self) -> [S; 5] {
        match self {
            LossWeights::Fixed(v) | LossWeights::Adaptive(v) => *v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossWeights::Fixed(l) => {
                if l.iter().any(|v| *v < S::zero() || !v.is_finite()) {
                    return Err(Error::Config("fixed loss weights must be finite and >= 0".into()));
                }
            }
            LossWeights::Adaptive(p) => {
                let sum: S = p.iter().copied().sum();
                if p.iter().any(|v| *v < S::zero()) || (sum - S::one()).abs() > S::from_f64(1e-4) {
                    return Err(Error::Config("adaptive weights must lie on the simplex".into()));
                }
            }
        }
        Ok(())
    }
}

fn check_pair<S, T>(a: &[S], b: &[T], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{what}: {} scores vs {} labels", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Data(format!("{what}: empty batch")));
    }
    Ok(())
}

fn bce_term<S: Scalar>(score: S, label: u8) -> S {
    if label == 1 {
        -score.ln()
    } else {
        -(S::one() - score).ln()
    }
}

// ── Classification ──────────────────────────────────────────────────────────

/// Mean binary cross-entropy of labeled scores.
pub fn cls_loss<S: Scalar>(scores: &[S], labels: &[u8]) -> Result<S> {
    check_pair(scores, labels, "cls_loss")?;
    let n = S::from_usize(scores.len());
    Ok(scores.iter().zip(labels).map(|(&s, &y)| bce_term(s, y)).sum::<S>() / n)
}

/// Loss plus per-sample dL/d logit.
pub fn cls_loss_grad<S: Scalar>(scores: &[S], dscore_dlogit: &[S], labels: &[u8]) -> Result<(S, Vec<S>)> {
    let loss = cls_loss(scores, labels)?;
    check_pair(scores, dscore_dlogit, "cls_loss_grad")?;
    let inv = S::one() / S::from_usize(scores.len());
    let g = scores
        .iter()
        .zip(dscore_dlogit)
        .zip(labels)
        .map(|((&s, &d), &y)| {
            if d == S::zero() {
                S::zero()
            } else {
                (s - S::from_usize(y as usize)) * inv
            }
        })
        .collect();
    Ok((loss, g))
}

// ── Pseudo-labeling ─────────────────────────────────────────────────────────

fn check_tau<S: Scalar>(tau: S) -> Result<()> {
    if !(tau > S::from_f64(0.5)) || tau > S::one() {
        return Err(Error::Config(format!("tau must lie in (0.5, 1], got {tau}")));
    }
    Ok(())
}

/// Threshold rule: label 1 where score >= tau, label 0 where
/// score <= 1 - tau; the mask is false (and the label meaningless) in
/// between.
pub fn pseudo_labels<S: Scalar>(scores: &[S], tau: S) -> Result<(Vec<bool>, Vec<u8>)> {
    check_tau(tau)?;
    let lo = S::one() - tau;
    let mut mask = Vec::with_capacity(scores.len());
    let mut labels = Vec::with_capacity(scores.len());
    for &s in scores {
        if s >= tau {
            mask.push(true);
            labels.push(1);
        } else if s <= lo {
            mask.push(true);
            labels.push(0);
        } else {
            mask.push(false);
            labels.push(0);
        }
    }
    Ok((mask, labels))
}

/// Cross-entropy against pseudo labels over the masked subset; zero when
/// nothing passes. The labels are recomputed from the current scores and
/// act as constants.
pub fn pseudo_loss<S: Scalar>(scores: &[S], tau: S) -> Result<(S, usize)> {
    let (loss, _, _, _, count) = pseudo_loss_grad(scores, &vec![S::zero(); scores.len()], tau)?;
    Ok((loss, count))
}

/// Loss, per-sample dL/d logit (zero off-mask), mask, labels, and the
/// passing count.
#[allow(clippy::type_complexity)]
pub fn pseudo_loss_grad<S: Scalar>(
    scores: &[S],
    dscore_dlogit: &[S],
    tau: S,
) -> Result<(S, Vec<S>, Vec<bool>, Vec<u8>, usize)> {
    let (mask, labels) = pseudo_labels(scores, tau)?;
    if scores.len() != dscore_dlogit.len() {
        return Err(Error::Shape("pseudo_loss_grad: score/derivative length mismatch".into()));
    }
    let count = mask.iter().filter(|m| **m).count();
    let mut grad = vec![S::zero(); scores.len()];
    if count == 0 {
        return Ok((S::zero(), grad, mask, labels, 0));
    }
    let inv = S::one() / S::from_usize(count);
    let mut loss = S::zero();
    for i in 0..scores.len() {
        if !mask[i] {
            continue;
        }
        loss += bce_term(scores[i], labels[i]) * inv;
        if dscore_dlogit[i] != S::zero() {
            grad[i] = (scores[i] - S::from_usize(labels[i] as usize)) * inv;
        }
    }
    Ok((loss, grad, mask, labels, count))
}

// ── Modality discrimination ─────────────────────────────────────────────────

/// Mean cross-entropy of discriminator probabilities against modality
/// labels (1 = RGB, 0 = depth). The GRL upstream makes the backbone ascend
/// this loss while the discriminator descends it.
pub fn modality_loss<S: Scalar>(probs: &[S], modality_labels: &[u8]) -> Result<S> {
    check_pair(probs, modality_labels, "modality_loss")?;
    let n = S::from_usize(probs.len());
    Ok(probs.iter().zip(modality_labels).map(|(&p, &y)| bce_term(p, y)).sum::<S>() / n)
}

/// Loss plus per-sample dL/d logit at the discriminator output.
pub fn modality_loss_grad<S: Scalar>(
    probs: &[S],
    dprob_dlogit: &[S],
    modality_labels: &[u8],
) -> Result<(S, Vec<S>)> {
    let loss = modality_loss(probs, modality_labels)?;
    check_pair(probs, dprob_dlogit, "modality_loss_grad")?;
    let inv = S::one() / S::from_usize(probs.len());
    let g = probs
        .iter()
        .zip(dprob_dlogit)
        .zip(modality_labels)
        .map(|((&p, &d), &y)| {
            if d == S::zero() {
                S::zero()
            } else {
                (p - S::from_usize(y as usize)) * inv
            }
        })
        .collect();
    Ok((loss, g))
}

// ── XBM triplet ─────────────────────────────────────────────────────────────

#[derive(Clone, Copy)]
enum CandRef {
    Mem(usize),
    Batch(usize),
}

/// Batch-hard triplet loss over memory and live batch. Every labeled batch
/// embedding is an anchor; candidates are all memory entries plus the other
/// batch embeddings. Hardest positive = maximum distance at equal label;
/// hardest negative = minimum distance at different label; ties keep the
/// earliest candidate (memory first, then batch order). Mean over anchors
/// having both.
pub fn xbm_triplet_loss<S: Scalar>(batch: &[(&[S], u8)], memory: &[XBMEntry<S>], margin: S) -> Result<S> {
    Ok(xbm_triplet_loss_grad(batch, memory, margin)?.0)
}

/// Loss plus dL/d embedding for each batch element. Memory embeddings are
/// constants and receive no gradient.
pub fn xbm_triplet_loss_grad<S: Scalar>(
    batch: &[(&[S], u8)],
    memory: &[XBMEntry<S>],
    margin: S,
) -> Result<(S, Vec<Vec<S>>)> {
    if !(margin > S::zero()) || !margin.is_finite() {
        return Err(Error::Config(format!("triplet margin must be > 0, got {margin}")));
    }
    let dim = batch.first().map(|(e, _)| e.len());
    for (e, _) in batch {
        if Some(e.len()) != dim {
            return Err(Error::Shape("triplet batch embeddings must share length".into()));
        }
    }
    for m in memory {
        if Some(m.embedding.len()) != dim && dim.is_some() {
            return Err(Error::Shape("memory embedding length differs from batch".into()));
        }
    }
    let mut grads: Vec<Vec<S>> = batch.iter().map(|(e, _)| vec![S::zero(); e.len()]).collect();

    struct Valid<S> {
        anchor: usize,
        hinge: S,
        pos: (CandRef, S),
        neg: (CandRef, S),
    }
    let mut valid: Vec<Valid<S>> = Vec::new();

    for (i, (anchor, label)) in batch.iter().enumerate() {
        let mut pos: Option<(CandRef, S)> = None;
        let mut neg: Option<(CandRef, S)> = None;
        let mut consider = |cref: CandRef, emb: &[S], cand_label: u8| {
            let d = ops::dist_smoothed(anchor, emb);
            if cand_label == *label {
                if pos.as_ref().map_or(true, |(_, best)| d > *best) {
                    pos = Some((cref, d));
                }
            } else if neg.as_ref().map_or(true, |(_, best)| d < *best) {
                neg = Some((cref, d));
            }
        };
        for (mi, m) in memory.iter().enumerate() {
            consider(CandRef::Mem(mi), &m.embedding, m.label);
        }
        for (bi, (emb, lab)) in batch.iter().enumerate() {
            if bi != i {
                consider(CandRef::Batch(bi), emb, *lab);
            }
        }
        if let (Some(p), Some(n)) = (pos, neg) {
            let hinge = (p.1 - n.1 + margin).max(S::zero());
            valid.push(Valid { anchor: i, hinge, pos: p, neg: n });
        }
    }

    if valid.is_empty() {
        return Ok((S::zero(), grads));
    }
    let inv = S::one() / S::from_usize(valid.len());
    let mut loss = S::zero();
    for v in &valid {
        loss += v.hinge * inv;
        if v.hinge <= S::zero() {
            continue;
        }
        let a = batch[v.anchor].0;
        let (pref, d_ap) = &v.pos;
        let (nref, d_an) = &v.neg;
        let p_emb: &[S] = match pref {
            CandRef::Mem(mi) => &memory[*mi].embedding,
            CandRef::Batch(bi) => batch[*bi].0,
        };
        let n_emb: &[S] = match nref {
            CandRef::Mem(mi) => &memory[*mi].embedding,
            CandRef::Batch(bi) => batch[*bi].0,
        };
        for k in 0..a.len() {
            grads[v.anchor][k] += inv * ((a[k] - p_emb[k]) / *d_ap - (a[k] - n_emb[k]) / *d_an);
        }
        if let CandRef::Batch(bi) = pref {
            for k in 0..a.len() {
                grads[*bi][k] += inv * (p_emb[k] - a[k]) / *d_ap;
            }
        }
        if let CandRef::Batch(bi) = nref {
            for k in 0..a.len() {
                grads[*bi][k] += inv * (a[k] - n_emb[k]) / *d_an;
            }
        }
    }
    Ok((loss, grads))
}

// ── Composition ─────────────────────────────────────────────────────────────

/// Weighted sum of the five terms in the order
/// (cls, pseudo, modality, bridge, triplet).
pub fn total_loss<S: Scalar>(bundle: &LossBundle<S>, weights: &LossWeights<S>) -> Result<S> {
    weights.validate()?;
    let w = weights.values();
    Ok(bundle.values().iter().zip(&w).map(|(&l, &p)| l * p).sum())
}
