//! Intermediate domain module: a learned convex mixture of the two
//! modalities' first-stage features, plus the bridge loss that pulls the
//! final maps toward the intermediate stream.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ops::{self, Scalar};
use crate::tensor::Tensor4;

/// Convex mixture coefficients; softmax output, so both are non-negative
/// and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmCoefficients<S> {
    pub a_rgb: S,
    pub a_depth: S,
}

/// Forward activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct IdmCache<S> {
    pub desc_rgb: Vec<S>,
    pub desc_depth: Vec<S>,
    /// Per-channel argmax cell of each input map (max-pool routing).
    pub argmax_rgb: Vec<usize>,
    pub argmax_depth: Vec<usize>,
    /// Summed FC outputs.
    pub fc_sum: Vec<S>,
    /// Post-ReLU MLP hidden layer.
    pub hidden: Vec<S>,
    /// Softmax probabilities (equal to the coefficients).
    pub probs: Vec<S>,
}

/// Channel descriptor: concat(global-avg-pool, global-max-pool), plus the
/// argmax cell per channel for gradient routing.
fn descriptor<S: Scalar>(map: &Tensor4<S>) -> (Vec<S>, Vec<usize>) {
    let avg = map.channel_means();
    let (mx, arg) = map.channel_max();
    let mut d = avg;
    d.extend(mx);
    (d, arg)
}

/// Computes the intermediate feature map `a_rgb * fh_rgb + a_depth * fh_depth`
/// with coefficients from softmax(MLP(FC(desc_rgb) + FC(desc_depth))).
/// One FC is shared between the modalities.
pub fn idm_forward<S: Scalar>(
    params: &ModelParams<S>,
    fh_rgb: &Tensor4<S>,
    fh_depth: &Tensor4<S>,
) -> Result<(Tensor4<S>, IdmCoefficients<S>, IdmCache<S>)> {
    if !fh_rgb.same_shape(fh_depth) {
        return Err(Error::Shape("idm_forward inputs must share shape".into()));
    }
    if fh_rgb.c * 2 != params.idm_fc.inp {
        return Err(Error::Shape(format!(
            "idm_forward expects {} channels, got {}",
            params.idm_fc.inp / 2,
            fh_rgb.c
        )));
    }
    let (desc_rgb, argmax_rgb) = descriptor(fh_rgb);
    let (desc_depth, argmax_depth) = descriptor(fh_depth);
    let u_rgb = params.idm_fc.forward(&desc_rgb);
    let u_depth = params.idm_fc.forward(&desc_depth);
    let fc_sum: Vec<S> = u_rgb.iter().zip(&u_depth).map(|(&a, &b)| a + b).collect();
    let mut hidden = params.idm_mlp1.forward(&fc_sum);
    ops::relu_inplace(&mut hidden);
    let logits = params.idm_mlp2.forward(&hidden);
    let probs = ops::softmax(&logits);
    let coeffs = IdmCoefficients { a_rgb: probs[0], a_depth: probs[1] };

    let mut inter = Tensor4::zeros(fh_rgb.c, fh_rgb.t, fh_rgb.h, fh_rgb.w);
    for ((o, &r), &d) in inter.data.iter_mut().zip(&fh_rgb.data).zip(&fh_depth.data) {
        *o = coeffs.a_rgb * r + coeffs.a_depth * d;
    }
    Ok((inter, coeffs, IdmCache { desc_rgb, desc_depth, argmax_rgb, argmax_depth, fc_sum, hidden, probs }))
}

/// Backward pass: given the gradient at the intermediate map and extra
/// gradients on the coefficients (from the bridge loss), accumulates IDM
/// parameter gradients and returns the gradients at both input maps.
pub fn idm_backward<S: Scalar>(
    params: &ModelParams<S>,
    fh_rgb: &Tensor4<S>,
    fh_depth: &Tensor4<S>,
    cache: &IdmCache<S>,
    d_inter: &Tensor4<S>,
    d_coeffs: (S, S),
    grads: &mut ModelParams<S>,
) -> Result<(Tensor4<S>, Tensor4<S>)> {
    let coeffs = IdmCoefficients { a_rgb: cache.probs[0], a_depth: cache.probs[1] };
    // Mixing: d_fh += a * d_inter; d_a += <d_inter, fh>.
    let mut d_rgb = d_inter.clone();
    d_rgb.scale(coeffs.a_rgb);
    let mut d_depth = d_inter.clone();
    d_depth.scale(coeffs.a_depth);
    let da = [
        ops::dot(&d_inter.data, &fh_rgb.data) + d_coeffs.0,
        ops::dot(&d_inter.data, &fh_depth.data) + d_coeffs.1,
    ];

    // Coefficient head: softmax -> mlp2 -> ReLU -> mlp1 -> shared FC.
    let dlogits = ops::softmax_backward(&cache.probs, &da);
    let mut dhidden = vec![S::zero(); cache.hidden.len()];
    params.idm_mlp2.backward_acc(&cache.hidden, &dlogits, &mut grads.idm_mlp2, Some(&mut dhidden));
    ops::relu_backward_inplace(&mut dhidden, &cache.hidden);
    let mut dsum = vec![S::zero(); cache.fc_sum.len()];
    params.idm_mlp1.backward_acc(&cache.fc_sum, &dhidden, &mut grads.idm_mlp1, Some(&mut dsum));
    // The FC is shared: both descriptor branches accumulate into it.
    let mut ddesc_rgb = vec![S::zero(); cache.desc_rgb.len()];
    let mut ddesc_depth = vec![S::zero(); cache.desc_depth.len()];
    params.idm_fc.backward_acc(&cache.desc_rgb, &dsum, &mut grads.idm_fc, Some(&mut ddesc_rgb));
    params.idm_fc.backward_acc(&cache.desc_depth, &dsum, &mut grads.idm_fc, Some(&mut ddesc_depth));

    // Descriptor: first half avg-pool (broadcast), second half max-pool
    // (route to argmax cell).
    spread_descriptor(&mut d_rgb, &ddesc_rgb, &cache.argmax_rgb);
    spread_descriptor(&mut d_depth, &ddesc_depth, &cache.argmax_depth);
    Ok((d_rgb, d_depth))
}

fn spread_descriptor<S: Scalar>(d_map: &mut Tensor4<S>, ddesc: &[S], argmax: &[usize]) {
    let c = d_map.c;
    let cells = d_map.cell_count();
    let inv = S::one() / S::from_usize(cells);
    for ch in 0..c {
        let davg = ddesc[ch] * inv;
        let slice = &mut d_map.data[ch * cells..(ch + 1) * cells];
        for v in slice.iter_mut() {
            *v += davg;
        }
        slice[argmax[ch]] += ddesc[c + ch];
    }
}

// ── Bridge loss ─────────────────────────────────────────────────────────────

/// One sample's contribution to the bridge loss.
pub struct BridgeSample<'a, S> {
    pub rgb: &'a Tensor4<S>,
    pub depth: &'a Tensor4<S>,
    pub inter: &'a Tensor4<S>,
    pub coeffs: IdmCoefficients<S>,
}

/// Per-sample gradients of the bridge loss.
pub struct BridgeGrads<S> {
    pub d_rgb: Tensor4<S>,
    pub d_depth: Tensor4<S>,
    pub d_inter: Tensor4<S>,
    pub d_a_rgb: S,
    pub d_a_depth: S,
}

/// `(1/n) * sum_i [ a_rgb_i * ||F^R_i - F^inter_i|| + a_depth_i * ||F^D_i - F^inter_i|| ]`
/// with smoothed Euclidean norms over each sample's whole map.
pub fn bridge_loss<S: Scalar>(samples: &[BridgeSample<'_, S>]) -> Result<S> {
    if samples.is_empty() {
        return Err(Error::Data("bridge_loss needs at least one sample".into()));
    }
    let mut total = S::zero();
    for s in samples {
        if !s.rgb.same_shape(s.inter) || !s.depth.same_shape(s.inter) {
            return Err(Error::Shape("bridge_loss maps must share shape".into()));
        }
        total += s.coeffs.a_rgb * ops::dist_smoothed(&s.rgb.data, &s.inter.data)
            + s.coeffs.a_depth * ops::dist_smoothed(&s.depth.data, &s.inter.data);
    }
    Ok(total / S::from_usize(samples.len()))
}

/// Gradients of [`bridge_loss`] with respect to all three maps and both
/// coefficients, scaled by `upstream`.
pub fn bridge_backward<S: Scalar>(samples: &[BridgeSample<'_, S>], upstream: S) -> Result<Vec<BridgeGrads<S>>> {
    if samples.is_empty() {
        return Err(Error::Data("bridge_backward needs at least one sample".into()));
    }
    let scale = upstream / S::from_usize(samples.len());
    samples
        .iter()
        .map(|s| {
            if !s.rgb.same_shape(s.inter) || !s.depth.same_shape(s.inter) {
                return Err(Error::Shape("bridge_backward maps must share shape".into()));
            }
            let dist_r = ops::dist_smoothed(&s.rgb.data, &s.inter.data);
            let dist_d = ops::dist_smoothed(&s.depth.data, &s.inter.data);
            let mut d_rgb = Tensor4::zeros(s.rgb.c, s.rgb.t, s.rgb.h, s.rgb.w);
            let mut d_depth = d_rgb.clone();
            let mut d_inter = d_rgb.clone();
            let kr = scale * s.coeffs.a_rgb / dist_r;
            let kd = scale * s.coeffs.a_depth / dist_d;
            for i in 0..d_rgb.len() {
                let diff_r = s.rgb.data[i] - s.inter.data[i];
                let diff_d = s.depth.data[i] - s.inter.data[i];
                d_rgb.data[i] = kr * diff_r;
                d_depth.data[i] = kd * diff_d;
                d_inter.data[i] = -kr * diff_r - kd * diff_d;
            }
            Ok(BridgeGrads { d_rgb, d_depth, d_inter, d_a_rgb: scale * dist_r, d_a_depth: scale * dist_d })
        })
        .collect()
}
