//! Shared 3D-convolutional feature extractor for both modalities, with the
//! IDM insertion point after stage 1.
//!
//! The reference network ("Tiny3D") is stage 1 = conv(3x3x3, stride
//! (1,2,2)) + ReLU, followed by identical spatially-downsampling stages,
//! then global average pooling and a linear projection to the embedding.
//! All streams traverse the same weights; nothing is modality-specific
//! outside the IDM block and the heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idm::{self, IdmCache, IdmCoefficients};
use crate::model::ModelParams;
use crate::ops::{self, Scalar};
use crate::tensor::Tensor4;

/// Reference backbone configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stage1_channels: usize,
    /// Length d of pooled embeddings.
    pub embedding_dim: usize,
    pub n_stages: usize,
    pub idm_enabled: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { stage1_channels: 16, embedding_dim: 64, n_stages: 3, idm_enabled: true }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::Config("embedding_dim must be >= 2".into()));
        }
        if self.n_stages < 2 {
            return Err(Error::Config("n_stages must be >= 2 (IDM sits between stages 1 and 2)".into()));
        }
        if self.stage1_channels == 0 {
            return Err(Error::Config("stage1_channels must be > 0".into()));
        }
        Ok(())
    }
}

/// Final feature maps and pooled embeddings for one paired batch. The
/// intermediate stream is present only when the IDM is enabled.
#[derive(Debug, Clone)]
pub struct FeatureBundle<S> {
    pub feat_rgb: Tensor4<S>,
    pub feat_depth: Tensor4<S>,
    pub feat_inter: Option<Tensor4<S>>,
    pub emb_rgb: Vec<S>,
    pub emb_depth: Vec<S>,
    pub emb_inter: Option<Vec<S>>,
    pub coeffs: Option<IdmCoefficients<S>>,
}

/// Activations of one stream through stages `start..n_stages`. Entry `j`
/// describes stage `start + j`.
#[derive(Debug, Clone)]
pub struct StreamCache<S> {
    pub start: usize,
    /// Input dims (t, h, w) of each stage.
    pub in_dims: Vec<(usize, usize, usize)>,
    /// Patch matrices kept for weight gradients.
    pub cols: Vec<Vec<S>>,
    /// Post-activation stage outputs; the last one is the final feature map.
    pub outs: Vec<Tensor4<S>>,
    /// Channel means of the final map (projection input).
    pub pooled: Vec<S>,
}

impl<S: Scalar> StreamCache<S> {
    pub fn final_map(&self) -> &Tensor4<S> {
        self.outs.last().expect("stream has at least one stage")
    }
    pub fn stage1_out(&self) -> &Tensor4<S> {
        &self.outs[0]
    }
}

/// Everything the paired backward pass needs.
pub struct BackboneCache<S> {
    pub rgb: StreamCache<S>,
    pub depth: StreamCache<S>,
    pub inter: Option<StreamCache<S>>,
    pub idm: Option<IdmCache<S>>,
}

/// Gradients flowing into the paired backward pass, in embedding and map
/// space. Map-level gradients come from the bridge loss and are optional.
pub struct FeatureGrads<S> {
    pub d_emb_rgb: Vec<S>,
    pub d_emb_depth: Vec<S>,
    pub d_feat_rgb: Option<Tensor4<S>>,
    pub d_feat_depth: Option<Tensor4<S>>,
    pub d_feat_inter: Option<Tensor4<S>>,
    pub d_coeffs: (S, S),
}

impl<S: Scalar> FeatureGrads<S> {
    pub fn zeros(embedding_dim: usize) -> Self {
        FeatureGrads {
            d_emb_rgb: vec![S::zero(); embedding_dim],
            d_emb_depth: vec![S::zero(); embedding_dim],
            d_feat_rgb: None,
            d_feat_depth: None,
            d_feat_inter: None,
            d_coeffs: (S::zero(), S::zero()),
        }
    }
}

// ── Forward ─────────────────────────────────────────────────────────────────

/// Runs stages `start..n_stages` on `x` (which must be the input of stage
/// `start`) and pools the final map.
fn stream_forward<S: Scalar>(params: &ModelParams<S>, x: &Tensor4<S>, start: usize) -> Result<StreamCache<S>> {
    let mut in_dims = Vec::new();
    let mut cols = Vec::new();
    let mut outs: Vec<Tensor4<S>> = Vec::new();
    let mut prev: Option<Tensor4<S>> = None;
    for conv in &params.convs[start..] {
        let cur = prev.as_ref().unwrap_or(x);
        if cur.c != conv.shape.cin {
            return Err(Error::Shape(format!(
                "stage expects {} input channels, got {}",
                conv.shape.cin, cur.c
            )));
        }
        in_dims.push((cur.t, cur.h, cur.w));
        let (mut y, col) = ops::conv3d_forward(&conv.w, &conv.b, cur, &conv.shape)?;
        ops::relu_inplace(&mut y.data);
        cols.push(col);
        if let Some(p) = prev.take() {
            outs.push(p);
        }
        prev = Some(y);
    }
    let last = prev.ok_or_else(|| Error::Config("backbone has no stages".into()))?;
    let pooled = last.channel_means();
    outs.push(last);
    Ok(StreamCache { start, in_dims, cols, outs, pooled })
}

/// Global average pool then linear projection; the embedding every head
/// consumes.
pub fn pooled_embedding<S: Scalar>(params: &ModelParams<S>, map: &Tensor4<S>) -> Result<Vec<S>> {
    if map.c != params.proj.inp {
        return Err(Error::Shape(format!(
            "pooled_embedding expects {} channels, got {}",
            params.proj.inp, map.c
        )));
    }
    Ok(params.proj.forward(&map.channel_means()))
}

/// Single-modality forward: used by the RGB-only baseline, supervised
/// training and evaluation scoring.
pub fn forward_single<S: Scalar>(
    params: &ModelParams<S>,
    cfg: &BackboneConfig,
    x: &Tensor4<S>,
) -> Result<(Vec<S>, StreamCache<S>)> {
    cfg.validate()?;
    let cache = stream_forward(params, x, 0)?;
    let emb = params.proj.forward(&cache.pooled);
    Ok((emb, cache))
}

/// Paired forward: both modalities through shared weights; when the IDM
/// is enabled the mixed stage-1 feature continues through stages 2..n as a
/// third stream.
pub fn forward_features<S: Scalar>(
    params: &ModelParams<S>,
    cfg: &BackboneConfig,
    rgb: &Tensor4<S>,
    depth: &Tensor4<S>,
) -> Result<(FeatureBundle<S>, BackboneCache<S>)> {
    cfg.validate()?;
    if !rgb.same_shape(depth) {
        return Err(Error::Shape("paired inputs must share shape".into()));
    }
    let rgb_cache = stream_forward(params, rgb, 0)?;
    let depth_cache = stream_forward(params, depth, 0)?;
    let emb_rgb = params.proj.forward(&rgb_cache.pooled);
    let emb_depth = params.proj.forward(&depth_cache.pooled);

    let (inter_cache, idm_cache, coeffs) = if cfg.idm_enabled {
        let (mixed, coeffs, idm_cache) = idm::idm_forward(params, rgb_cache.stage1_out(), depth_cache.stage1_out())?;
        let inter = stream_forward(params, &mixed, 1)?;
        (Some(inter), Some(idm_cache), Some(coeffs))
    } else {
        (None, None, None)
    };

    let (feat_inter, emb_inter) = match &inter_cache {
        Some(c) => (Some(c.final_map().clone()), Some(params.proj.forward(&c.pooled))),
        None => (None, None),
    };
    let bundle = FeatureBundle {
        feat_rgb: rgb_cache.final_map().clone(),
        feat_depth: depth_cache.final_map().clone(),
        feat_inter,
        emb_rgb,
        emb_depth,
        emb_inter,
        coeffs,
    };
    Ok((bundle, BackboneCache { rgb: rgb_cache, depth: depth_cache, inter: inter_cache, idm: idm_cache }))
}

// ── Backward ────────────────────────────────────────────────────────────────

/// Combines the projection path (embedding gradient) and an optional direct
/// map gradient into the gradient at the final post-activation map.
fn final_map_grad<S: Scalar>(
    params: &ModelParams<S>,
    cache: &StreamCache<S>,
    d_emb: &[S],
    d_feat: Option<&Tensor4<S>>,
    grads: &mut ModelParams<S>,
) -> Result<Tensor4<S>> {
    let f = cache.final_map();
    let mut d = match d_feat {
        Some(g) => {
            if !g.same_shape(f) {
                return Err(Error::Shape("feature gradient shape mismatch".into()));
            }
            g.clone()
        }
        None => Tensor4::zeros(f.c, f.t, f.h, f.w),
    };
    if !d_emb.is_empty() {
        if d_emb.len() != params.proj.out {
            return Err(Error::Shape("embedding gradient length mismatch".into()));
        }
        let mut d_pooled = vec![S::zero(); params.proj.inp];
        params.proj.backward_acc(&cache.pooled, d_emb, &mut grads.proj, Some(&mut d_pooled));
        let cells = f.cell_count();
        let inv = S::one() / S::from_usize(cells);
        for c in 0..f.c {
            let g = d_pooled[c] * inv;
            for v in &mut d.data[c * cells..(c + 1) * cells] {
                *v += g;
            }
        }
    }
    Ok(d)
}

/// Walks stages from the top down to (and including) `down_to` (absolute
/// stage index), masking ReLU and accumulating conv gradients. Returns the
/// gradient at the input of stage `down_to` when requested.
fn stream_backward<S: Scalar>(
    params: &ModelParams<S>,
    cache: &StreamCache<S>,
    mut d: Tensor4<S>,
    down_to: usize,
    need_input_grad: bool,
    grads: &mut ModelParams<S>,
) -> Result<Option<Tensor4<S>>> {
    debug_assert!(down_to >= cache.start);
    let top = cache.start + cache.outs.len();
    for abs in (down_to..top).rev() {
        let j = abs - cache.start;
        ops::relu_backward_inplace(&mut d.data, &cache.outs[j].data);
        let need_dx = abs > down_to || need_input_grad;
        let conv = &params.convs[abs];
        let gconv = &mut grads.convs[abs];
        let dx = ops::conv3d_backward(
            &conv.w,
            &cache.cols[j],
            &d,
            &conv.shape,
            cache.in_dims[j],
            &mut gconv.w,
            &mut gconv.b,
            need_dx,
        )?;
        match dx {
            Some(next) => d = next,
            None => return Ok(None),
        }
    }
    Ok(Some(d))
}

/// Backward through one single-modality forward.
pub fn backward_single<S: Scalar>(
    params: &ModelParams<S>,
    cache: &StreamCache<S>,
    d_emb: &[S],
    grads: &mut ModelParams<S>,
) -> Result<()> {
    let d = final_map_grad(params, cache, d_emb, None, grads)?;
    stream_backward(params, cache, d, 0, false, grads)?;
    Ok(())
}

/// Backward through a paired forward. Accumulation order is fixed: RGB
/// chain, depth chain, intermediate chain, IDM, then stage 1 for RGB and
/// depth. Disabled paths (zero/absent gradients) contribute nothing.
pub fn backward_features<S: Scalar>(
    params: &ModelParams<S>,
    cache: &BackboneCache<S>,
    fg: &FeatureGrads<S>,
    grads: &mut ModelParams<S>,
) -> Result<()> {
    let d_rgb_final = final_map_grad(params, &cache.rgb, &fg.d_emb_rgb, fg.d_feat_rgb.as_ref(), grads)?;
    let d_depth_final = final_map_grad(params, &cache.depth, &fg.d_emb_depth, fg.d_feat_depth.as_ref(), grads)?;

    // Down to stage-1 outputs (post-ReLU level) so IDM contributions can be
    // injected before the stage-1 conv backward.
    let mut d_rgb_s1 = stream_backward(params, &cache.rgb, d_rgb_final, 1, true, grads)?
        .expect("rgb stage-1 gradient");
    let mut d_depth_s1 = stream_backward(params, &cache.depth, d_depth_final, 1, true, grads)?
        .expect("depth stage-1 gradient");

    if let (Some(inter), Some(idm_cache)) = (&cache.inter, &cache.idm) {
        let f = inter.final_map();
        let d_inter_final = match &fg.d_feat_inter {
            Some(g) => {
                if !g.same_shape(f) {
                    return Err(Error::Shape("inter feature gradient shape mismatch".into()));
                }
                g.clone()
            }
            None => Tensor4::zeros(f.c, f.t, f.h, f.w),
        };
        let d_mixed = stream_backward(params, inter, d_inter_final, 1, true, grads)?
            .expect("mixed map gradient");
        let (g_rgb, g_depth) = idm::idm_backward(
            params,
            cache.rgb.stage1_out(),
            cache.depth.stage1_out(),
            idm_cache,
            &d_mixed,
            fg.d_coeffs,
            grads,
        )?;
        d_rgb_s1.add_assign(&g_rgb)?;
        d_depth_s1.add_assign(&g_depth)?;
    }

    stage0_backward(params, &cache.rgb, d_rgb_s1, grads)?;
    stage0_backward(params, &cache.depth, d_depth_s1, grads)?;
    Ok(())
}

/// Stage-1 conv backward for one full stream; no input gradient needed.
fn stage0_backward<S: Scalar>(
    params: &ModelParams<S>,
    cache: &StreamCache<S>,
    mut d: Tensor4<S>,
    grads: &mut ModelParams<S>,
) -> Result<()> {
    ops::relu_backward_inplace(&mut d.data, &cache.outs[0].data);
    let conv = &params.convs[0];
    let g = &mut grads.convs[0];
    ops::conv3d_backward(&conv.w, &cache.cols[0], &d, &conv.shape, cache.in_dims[0], &mut g.w, &mut g.b, false)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> BackboneConfig {
        BackboneConfig { stage1_channels: 4, embedding_dim: 6, n_stages: 2, idm_enabled: true }
    }

    fn rand_input(rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        let data = (0..3 * 4 * 8 * 8).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor4::from_vec(3, 4, 8, 8, data).unwrap()
    }

    #[test]
    fn identical_inputs_give_identical_streams() {
        let params = ModelParams::<f64>::init(&cfg(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_input(&mut rng);
        let (bundle, _) = forward_features(&params, &cfg(), &x, &x.clone()).unwrap();
        assert_eq!(bundle.feat_rgb.data, bundle.feat_depth.data);
        let inter = bundle.feat_inter.unwrap();
        for (a, b) in inter.data.iter().zip(&bundle.feat_rgb.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn idm_disabled_drops_inter_stream() {
        let mut c = cfg();
        c.idm_enabled = false;
        let params = ModelParams::<f64>::init(&c, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (bundle, cache) = forward_features(&params, &c, &rand_input(&mut rng), &rand_input(&mut rng)).unwrap();
        assert!(bundle.feat_inter.is_none());
        assert!(bundle.emb_inter.is_none());
        assert!(bundle.coeffs.is_none());
        assert!(cache.inter.is_none());
    }

    #[test]
    fn forward_is_deterministic() {
        let params = ModelParams::<f64>::init(&cfg(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_input(&mut rng);
        let b = rand_input(&mut rng);
        let (x, _) = forward_features(&params, &cfg(), &a, &b).unwrap();
        let (y, _) = forward_features(&params, &cfg(), &a, &b).unwrap();
        assert_eq!(x.feat_rgb.data, y.feat_rgb.data);
        assert_eq!(x.emb_depth, y.emb_depth);
        assert_eq!(x.feat_inter.unwrap().data, y.feat_inter.unwrap().data);
    }

    #[test]
    fn pooled_embedding_identity_projection_recovers_means() {
        let c = cfg();
        let mut params = ModelParams::<f64>::zeros(&c);
        // Identity-ish projection: first 4 rows pick out the 4 channels.
        for i in 0..c.stage1_channels {
            params.proj.w[i * params.proj.inp + i] = 1.0;
        }
        let mut map = Tensor4::<f64>::zeros(4, 2, 3, 3);
        map.data.fill(0.37);
        let emb = pooled_embedding(&params, &map).unwrap();
        assert_eq!(emb.len(), 6);
        for i in 0..4 {
            assert!((emb[i] - 0.37).abs() < 1e-12);
        }
        assert_eq!(emb[4], 0.0);
        assert_eq!(emb[5], 0.0);
    }

    #[test]
    fn pooled_embedding_is_linear_in_the_map() {
        let params = ModelParams::<f64>::init(&cfg(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut map = Tensor4::<f64>::zeros(4, 2, 3, 3);
        for v in &mut map.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut scaled = map.clone();
        scaled.scale(2.5);
        let e1 = pooled_embedding(&params, &map).unwrap();
        let e2 = pooled_embedding(&params, &scaled).unwrap();
        for (a, b) in e1.iter().zip(&e2) {
            // Bias is zero-initialized, so the projection is linear.
            assert!((2.5 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pooled_embedding_matches_mean_then_matrix_oracle() {
        let params = ModelParams::<f64>::init(&cfg(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut map = Tensor4::<f64>::zeros(4, 2, 3, 3);
        for v in &mut map.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        let emb = pooled_embedding(&params, &map).unwrap();
        // Independent oracle: explicit per-channel mean, then explicit
        // matrix-vector product.
        let cells = 2 * 3 * 3;
        let means: Vec<f64> =
            (0..4).map(|c| map.data[c * cells..(c + 1) * cells].iter().sum::<f64>() / cells as f64).collect();
        for o in 0..6 {
            let mut acc = params.proj.b[o];
            for (i, m) in means.iter().enumerate() {
                acc += params.proj.w[o * 4 + i] * m;
            }
            assert!((emb[o] - acc).abs() < 1e-6);
        }
    }

    #[test]
    fn paired_backward_matches_finite_differences() {
        // Objective touches embeddings, all three final maps, and the
        // coefficients, exercising every gradient path in one pass.
        let c = cfg();
        let params = ModelParams::<f64>::init(&c, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xr = rand_input(&mut rng);
        let xd = rand_input(&mut rng);
        let ge: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (b0, _) = forward_features(&params, &c, &xr, &xd).unwrap();
        let gm: Vec<f64> = (0..b0.feat_rgb.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let eval = |p: &ModelParams<f64>| -> f64 {
            let (b, _) = forward_features(p, &c, &xr, &xd).unwrap();
            let co = b.coeffs.unwrap();
            ops::dot(&b.emb_rgb, &ge) + 0.5 * ops::dot(&b.emb_depth, &ge)
                + ops::dot(&b.feat_rgb.data, &gm)
                + 0.25 * ops::dot(&b.feat_depth.data, &gm)
                + 0.75 * ops::dot(&b.feat_inter.as_ref().unwrap().data, &gm)
                + 0.2 * co.a_rgb
                - 0.1 * co.a_depth
        };

        let (bundle, cache) = forward_features(&params, &c, &xr, &xd).unwrap();
        let f = &bundle.feat_rgb;
        let mk = |s: f64| {
            let mut t = Tensor4::zeros(f.c, f.t, f.h, f.w);
            for (o, &g) in t.data.iter_mut().zip(&gm) {
                *o = s * g;
            }
            t
        };
        let fg = FeatureGrads {
            d_emb_rgb: ge.clone(),
            d_emb_depth: ge.iter().map(|v| 0.5 * v).collect(),
            d_feat_rgb: Some(mk(1.0)),
            d_feat_depth: Some(mk(0.25)),
            d_feat_inter: Some(mk(0.75)),
            d_coeffs: (0.2, -0.1),
        };
        let mut grads = params.zeros_like();
        backward_features(&params, &cache, &fg, &mut grads).unwrap();

        let eps = 1e-6;
        let mut p = params.clone();
        // Sample a few weights from each parameter group: both conv stages,
        // the projection, and the IDM descriptor FC.
        for (gi, (tensor_idx, elem_step)) in [(0usize, 53usize), (2, 97), (4, 5), (6, 3)].iter().enumerate() {
            let n = p.tensors()[*tensor_idx].len();
            for i in (0..n).step_by(*elem_step) {
                {
                    let t = &mut p.tensors_mut()[*tensor_idx];
                    t[i] += eps;
                }
                let up = eval(&p);
                {
                    let t = &mut p.tensors_mut()[*tensor_idx];
                    t[i] -= 2.0 * eps;
                }
                let dn = eval(&p);
                {
                    let t = &mut p.tensors_mut()[*tensor_idx];
                    t[i] += eps;
                }
                let fd = (up - dn) / (2.0 * eps);
                let got = grads.tensors()[*tensor_idx][i];
                assert!(
                    (fd - got).abs() < 1e-6,
                    "group {gi} tensor {tensor_idx} elem {i}: fd {fd} vs {got}"
                );
            }
        }
    }

    #[test]
    fn single_stream_backward_matches_finite_differences() {
        let c = cfg();
        let params = ModelParams::<f64>::init(&c, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_input(&mut rng);
        let ge: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eval = |p: &ModelParams<f64>| -> f64 {
            let (emb, _) = forward_single(p, &c, &x).unwrap();
            ops::dot(&emb, &ge)
        };
        let (_, cache) = forward_single(&params, &c, &x).unwrap();
        let mut grads = params.zeros_like();
        backward_single(&params, &cache, &ge, &mut grads).unwrap();
        let eps = 1e-6;
        let mut p = params.clone();
        for tensor_idx in [0usize, 2, 4] {
            let n = p.tensors()[tensor_idx].len();
            for i in (0..n).step_by(29) {
                {
                    p.tensors_mut()[tensor_idx][i] += eps;
                }
                let up = eval(&p);
                {
                    p.tensors_mut()[tensor_idx][i] -= 2.0 * eps;
                }
                let dn = eval(&p);
                {
                    p.tensors_mut()[tensor_idx][i] += eps;
                }
                let fd = (up - dn) / (2.0 * eps);
                let got = grads.tensors()[tensor_idx][i];
                assert!((fd - got).abs() < 1e-6, "tensor {tensor_idx} elem {i}: fd {fd} vs {got}");
            }
        }
    }
}
