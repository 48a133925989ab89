//! Parameter containers: every learnable tensor in one struct, with a
//! canonical traversal order used by initialization, SGD updates,
//! checkpoint serialization, and checksums.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::ops::{ConvShape, Scalar};
use crate::rng;

/// Number of loss terms the weight head scores.
pub const N_LOSSES: usize = 5;
/// Input channels: RGB, or depth replicated to three channels.
pub const IN_CHANNELS: usize = 3;

/// Hidden width of the modality discriminator and loss-weight heads.
pub fn head_hidden(embedding_dim: usize) -> usize {
    (embedding_dim / 2).max(1)
}

// ── Building blocks ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<S> {
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub out: usize,
    pub inp: usize,
}

impl<S: Scalar> LinearParams<S> {
    pub fn zeros(out: usize, inp: usize) -> Self {
        LinearParams { w: vec![S::zero(); out * inp], b: vec![S::zero(); out], out, inp }
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        crate::ops::linear_forward(&self.w, &self.b, x, self.out, self.inp)
    }

    /// Accumulates gradients into `grad`; optionally adds the input gradient
    /// into `dx`.
    pub fn backward_acc(&self, x: &[S], dy: &[S], grad: &mut Self, dx: Option<&mut [S]>) {
        crate::ops::linear_backward_acc(&self.w, x, dy, self.out, self.inp, &mut grad.w, &mut grad.b, dx);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<S> {
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub shape: ConvShape,
}

impl<S: Scalar> ConvParams<S> {
    pub fn zeros(shape: ConvShape) -> Self {
        ConvParams { w: vec![S::zero(); shape.weight_len()], b: vec![S::zero(); shape.cout], shape }
    }
}

// ── Full parameter set ──────────────────────────────────────────────────────

/// All learnable parameters: backbone convolutions, embedding projection,
/// IDM, and the three heads (classifier, modality discriminator, adaptive
/// loss-weight head).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub convs: Vec<ConvParams<S>>,
    /// Final pooled feature -> embedding.
    pub proj: LinearParams<S>,
    /// IDM: concatenated (avg, max) descriptor -> hidden.
    pub idm_fc: LinearParams<S>,
    /// IDM MLP hidden -> hidden/2 (ReLU between the two layers).
    pub idm_mlp1: LinearParams<S>,
    /// IDM MLP hidden/2 -> 2 logits.
    pub idm_mlp2: LinearParams<S>,
    /// Binary fall classifier, embedding -> 1 logit.
    pub cls: LinearParams<S>,
    pub disc1: LinearParams<S>,
    pub disc2: LinearParams<S>,
    pub wh1: LinearParams<S>,
    pub wh2: LinearParams<S>,
    pub wh3: LinearParams<S>,
}

impl<S: Scalar> ModelParams<S> {
    /// Zero-valued parameter set with the geometry implied by `cfg`.
    /// Later stages reuse `stage1_channels`; only the first stage widens
    /// from the input channels.
    pub fn zeros(cfg: &BackboneConfig) -> Self {
        let c = cfg.stage1_channels;
        let convs = (0..cfg.n_stages)
            .map(|i| {
                ConvParams::zeros(ConvShape {
                    cin: if i == 0 { IN_CHANNELS } else { c },
                    cout: c,
                    k: 3,
                    stride: (1, 2, 2),
                    pad: (1, 1, 1),
                })
            })
            .collect();
        let d = cfg.embedding_dim;
        let h = head_hidden(d);
        let idm_hidden = c;
        let idm_mid = (c / 2).max(1);
        ModelParams {
            convs,
            proj: LinearParams::zeros(d, c),
            idm_fc: LinearParams::zeros(idm_hidden, 2 * c),
            idm_mlp1: LinearParams::zeros(idm_mid, idm_hidden),
            idm_mlp2: LinearParams::zeros(2, idm_mid),
            cls: LinearParams::zeros(1, d),
            disc1: LinearParams::zeros(h, d),
            disc2: LinearParams::zeros(1, h),
            wh1: LinearParams::zeros(h, d),
            wh2: LinearParams::zeros(h, h),
            wh3: LinearParams::zeros(N_LOSSES, h),
        }
    }

    /// Random initialization: fan-in-scaled normals for convolutions,
    /// N(0, 0.01) for every head, Xavier for the embedding projection.
    /// Draw order follows the canonical tensor order, so a given seed
    /// always produces the same parameters.
    pub fn init(cfg: &BackboneConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut r = rng::stream(seed, rng::Purpose::Init, 0);
        for conv in &mut p.convs {
            let fan_in = conv.shape.cin * conv.shape.k * conv.shape.k * conv.shape.k;
            fill_normal(&mut r, &mut conv.w, (2.0 / fan_in as f64).sqrt());
        }
        let proj_std = (1.0 / p.proj.inp as f64).sqrt();
        fill_normal(&mut r, &mut p.proj.w, proj_std);
        // Heads scale with fan-in like the projection: an undersized head
        // starves the backbone of gradient and whether training ignites
        // within the epoch budget becomes an init lottery.
        for lin in [
            &mut p.idm_fc,
            &mut p.idm_mlp1,
            &mut p.idm_mlp2,
            &mut p.cls,
            &mut p.disc1,
            &mut p.disc2,
            &mut p.wh1,
            &mut p.wh2,
            &mut p.wh3,
        ] {
            let std = (1.0 / lin.inp as f64).sqrt();
            fill_normal(&mut r, &mut lin.w, std);
        }
        p
    }

    /// Visits every parameter tensor in canonical order.
    pub fn tensors(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = Vec::new();
        for c in &self.convs {
            out.push(&c.w);
            out.push(&c.b);
        }
        for l in [
            &self.proj,
            &self.idm_fc,
            &self.idm_mlp1,
            &self.idm_mlp2,
            &self.cls,
            &self.disc1,
            &self.disc2,
            &self.wh1,
            &self.wh2,
            &self.wh3,
        ] {
            out.push(&l.w);
            out.push(&l.b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<S>> {
        let mut out: Vec<&mut Vec<S>> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.w);
            out.push(&mut c.b);
        }
        for l in [
            &mut self.proj,
            &mut self.idm_fc,
            &mut self.idm_mlp1,
            &mut self.idm_mlp2,
            &mut self.cls,
            &mut self.disc1,
            &mut self.disc2,
            &mut self.wh1,
            &mut self.wh2,
            &mut self.wh3,
        ] {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameters concatenated in canonical order.
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.n_params());
        for t in self.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    /// Loads a flat vector produced by [`flatten`](Self::flatten) on a model
    /// of identical geometry.
    pub fn load_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Schema(format!(
                "parameter blob has {} values, model needs {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(S::zero());
        }
        z
    }

    /// SHA-256 over the canonical flat order, serialized as f64 LE bytes.
    /// f32 values widen exactly, so the checksum is stable across reloads.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in self.tensors() {
            for v in t {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Exact element-wise cast (used to run f32-trained models under f64
    /// gradient certification).
    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let conv = |l: &LinearParams<S>| LinearParams {
            w: l.w.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            b: l.b.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            out: l.out,
            inp: l.inp,
        };
        ModelParams {
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams {
                    w: c.w.iter().map(|v| T::from_f64(v.as_f64())).collect(),
                    b: c.b.iter().map(|v| T::from_f64(v.as_f64())).collect(),
                    shape: c.shape,
                })
                .collect(),
            proj: conv(&self.proj),
            idm_fc: conv(&self.idm_fc),
            idm_mlp1: conv(&self.idm_mlp1),
            idm_mlp2: conv(&self.idm_mlp2),
            cls: conv(&self.cls),
            disc1: conv(&self.disc1),
            disc2: conv(&self.disc2),
            wh1: conv(&self.wh1),
            wh2: conv(&self.wh2),
            wh3: conv(&self.wh3),
        }
    }
}

fn fill_normal<S: Scalar, R: Rng>(rng: &mut R, out: &mut [S], std: f64) {
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    for v in out {
        *v = S::from_f64(dist.sample(rng));
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> BackboneConfig {
        BackboneConfig::default()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = ModelParams::<f32>::init(&cfg(), 9);
        let b = ModelParams::<f32>::init(&cfg(), 9);
        assert_eq!(a, b);
        let c = ModelParams::<f32>::init(&cfg(), 10);
        assert_ne!(a, c);
    }

    #[test]
    fn reference_backbone_stays_under_param_budget() {
        let p = ModelParams::<f32>::init(&cfg(), 0);
        assert!(p.n_params() < 100_000, "{} params", p.n_params());
    }

    #[test]
    fn flatten_roundtrip_preserves_values() {
        let p = ModelParams::<f32>::init(&cfg(), 3);
        let flat = p.flatten();
        let mut q = ModelParams::<f32>::zeros(&cfg());
        q.load_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.checksum(), q.checksum());
    }

    #[test]
    fn load_flat_rejects_wrong_length() {
        let mut p = ModelParams::<f32>::zeros(&cfg());
        let n = p.n_params();
        assert!(p.load_flat(&vec![0.0; n - 1]).is_err());
    }

    #[test]
    fn checksum_changes_with_any_parameter() {
        let p = ModelParams::<f32>::init(&cfg(), 3);
        let mut q = p.clone();
        q.cls.b[0] += 1.0;
        assert_ne!(p.checksum(), q.checksum());
    }

    #[test]
    fn cast_to_f64_is_exact() {
        let p = ModelParams::<f32>::init(&cfg(), 3);
        let q: ModelParams<f64> = p.cast();
        assert_eq!(p.checksum(), q.checksum());
    }
}
