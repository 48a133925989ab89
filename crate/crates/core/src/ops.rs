//! Float-generic numeric kernels: GEMM, 3D convolution, linear layers,
//! activations.
//!
//! Training runs in `f32`; gradient certification and metric oracles run the
//! same code in `f64`. Everything is generic over [`Scalar`] so both paths
//! share one implementation.
//!
//! The 3D convolution is decomposed over temporal taps: the input is
//! unrolled once into a per-frame 2D patch matrix (`im2col2d`), and each of
//! the `k` temporal taps contributes one GEMM over a shifted frame window.
//! Compared to a full 3D im2col this shrinks the unrolled buffer by the
//! temporal kernel factor, which is what keeps single-core training within
//! the end-to-end runtime budget.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Logits are clamped to this magnitude before the sigmoid so scores stay
/// strictly inside (0, 1) and BCE terms stay finite.
pub const LOGIT_CLAMP: f64 = 15.0;

/// Smoothing added under square roots so norm gradients stay finite at zero.
pub const NORM_EPS: f64 = 1e-12;

// ── Scalar trait ────────────────────────────────────────────────────────────

/// Floating-point element type with a fused GEMM entry point.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }

    /// General matrix multiply `C = alpha * A * B + beta * C` with explicit
    /// strides, mirroring the BLAS-style kernel underneath.
    ///
    /// # Safety
    /// Pointers must be valid for the strided `m`x`k`, `k`x`n`, `m`x`n`
    /// access patterns implied by the stride arguments.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Matrix view into a slice: the element `(r, c)` of the logical matrix
/// lives at `slice[offset + r*rs + c*cs]`.
#[derive(Clone, Copy)]
pub struct MatView {
    pub offset: usize,
    pub rs: isize,
    pub cs: isize,
}

impl MatView {
    pub fn contiguous(cols: usize) -> Self {
        MatView { offset: 0, rs: cols as isize, cs: 1 }
    }
}

/// `C = alpha*A*B + beta*C` over strided views. Debug builds assert that the
/// extreme indices of every view stay in bounds.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    va: MatView,
    b: &[S],
    vb: MatView,
    beta: S,
    c: &mut [S],
    vc: MatView,
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |len: usize, v: MatView, rows: usize, cols: usize| {
        let corner = |r: usize, c: usize| v.offset as isize + r as isize * v.rs + c as isize * v.cs;
        for (r, cc) in [(0, 0), (rows - 1, 0), (0, cols - 1), (rows - 1, cols - 1)] {
            let i = corner(r, cc);
            assert!(i >= 0 && (i as usize) < len, "gemm view out of bounds");
        }
    };
    span(a.len(), va, m, k);
    span(b.len(), vb, k, n);
    span(c.len(), vc, m, n);
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(va.offset),
            va.rs,
            va.cs,
            b.as_ptr().add(vb.offset),
            vb.rs,
            vb.cs,
            beta,
            c.as_mut_ptr().add(vc.offset),
            vc.rs,
            vc.cs,
        );
    }
}

/// `C = alpha*A*B + beta*C`; A is m x k, B is k x n, C is m x n, all
/// contiguous row-major.
pub fn gemm_nn<S: Scalar>(m: usize, k: usize, n: usize, alpha: S, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    gemm(m, k, n, alpha, a, MatView::contiguous(k), b, MatView::contiguous(n), beta, c, MatView::contiguous(n));
}

// ── 3D convolution ──────────────────────────────────────────────────────────

/// Static shape of one 3D convolution layer (cubic kernel).
///
/// Weights are stored tap-major: `[kt][oc][ic][kh][kw]`, so each temporal
/// tap is a contiguous `cout x (cin*k*k)` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    /// Cubic kernel edge length.
    pub k: usize,
    /// (time, height, width) stride.
    pub stride: (usize, usize, usize),
    /// (time, height, width) zero padding on both sides.
    pub pad: (usize, usize, usize),
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.k * self.cout * self.rows2d()
    }

    /// Rows of the per-frame patch matrix: cin * k * k.
    pub fn rows2d(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Flat weight index for kernel element (oc, ic, kt, kh, kw).
    pub fn w_idx(&self, oc: usize, ic: usize, kt: usize, kh: usize, kw: usize) -> usize {
        (((kt * self.cout + oc) * self.cin + ic) * self.k + kh) * self.k + kw
    }

    pub fn out_dims(&self, t: usize, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let od = |i: usize, p: usize, s: usize| -> Result<usize> {
            let span = i + 2 * p;
            if span < self.k {
                return Err(Error::Shape(format!(
                    "conv input dim {i} with pad {p} smaller than kernel {}",
                    self.k
                )));
            }
            Ok((span - self.k) / s + 1)
        };
        Ok((od(t, self.pad.0, self.stride.0)?, od(h, self.pad.1, self.stride.1)?, od(w, self.pad.2, self.stride.2)?))
    }
}

/// Valid output range `[lo, hi)` along one axis for a given kernel offset:
/// positions where `o*stride + tap - pad` lands inside `[0, input)`.
#[inline]
fn valid_range(out: usize, input: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    let off = tap as isize - pad as isize;
    let lo = if off >= 0 { 0 } else { ((-off) as usize + stride - 1) / stride };
    let last = input as isize - 1 - off;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last as usize / stride + 1).min(out);
    (lo.min(hi), hi)
}

/// Unrolls every input frame into a 2D patch matrix of shape
/// `rows2d x (T * Ho*Wo)`, frame-major along columns. Out-of-bounds taps
/// are zero.
pub fn im2col2d<S: Scalar>(x: &Tensor4<S>, shape: &ConvShape) -> Result<Vec<S>> {
    if x.c != shape.cin {
        return Err(Error::Shape(format!("im2col2d expected {} channels, got {}", shape.cin, x.c)));
    }
    let (_, ho, wo) = shape.out_dims(x.t, x.h, x.w)?;
    let n2 = ho * wo;
    let ncols = x.t * n2;
    let (_, sh, sw) = shape.stride;
    let (_, ph, pw) = shape.pad;
    let k = shape.k;
    let mut col = vec![S::zero(); shape.rows2d() * ncols];

    let mut row = 0;
    for ic in 0..shape.cin {
        for kh in 0..k {
            let (oh_lo, oh_hi) = valid_range(ho, x.h, sh, kh, ph);
            for kw in 0..k {
                let (ow_lo, ow_hi) = valid_range(wo, x.w, sw, kw, pw);
                let woff = kw as isize - pw as isize;
                let dst_row = &mut col[row * ncols..(row + 1) * ncols];
                for t in 0..x.t {
                    for oh in oh_lo..oh_hi {
                        let ih = oh * sh + kh - ph;
                        let src = &x.data[((ic * x.t + t) * x.h + ih) * x.w..][..x.w];
                        let dst = &mut dst_row[t * n2 + oh * wo..][..wo];
                        if sw == 1 {
                            let start = (ow_lo as isize + woff) as usize;
                            dst[ow_lo..ow_hi].copy_from_slice(&src[start..start + (ow_hi - ow_lo)]);
                        } else {
                            let mut si = (ow_lo * sw) as isize + woff;
                            for d in &mut dst[ow_lo..ow_hi] {
                                *d = src[si as usize];
                                si += sw as isize;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Ok(col)
}

/// Scatter-add of a patch-matrix gradient back to input layout; adjoint of
/// [`im2col2d`].
pub fn col2im2d<S: Scalar>(
    dcol: &[S],
    shape: &ConvShape,
    in_dims: (usize, usize, usize),
) -> Result<Tensor4<S>> {
    let (ti, hi, wi) = in_dims;
    let (_, ho, wo) = shape.out_dims(ti, hi, wi)?;
    let n2 = ho * wo;
    let ncols = ti * n2;
    debug_assert_eq!(dcol.len(), shape.rows2d() * ncols);
    let (_, sh, sw) = shape.stride;
    let (_, ph, pw) = shape.pad;
    let k = shape.k;
    let mut dx = Tensor4::zeros(shape.cin, ti, hi, wi);

    let mut row = 0;
    for ic in 0..shape.cin {
        for kh in 0..k {
            let (oh_lo, oh_hi) = valid_range(ho, hi, sh, kh, ph);
            for kw in 0..k {
                let (ow_lo, ow_hi) = valid_range(wo, wi, sw, kw, pw);
                let woff = kw as isize - pw as isize;
                let src_row = &dcol[row * ncols..(row + 1) * ncols];
                for t in 0..ti {
                    for oh in oh_lo..oh_hi {
                        let ih = oh * sh + kh - ph;
                        let dst = &mut dx.data[((ic * ti + t) * hi + ih) * wi..][..wi];
                        let src = &src_row[t * n2 + oh * wo..][..wo];
                        let mut di = (ow_lo * sw) as isize + woff;
                        for &s in &src[ow_lo..ow_hi] {
                            dst[di as usize] += s;
                            di += sw as isize;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Ok(dx)
}

/// Temporal tap windows: for tap `kt`, output frames `[lo, hi)` read input
/// frame `ot*st + kt - pt`.
fn tap_windows(shape: &ConvShape, ti: usize, to: usize) -> Vec<(usize, usize, usize)> {
    (0..shape.k)
        .map(|kt| {
            let (lo, hi) = valid_range(to, ti, shape.stride.0, kt, shape.pad.0);
            (kt, lo, hi)
        })
        .collect()
}

/// Forward 3D convolution. Returns the output map and the patch matrix,
/// which the backward pass reuses for the weight gradient.
pub fn conv3d_forward<S: Scalar>(
    w: &[S],
    b: &[S],
    x: &Tensor4<S>,
    shape: &ConvShape,
) -> Result<(Tensor4<S>, Vec<S>)> {
    debug_assert_eq!(w.len(), shape.weight_len());
    debug_assert_eq!(b.len(), shape.cout);
    let (to, ho, wo) = shape.out_dims(x.t, x.h, x.w)?;
    let n2 = ho * wo;
    let rows = shape.rows2d();
    let col = im2col2d(x, shape)?;
    let mut y = Tensor4::zeros(shape.cout, to, ho, wo);
    let yn = to * n2;
    for oc in 0..shape.cout {
        y.data[oc * yn..(oc + 1) * yn].fill(b[oc]);
    }
    let st = shape.stride.0;
    let pt = shape.pad.0;
    for (kt, lo, hi) in tap_windows(shape, x.t, to) {
        if lo >= hi {
            continue;
        }
        let wa = &w[kt * shape.cout * rows..(kt + 1) * shape.cout * rows];
        if st == 1 {
            // One GEMM across the whole contiguous frame window.
            let it0 = lo + kt - pt;
            gemm(
                shape.cout,
                rows,
                (hi - lo) * n2,
                S::one(),
                wa,
                MatView::contiguous(rows),
                &col,
                MatView { offset: it0 * n2, rs: (x.t * n2) as isize, cs: 1 },
                S::one(),
                &mut y.data,
                MatView { offset: lo * n2, rs: yn as isize, cs: 1 },
            );
        } else {
            for ot in lo..hi {
                let it = ot * st + kt - pt;
                gemm(
                    shape.cout,
                    rows,
                    n2,
                    S::one(),
                    wa,
                    MatView::contiguous(rows),
                    &col,
                    MatView { offset: it * n2, rs: (x.t * n2) as isize, cs: 1 },
                    S::one(),
                    &mut y.data,
                    MatView { offset: ot * n2, rs: yn as isize, cs: 1 },
                );
            }
        }
    }
    Ok((y, col))
}

/// Backward 3D convolution. Accumulates `dw`/`db` in place; returns the
/// input gradient when `need_dx` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_backward<S: Scalar>(
    w: &[S],
    col: &[S],
    dy: &Tensor4<S>,
    shape: &ConvShape,
    in_dims: (usize, usize, usize),
    dw: &mut [S],
    db: &mut [S],
    need_dx: bool,
) -> Result<Option<Tensor4<S>>> {
    let (ti, hi, wi) = in_dims;
    let (to, ho, wo) = shape.out_dims(ti, hi, wi)?;
    debug_assert_eq!((dy.c, dy.t, dy.h, dy.w), (shape.cout, to, ho, wo));
    let n2 = ho * wo;
    let yn = to * n2;
    let rows = shape.rows2d();
    debug_assert_eq!(col.len(), rows * ti * n2);
    debug_assert_eq!(dw.len(), shape.weight_len());
    debug_assert_eq!(db.len(), shape.cout);

    for oc in 0..shape.cout {
        db[oc] += dy.data[oc * yn..(oc + 1) * yn].iter().copied().sum::<S>();
    }

    let st = shape.stride.0;
    let pt = shape.pad.0;
    let windows = tap_windows(shape, ti, to);
    let mut dcol = if need_dx { vec![S::zero(); rows * ti * n2] } else { Vec::new() };

    for &(kt, lo, hi) in &windows {
        if lo >= hi {
            continue;
        }
        let wslice = kt * shape.cout * rows..(kt + 1) * shape.cout * rows;
        let mut run = |ot_lo: usize, ot_hi: usize| {
            let it0 = ot_lo * st + kt - pt;
            let ncols = if st == 1 { (ot_hi - ot_lo) * n2 } else { n2 };
            // dw_tap += dy_window · col_window^T. The output is tiny
            // (cout x rows) with a huge contraction axis; explicit dot
            // products over the contiguous rows beat a packed GEMM here.
            let dwt = &mut dw[wslice.clone()];
            for r in 0..rows {
                let crow = &col[r * ti * n2 + it0 * n2..][..ncols];
                for oc in 0..shape.cout {
                    let dyrow = &dy.data[oc * yn + ot_lo * n2..][..ncols];
                    dwt[oc * rows + r] += dot(crow, dyrow);
                }
            }
            if need_dx {
                // dcol_window += w_tap^T · dy_window
                gemm(
                    rows,
                    shape.cout,
                    ncols,
                    S::one(),
                    &w[wslice.clone()],
                    MatView { offset: 0, rs: 1, cs: rows as isize },
                    &dy.data,
                    MatView { offset: ot_lo * n2, rs: yn as isize, cs: 1 },
                    S::one(),
                    &mut dcol,
                    MatView { offset: it0 * n2, rs: (ti * n2) as isize, cs: 1 },
                );
            }
        };
        if st == 1 {
            run(lo, hi);
        } else {
            for ot in lo..hi {
                run(ot, ot + 1);
            }
        }
    }
    if !need_dx {
        return Ok(None);
    }
    Ok(Some(col2im2d(&dcol, shape, in_dims)?))
}

// ── Activations ─────────────────────────────────────────────────────────────

pub fn relu_inplace<S: Scalar>(x: &mut [S]) {
    for v in x {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}

/// Masks `dy` by the post-activation output: gradient passes where `y > 0`.
pub fn relu_backward_inplace<S: Scalar>(dy: &mut [S], y: &[S]) {
    for (d, &o) in dy.iter_mut().zip(y) {
        if o <= S::zero() {
            *d = S::zero();
        }
    }
}

/// Sigmoid of a clamped logit plus the derivative d(sigmoid)/d(logit),
/// evaluated at the clamped value. Keeping the saturated derivative at
/// s(1-s) rather than zero reproduces the fused logit-space BCE gradient
/// (p - y), so a confidently wrong prediction beyond the clamp still
/// receives its full corrective signal and cannot freeze.
pub fn sigmoid_clamped<S: Scalar>(logit: S) -> (S, S) {
    let hi = S::from_f64(LOGIT_CLAMP);
    let clamped = logit.max(-hi).min(hi);
    let s = S::one() / (S::one() + (-clamped).exp());
    (s, s * (S::one() - s))
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let m = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax Jacobian-vector product: given probabilities `p` and upstream
/// `dy`, returns d(loss)/d(logits).
pub fn softmax_backward<S: Scalar>(p: &[S], dy: &[S]) -> Vec<S> {
    let dot: S = p.iter().zip(dy).map(|(&pi, &di)| pi * di).sum();
    p.iter().zip(dy).map(|(&pi, &di)| pi * (di - dot)).collect()
}

// ── Linear layers ───────────────────────────────────────────────────────────

/// `y = W x + b`; W stored row-major `out x inp`.
pub fn linear_forward<S: Scalar>(w: &[S], b: &[S], x: &[S], out: usize, inp: usize) -> Vec<S> {
    debug_assert_eq!(w.len(), out * inp);
    debug_assert_eq!(b.len(), out);
    debug_assert_eq!(x.len(), inp);
    (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            b[o] + row.iter().zip(x).map(|(&wi, &xi)| wi * xi).sum::<S>()
        })
        .collect()
}

/// Accumulates `dw += dy x^T`, `db += dy`; optionally adds `W^T dy` into `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward_acc<S: Scalar>(
    w: &[S],
    x: &[S],
    dy: &[S],
    out: usize,
    inp: usize,
    dw: &mut [S],
    db: &mut [S],
    dx: Option<&mut [S]>,
) {
    debug_assert_eq!(dy.len(), out);
    for o in 0..out {
        let g = dy[o];
        db[o] += g;
        let drow = &mut dw[o * inp..(o + 1) * inp];
        for (d, &xi) in drow.iter_mut().zip(x) {
            *d += g * xi;
        }
    }
    if let Some(dx) = dx {
        debug_assert_eq!(dx.len(), inp);
        for o in 0..out {
            let g = dy[o];
            let row = &w[o * inp..(o + 1) * inp];
            for (d, &wi) in dx.iter_mut().zip(row) {
                *d += g * wi;
            }
        }
    }
}

// ── Small vector helpers ────────────────────────────────────────────────────

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    // Eight partial sums break the FMA dependency chain; the compiler keeps
    // them in vector registers.
    let mut acc = [S::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in ca.by_ref().zip(cb.by_ref()) {
        for i in 0..8 {
            acc[i] = acc[i] + xa[i] * xb[i];
        }
    }
    let mut s = acc.iter().copied().sum::<S>();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

/// Euclidean norm smoothed as sqrt(sum(v^2) + eps); differentiable at zero.
pub fn norm_smoothed<S: Scalar>(v: &[S]) -> S {
    (dot(v, v) + S::from_f64(NORM_EPS)).sqrt()
}

/// Smoothed Euclidean distance between two equal-length vectors.
pub fn dist_smoothed<S: Scalar>(a: &[S], b: &[S]) -> S {
    let sq: S = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    (sq + S::from_f64(NORM_EPS)).sqrt()
}

pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct-loop reference convolution; the independent oracle for the
    /// GEMM-backed path.
    fn conv3d_naive(w: &[f64], b: &[f64], x: &Tensor4<f64>, shape: &ConvShape) -> Tensor4<f64> {
        let (to, ho, wo) = shape.out_dims(x.t, x.h, x.w).unwrap();
        let k = shape.k;
        let mut y = Tensor4::zeros(shape.cout, to, ho, wo);
        for oc in 0..shape.cout {
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = b[oc];
                        for ic in 0..shape.cin {
                            for kt in 0..k {
                                for kh in 0..k {
                                    for kw in 0..k {
                                        let it = (ot * shape.stride.0 + kt) as isize - shape.pad.0 as isize;
                                        let ih = (oh * shape.stride.1 + kh) as isize - shape.pad.1 as isize;
                                        let iw = (ow * shape.stride.2 + kw) as isize - shape.pad.2 as isize;
                                        if it < 0
                                            || ih < 0
                                            || iw < 0
                                            || it as usize >= x.t
                                            || ih as usize >= x.h
                                            || iw as usize >= x.w
                                        {
                                            continue;
                                        }
                                        acc += w[shape.w_idx(oc, ic, kt, kh, kw)]
                                            * x.get(ic, it as usize, ih as usize, iw as usize);
                                    }
                                }
                            }
                        }
                        y.set(oc, ot, oh, ow, acc);
                    }
                }
            }
        }
        y
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, t: usize, h: usize, w: usize) -> Tensor4<f64> {
        let data = (0..c * t * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor4::from_vec(c, t, h, w, data).unwrap()
    }

    #[test]
    fn gemm_nn_matches_manual() {
        let a = vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = vec![0.0; 4];
        gemm_nn(2, 3, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn gemm_strided_views_express_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (m, k, n) = (5, 4, 6);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut c_ref = vec![0.0; m * n];
        gemm_nn(m, k, n, 1.0, &a, &b, 0.0, &mut c_ref);

        // A stored transposed (k x m), read through a column-major view.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let mut c = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            &at,
            MatView { offset: 0, rs: 1, cs: m as isize },
            &b,
            MatView::contiguous(n),
            0.0,
            &mut c,
            MatView::contiguous(n),
        );
        for (x, y) in c.iter().zip(&c_ref) {
            assert!((x - y).abs() < 1e-12);
        }

        // B stored transposed (n x k).
        let mut bt = vec![0.0; n * k];
        for i in 0..k {
            for j in 0..n {
                bt[j * k + i] = b[i * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            &a,
            MatView::contiguous(k),
            &bt,
            MatView { offset: 0, rs: 1, cs: k as isize },
            0.0,
            &mut c2,
            MatView::contiguous(n),
        );
        for (x, y) in c2.iter().zip(&c_ref) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_forward_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(stride, pad) in &[
            ((1, 1, 1), (1, 1, 1)),
            ((1, 2, 2), (1, 1, 1)),
            ((2, 2, 2), (0, 0, 0)),
            ((2, 1, 2), (1, 0, 1)),
        ] {
            let shape = ConvShape { cin: 3, cout: 4, k: 3, stride, pad };
            let x = rand_tensor(&mut rng, 3, 5, 8, 7);
            let w: Vec<f64> = (0..shape.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..shape.cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (y, _) = conv3d_forward(&w, &b, &x, &shape).unwrap();
            let y_ref = conv3d_naive(&w, &b, &x, &shape);
            assert!(y.same_shape(&y_ref));
            for (a, r) in y.data.iter().zip(&y_ref.data) {
                assert!((a - r).abs() < 1e-10, "{a} vs {r}");
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for &(stride, pad) in &[((1, 2, 2), (1, 1, 1)), ((2, 2, 2), (1, 1, 1))] {
            let shape = ConvShape { cin: 2, cout: 3, k: 3, stride, pad };
            let x = rand_tensor(&mut rng, 2, 4, 6, 6);
            let w: Vec<f64> = (0..shape.weight_len()).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let b: Vec<f64> = (0..shape.cout).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let (y, col) = conv3d_forward(&w, &b, &x, &shape).unwrap();
            // Loss = sum(y * g) for a fixed random g, so dL/dy = g.
            let g: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dy = Tensor4::from_vec(y.c, y.t, y.h, y.w, g.clone()).unwrap();
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; b.len()];
            let dx = conv3d_backward(&w, &col, &dy, &shape, (x.t, x.h, x.w), &mut dw, &mut db, true)
                .unwrap()
                .unwrap();

            let loss = |w: &[f64], b: &[f64], x: &Tensor4<f64>| -> f64 {
                let (y, _) = conv3d_forward(w, b, x, &shape).unwrap();
                y.data.iter().zip(&g).map(|(a, b)| a * b).sum()
            };
            let eps = 1e-6;
            for i in (0..w.len()).step_by(17) {
                let mut wp = w.clone();
                wp[i] += eps;
                let mut wm = w.clone();
                wm[i] -= eps;
                let fd = (loss(&wp, &b, &x) - loss(&wm, &b, &x)) / (2.0 * eps);
                assert!((fd - dw[i]).abs() < 1e-6, "dw[{i}]: fd {fd} vs {}", dw[i]);
            }
            for i in (0..x.len()).step_by(23) {
                let mut xp = x.clone();
                xp.data[i] += eps;
                let mut xm = x.clone();
                xm.data[i] -= eps;
                let fd = (loss(&w, &b, &xp) - loss(&w, &b, &xm)) / (2.0 * eps);
                assert!((fd - dx.data[i]).abs() < 1e-6, "dx[{i}]: fd {fd} vs {}", dx.data[i]);
            }
            for i in 0..b.len() {
                let mut bp = b.clone();
                bp[i] += eps;
                let mut bm = b.clone();
                bm[i] -= eps;
                let fd = (loss(&w, &bp, &x) - loss(&w, &bm, &x)) / (2.0 * eps);
                assert!((fd - db[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn col2im2d_is_adjoint_of_im2col2d() {
        // <im2col2d(x), c> == <x, col2im2d(c)> for random x, c.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = ConvShape { cin: 2, cout: 1, k: 3, stride: (1, 2, 2), pad: (1, 1, 1) };
        let x = rand_tensor(&mut rng, 2, 4, 6, 5);
        let col = im2col2d(&x, &shape).unwrap();
        let c: Vec<f64> = (0..col.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let back = col2im2d(&c, &shape, (x.t, x.h, x.w)).unwrap();
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn relu_roundtrip() {
        let mut x = vec![-1.0f64, 0.0, 2.0];
        relu_inplace(&mut x);
        assert_eq!(x, vec![0.0, 0.0, 2.0]);
        let mut dy = vec![1.0, 1.0, 1.0];
        relu_backward_inplace(&mut dy, &x);
        assert_eq!(dy, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_clamp_bounds_score() {
        let (s, d) = sigmoid_clamped(100.0f64);
        assert!(s < 1.0);
        let (s15, d15) = sigmoid_clamped(15.0f64);
        assert_eq!((s, d), (s15, d15), "saturated logits evaluate at the clamp");
        assert!(d > 0.0, "the saturated derivative must stay live");
        let (s2, _) = sigmoid_clamped(-100.0f64);
        assert!(s2 > 0.0);
        let (s3, d3) = sigmoid_clamped(0.0f64);
        assert!((s3 - 0.5).abs() < 1e-15);
        assert!((d3 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn saturated_wrong_prediction_keeps_full_bce_gradient() {
        // (dL/ds) * d must reproduce the fused logit-space gradient
        // (s - y): a confidently wrong score cannot stop learning.
        let (s, d) = sigmoid_clamped(40.0f64);
        let y = 0.0;
        let dl_ds = (s - y) / (s * (1.0 - s));
        let fused = dl_ds * d;
        assert!((fused - (s - y)).abs() < 1e-12);
        assert!(fused > 0.99, "corrective signal lost: {fused}");
    }

    #[test]
    fn softmax_sums_to_one_and_backward_matches_fd() {
        let logits = vec![0.3f64, -1.2, 2.5];
        let p = softmax(&logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let dy = vec![0.7, -0.4, 0.1];
        let dl = softmax_backward(&p, &dy);
        let eps = 1e-7;
        for i in 0..3 {
            let mut lp = logits.clone();
            lp[i] += eps;
            let mut lm = logits.clone();
            lm[i] -= eps;
            let f = |l: &[f64]| -> f64 { softmax(l).iter().zip(&dy).map(|(a, b)| a * b).sum() };
            let fd = (f(&lp) - f(&lm)) / (2.0 * eps);
            assert!((fd - dl[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_forward_and_backward_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (out, inp) = (3, 5);
        let w: Vec<f64> = (0..out * inp).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..inp).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; b.len()];
        let mut dx = vec![0.0; inp];
        linear_backward_acc(&w, &x, &dy, out, inp, &mut dw, &mut db, Some(&mut dx));
        let f = |w: &[f64], b: &[f64], x: &[f64]| -> f64 {
            linear_forward(w, b, x, out, inp).iter().zip(&dy).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-7;
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += eps;
            let mut wm = w.clone();
            wm[i] -= eps;
            assert!(((f(&wp, &b, &x) - f(&wm, &b, &x)) / (2.0 * eps) - dw[i]).abs() < 1e-8);
        }
        for i in 0..inp {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            assert!(((f(&w, &b, &xp) - f(&w, &b, &xm)) / (2.0 * eps) - dx[i]).abs() < 1e-8);
        }
    }
}
