//! Dense 4D tensor over (channels, time, height, width), row-major.

use crate::error::{Error, Result};
use crate::ops::Scalar;

/// Owned dense tensor with layout `data[((c*T + t)*H + h)*W + w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<S> {
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor4<S> {
    pub fn zeros(c: usize, t: usize, h: usize, w: usize) -> Self {
        Tensor4 { c, t, h, w, data: vec![S::zero(); c * t * h * w] }
    }

    pub fn from_vec(c: usize, t: usize, h: usize, w: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != c * t * h * w {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match {}x{}x{}x{}",
                data.len(),
                c,
                t,
                h,
                w
            )));
        }
        Ok(Tensor4 { c, t, h, w, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Spatial cell count per channel.
    pub fn cell_count(&self) -> usize {
        self.t * self.h * self.w
    }

    #[inline]
    pub fn idx(&self, c: usize, t: usize, h: usize, w: usize) -> usize {
        ((c * self.t + t) * self.h + h) * self.w + w
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, h: usize, w: usize) -> S {
        self.data[self.idx(c, t, h, w)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, h: usize, w: usize, v: S) {
        let i = self.idx(c, t, h, w);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.c == other.c && self.t == other.t && self.h == other.h && self.w == other.w
    }

    /// Per-channel mean over all spatial cells.
    pub fn channel_means(&self) -> Vec<S> {
        let cells = S::from_usize(self.cell_count());
        let n = self.cell_count();
        (0..self.c).map(|c| self.data[c * n..(c + 1) * n].iter().copied().sum::<S>() / cells).collect()
    }

    /// Per-channel max and the flat cell index where it occurs (first occurrence).
    pub fn channel_max(&self) -> (Vec<S>, Vec<usize>) {
        let n = self.cell_count();
        let mut vals = Vec::with_capacity(self.c);
        let mut idxs = Vec::with_capacity(self.c);
        for c in 0..self.c {
            let slice = &self.data[c * n..(c + 1) * n];
            let mut best = slice[0];
            let mut best_i = 0;
            for (i, &v) in slice.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            vals.push(best);
            idxs.push(best_i);
        }
        (vals, idxs)
    }

    pub fn scale(&mut self, s: S) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("add_assign shape mismatch".into()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn map_to_f64(&self) -> Tensor4<f64> {
        Tensor4 {
            c: self.c,
            t: self.t,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| v.as_f64()).collect(),
        }
    }
}
