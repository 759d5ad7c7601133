//! Minimal channels-last layers with explicit backward passes.
//!
//! Activations are flat `f64` buffers. 1D layers use `[batch][time][channel]`
//! and 2D layers use `[batch][row][col][channel]`, so every layer's inner
//! loop runs over contiguous channels and maps onto a single gemm call.

mod adam;
mod batchnorm;
mod conv1d;
pub(crate) mod conv2d;

pub use adam::Adam;
pub use batchnorm::{BatchNorm, BnCache};
pub use conv1d::Conv1d;
pub use conv2d::{Conv2d, ConvTranspose2d};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Whether a forward pass uses batch statistics and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics (running ones updated) and dropout.
    Train,
    /// Frozen running statistics with dropout.
    TrainFrozenStats,
    /// Running statistics, no dropout.
    Infer,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(n: usize) -> Self {
        Self {
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn filled(n: usize, v: f64) -> Self {
        Self {
            value: vec![v; n],
            grad: vec![0.0; n],
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            value: (0..n).map(|_| dist.sample(rng)).collect(),
            grad: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Strided view used by [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct Strided<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Strided<'a> {
    pub fn rows(data: &'a [f64], offset: usize, row_stride: usize) -> Self {
        Self {
            data,
            offset,
            rs: row_stride,
            cs: 1,
        }
    }

    /// The transpose of a row-major block.
    pub fn cols(data: &'a [f64], offset: usize, row_stride: usize) -> Self {
        Self {
            data,
            offset,
            rs: 1,
            cs: row_stride,
        }
    }

    fn check(&self, r: usize, c: usize) {
        if r > 0 && c > 0 {
            let last = self.offset + (r - 1) * self.rs + (c - 1) * self.cs;
            assert!(last < self.data.len(), "gemm operand out of bounds");
        }
    }
}

/// `C[m x n] = alpha * A[m x k] * B[k x n] + beta * C`, C row-major with
/// row stride `rsc` starting at `c_off`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: Strided<'_>,
    b: Strided<'_>,
    beta: f64,
    c: &mut [f64],
    c_off: usize,
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    let last = c_off + (m - 1) * rsc + n - 1;
    assert!(last < c.len(), "gemm output out of bounds");
    // SAFETY: every index touched by dgemm lies within the bounds checked above,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr().add(c_off),
            rsc as isize,
            1,
        );
    }
}

/// In-place ReLU followed by inverted dropout. Returns the multiplier mask
/// used by the backward pass (`0`, `1`, or `1 / (1 - p)`).
pub fn relu_dropout<R: Rng + ?Sized>(x: &mut [f64], p: f64, rng: Option<&mut R>) -> Vec<f64> {
    let mut mask = vec![0.0; x.len()];
    match rng.filter(|_| p > 0.0) {
        Some(rng) => {
            let keep = 1.0 / (1.0 - p);
            for (v, m) in x.iter_mut().zip(mask.iter_mut()) {
                let dropped = rng.random::<f64>() < p;
                *m = if *v > 0.0 && !dropped { keep } else { 0.0 };
                *v *= *m;
            }
        }
        None => {
            for (v, m) in x.iter_mut().zip(mask.iter_mut()) {
                if *v > 0.0 {
                    *m = 1.0;
                } else {
                    *v = 0.0;
                }
            }
        }
    }
    mask
}

pub fn apply_mask(dy: &mut [f64], mask: &[f64]) {
    dy.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
}

/// Serializes parameters as little-endian `f64` in the given order.
pub fn write_blob<'a>(tensors: impl IntoIterator<Item = &'a [f64]>) -> Vec<u8> {
    let mut out = Vec::new();
    for t in tensors {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Fills tensors in order from a blob produced by [`write_blob`].
pub fn read_blob<'a>(
    blob: &[u8],
    tensors: impl IntoIterator<Item = &'a mut Vec<f64>>,
) -> Result<(), String> {
    let mut chunks = blob.chunks_exact(8);
    for t in tensors {
        for v in t.iter_mut() {
            let c = chunks.next().ok_or("weight blob is too short")?;
            *v = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        }
    }
    if chunks.next().is_some() || !chunks.remainder().is_empty() {
        return Err("weight blob has trailing bytes".into());
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    /// Central-difference check of an analytic gradient; returns the worst
    /// relative error `|a - n| / max(|a|, |n|, floor)`.
    pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max)
    }
}
