//! Dense row-major tensors, generic over f32 (training) and f64 (gradient
//! checks, toy model).
//!
//! Values are immutable once wrapped in a `Tensor`; the autodiff tape clones
//! them cheaply via `Arc`. All parallel kernels assign each output element to
//! exactly one task with a fixed inner-loop order, so results are bitwise
//! identical regardless of thread count.

use std::fmt;
use std::ops::AddAssign;
use std::sync::Arc;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Element type bound for the engine.
pub trait Scalar:
    Float
    + AddAssign
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + std::iter::Sum
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense tensor: shape plus row-major data behind an `Arc`.
#[derive(Clone)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![T::zero(); numel]) }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![v; numel]) }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![], data: Arc::new(vec![v]) }
    }

    /// i.i.d. N(0, scale^2) entries, drawn in index order.
    pub fn randn(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data: Vec<T> = (0..numel)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                T::from_f64(z * scale)
            })
            .collect();
        Tensor { shape: shape.to_vec(), data: Arc::new(data) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Number of rows when viewed as 2-D (all leading dims folded).
    pub fn rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }

    /// Trailing dimension when viewed as 2-D.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn scalar_value(&self) -> T {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn get2(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape, shape),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::clone(&self.data) })
    }

    /// Abort-on-NaN policy: every engine op calls this on its output.
    pub fn ensure_finite(&self, op: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op: op.to_string() })
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn to_f64_tensor(&self) -> Tensor<f64> {
        self.map(|v| v.as_f64())
    }

    pub fn to_f32_tensor(&self) -> Tensor<f32> {
        self.map(|v| v.as_f64() as f32)
    }

    /// Byte-level equality (exact, including the shape).
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= 8 {
            write!(f, " {:?}", &self.data[..])
        } else {
            write!(f, " [{} elements]", self.numel())
        }
    }
}

// ---------------------------------------------------------------------------
// Matmul kernels. Column blocks keep the accumulator row in L1 while the
// right-hand operand streams once; each output element is produced by one
// task with a fixed summation order.
// ---------------------------------------------------------------------------

const COL_BLOCK: usize = 2048;

/// out[m,n] = a[m,k] * b[k,n]
pub fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if n >= 128 {
        out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
            let a_row = &a[i * k..(i + 1) * k];
            for block in (0..n).step_by(COL_BLOCK) {
                let be = (block + COL_BLOCK).min(n);
                let acc = &mut out_row[block..be];
                for (kk, &aik) in a_row.iter().enumerate() {
                    let b_row = &b[kk * n + block..kk * n + be];
                    for (o, &bv) in acc.iter_mut().zip(b_row) {
                        *o += aik * bv;
                    }
                }
            }
        });
    } else {
        out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
            let a_row = &a[i * k..(i + 1) * k];
            for (kk, &aik) in a_row.iter().enumerate() {
                let b_row = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += aik * bv;
                }
            }
        });
    }
}

/// out[m,n] = a[m,k] * b[n,k]^T  (rows of both operands are contiguous dots)
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            *o += dot(a_row, b_row);
        }
    });
}

/// out[m,n] = a[k,m]^T * b[k,n]
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
        for block in (0..n).step_by(COL_BLOCK) {
            let be = (block + COL_BLOCK).min(n);
            let acc = &mut out_row[block..be];
            for kk in 0..k {
                let aki = a[kk * m + i];
                let b_row = &b[kk * n + block..kk * n + be];
                for (o, &bv) in acc.iter_mut().zip(b_row) {
                    *o += aki * bv;
                }
            }
        }
    });
}

/// Fixed-order dot product with four accumulators for instruction-level
/// parallelism; the combination order is deterministic.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc0 = T::zero();
    let mut acc1 = T::zero();
    let mut acc2 = T::zero();
    let mut acc3 = T::zero();
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc0 += a[i] * b[i];
        acc1 += a[i + 1] * b[i + 1];
        acc2 += a[i + 2] * b[i + 2];
        acc3 += a[i + 3] * b[i + 3];
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    ((acc0 + acc1) + (acc2 + acc3)) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_length_mismatch() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn ensure_finite_flags_nan() {
        let t = Tensor::from_vec(&[2], vec![1.0f64, f64::NAN]).unwrap();
        assert!(matches!(t.ensure_finite("probe"), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn matmul_kernels_agree_with_naive() {
        let (m, k, n) = (3, 5, 7);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.37 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.11 - 2.0).collect();
        let mut nn = vec![0.0; m * n];
        matmul_nn(&a, &b, m, k, n, &mut nn);
        let mut naive = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    naive[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        for (x, y) in nn.iter().zip(&naive) {
            assert!((x - y).abs() < 1e-12);
        }

        // nt: b stored transposed
        let mut bt = vec![0.0; n * k];
        for kk in 0..k {
            for j in 0..n {
                bt[j * k + kk] = b[kk * n + j];
            }
        }
        let mut nt = vec![0.0; m * n];
        matmul_nt(&a, &bt, m, k, n, &mut nt);
        for (x, y) in nt.iter().zip(&naive) {
            assert!((x - y).abs() < 1e-12);
        }

        // tn: a stored transposed
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for kk in 0..k {
                at[kk * m + i] = a[i * k + kk];
            }
        }
        let mut tn = vec![0.0; m * n];
        matmul_tn(&at, &b, m, k, n, &mut tn);
        for (x, y) in tn.iter().zip(&naive) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_matmul_matches_naive() {
        // exercise the blocked path (n >= 128)
        let (m, k, n) = (4, 16, 300);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 7919) % 13) as f32 * 0.1 - 0.6).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 104729) % 17) as f32 * 0.05 - 0.4).collect();
        let mut fast = vec![0.0f32; m * n];
        matmul_nn(&a, &b, m, k, n, &mut fast);
        let mut naive = vec![0.0f32; m * n];
        for i in 0..m {
            for kk in 0..k {
                for j in 0..n {
                    naive[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        for (x, y) in fast.iter().zip(&naive) {
            assert!((x - y).abs() < 1e-4);
        }
    }
}
