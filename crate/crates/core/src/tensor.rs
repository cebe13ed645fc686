//! Dense row-major tensors and the handful of kernels the encoder needs.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

/// Element type on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating-point element type: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + Send + Sync + Default + Debug + std::iter::Sum + 'static
{
    const DTYPE: DType;

    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float to f64")
    }

    fn write_le(self, out: &mut Vec<u8>);
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Panics if `data.len()` does not match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length does not match shape {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Row `i` of a 2-d tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let cols = self.shape[self.shape.len() - 1];
        &mut self.data[i * cols..(i + 1) * cols]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for a in &mut self.data {
            *a *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64() * x.as_f64()).sum()
    }
}

/// `out[n×m] = a[n×k] · b[k×m] (+ bias[m])`.
pub fn matmul<T: Real>(a: &[T], b: &[T], bias: Option<&[T]>, n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        if let Some(bias) = bias {
            row.copy_from_slice(bias);
        }
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Backward of `y = a·b + bias`: accumulates `grad_b += aᵀ·dy`,
/// `grad_bias += Σ dy` and returns `da = dy·bᵀ`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_backward<T: Real>(
    a: &[T],
    b: &[T],
    dy: &[T],
    grad_b: &mut [T],
    grad_bias: Option<&mut [T]>,
    n: usize,
    k: usize,
    m: usize,
) -> Vec<T> {
    for i in 0..n {
        let dyr = &dy[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (g, &d) in grad_b[p * m..(p + 1) * m].iter_mut().zip(dyr) {
                *g += av * d;
            }
        }
    }
    if let Some(gb) = grad_bias {
        for i in 0..n {
            for (g, &d) in gb.iter_mut().zip(&dy[i * m..(i + 1) * m]) {
                *g += d;
            }
        }
    }
    let mut da = vec![T::zero(); n * k];
    for i in 0..n {
        let dyr = &dy[i * m..(i + 1) * m];
        for p in 0..k {
            let mut s = T::zero();
            for (&bv, &d) in b[p * m..(p + 1) * m].iter().zip(dyr) {
                s += bv * d;
            }
            da[i * k + p] = s;
        }
    }
    da
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Numerically stable softmax in f64.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, None, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
        assert_eq!(matmul(&a, &b, Some(&[1.0, -1.0]), 2, 2, 2), vec![20.0, 21.0, 44.0, 49.0]);
    }

    #[test]
    fn matmul_backward_matches_hand_derivation() {
        // y = a·b with a 1×2, b 2×1; dy = 1.
        let a = [2.0f64, 3.0];
        let b = [5.0, 7.0];
        let mut gb = [0.0; 2];
        let mut gbias = [0.0; 1];
        let da = matmul_backward(&a, &b, &[1.0], &mut gb, Some(&mut gbias), 1, 2, 1);
        assert_eq!(da, vec![5.0, 7.0]);
        assert_eq!(gb, [2.0, 3.0]);
        assert_eq!(gbias, [1.0]);
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[0.0, f64::NEG_INFINITY]);
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn cast_round_trip() {
        let t = Tensor::from_vec(&[2], vec![0.1f32, -3.5]);
        assert_eq!(t.cast::<f64>().cast::<f32>(), t);
    }
}
