//! Dense row-major tensors of `f32` or `f64`.
//!
//! Reductions ([`Tensor::dot`], [`Tensor::frobenius_sq`], [`matmul`]) use a
//! fixed left-to-right summation order so repeated runs are bit-identical.
//! Gaussian fills draw from ChaCha20 (a counter-based stream cipher RNG keyed
//! by the 64-bit seed) through `rand_distr::StandardNormal`, which is portable
//! across platforms.

use std::fmt;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Exec, Result};

/// Element type of a [`Tensor`].
pub trait Scalar: Float + Default + fmt::Debug + fmt::Display + Send + Sync + 'static + std::iter::Sum {
    const NAME: &'static str;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dimensions of a tensor: 1 to 4 positive extents.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        let invalid = |reason| Error::InvalidShape {
            dims: dims.to_vec(),
            reason,
        };
        if dims.is_empty() || dims.len() > 4 {
            return Err(invalid("rank must be 1 to 4"));
        }
        if dims.contains(&0) {
            return Err(invalid("zero-size dimension"));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= isize::MAX as usize)
            .ok_or_else(|| invalid("element count overflows"))?;
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Initial contents for [`Tensor::new`].
#[derive(Clone, Copy, Debug)]
pub enum Fill {
    Zeros,
    Constant(f64),
    Gaussian { mean: f64, std: f64, seed: u64 },
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>{:?}", T::NAME, self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: &[usize], fill: Fill) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        let data = match fill {
            Fill::Zeros => vec![T::zero(); n],
            Fill::Constant(c) => vec![T::from_f64(c); n],
            Fill::Gaussian { mean, std, seed } => {
                if !(std >= 0.0) {
                    return Err(Error::Inconsistent(format!("gaussian std must be >= 0, got {std}")));
                }
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::from_f64(mean + std * z)
                    })
                    .collect()
            }
        };
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::new(dims, Fill::Zeros)
    }

    pub fn gaussian(dims: &[usize], mean: f64, std: f64, seed: u64) -> Result<Self> {
        Self::new(dims, Fill::Gaussian { mean, std, seed })
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::shape("from_vec", dims, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    /// Tensor of the same shape as `self` filled with zeros.
    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(Error::shape("reshape", dims, self.dims()));
        }
        Ok(Tensor { shape, data: self.data })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|v| v * a)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute element.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()))
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, self.dims(), other.dims()));
        }
        Ok(())
    }

    /// Elementwise `a * x + b * y`.
    pub fn axpby(a: T, x: &Self, b: T, y: &Self) -> Result<Self> {
        x.check_same_shape(y, "axpby")?;
        Ok(Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&y.data).map(|(&xv, &yv)| a * xv + b * yv).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::axpby(T::one(), self, T::one(), other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Self::axpby(T::one(), self, -T::one(), other)
    }

    /// In-place `self += a * x`.
    pub fn add_scaled(&mut self, a: T, x: &Self) -> Result<()> {
        self.check_same_shape(x, "add_scaled")?;
        for (s, &v) in self.data.iter_mut().zip(&x.data) {
            *s = *s + a * v;
        }
        Ok(())
    }

    /// Inner product accumulated in `f64`, in index order.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(dot_f64(&self.data, &other.data))
    }

    /// Sum of squares, accumulated in `f64` in index order.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| {
            let v = v.as_f64();
            acc + v * v
        })
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (rows, cols) = self.as_matrix("transpose")?;
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..cols {
            data.extend((0..rows).map(|r| self.data[r * cols + c]));
        }
        Tensor::from_vec(&[cols, rows], data)
    }

    pub(crate) fn as_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.dims() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(op, &[0, 0], self.dims())),
        }
    }
}

pub(crate) fn dot_f64<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| acc + x.as_f64() * y.as_f64())
}

/// Dot product in the element type, in index order.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Matrix product `A · B` for `A: [m, k]`, `B: [k, n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul_with(a, b, Exec::default())
}

/// [`matmul`] under an explicit execution policy.
///
/// `C[i, j]` accumulates `A[i, k] · B[k, j]` for `k = 0, 1, ...` starting from
/// zero, regardless of policy; rows of `C` are distributed across workers.
pub fn matmul_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, exec: Exec) -> Result<Tensor<T>> {
    let (m, k) = a.as_matrix("matmul")?;
    let (k2, n) = b.as_matrix("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", &[k, n], &[k2, n]));
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.as_slice(), b.as_slice());
    exec.for_each_chunk(&mut out, n, |i, row| {
        for (kk, &aik) in ad[i * k..(i + 1) * k].iter().enumerate() {
            let brow = &bd[kk * n..(kk + 1) * n];
            for (c, &bv) in row.iter_mut().zip(brow) {
                *c = *c + aik * bv;
            }
        }
    });
    Tensor::from_vec(&[m, n], out)
}
