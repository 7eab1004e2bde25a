//! Dense row-major tensors and the numeric kernels the rest of the crate is
//! built on.
//!
//! Everything here is a pure function of its inputs. Shape violations come
//! back as [`Error::Shape`]; nothing in this module panics on user-supplied
//! shapes.

mod conv;
mod kron;
mod pool;
pub mod reference;
mod scalar;

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};

pub use conv::{conv2d, conv2d_backward, conv_output_extent, Conv2dGrads, ConvGeometry};
pub use kron::kron;
pub use pool::{global_avg_pool, max_pool2x2, upsample_nearest2x};
pub use scalar::{DType, Scalar};

/// Elementwise operator selector for [`Tensor::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

/// Right-hand operand of an elementwise operation.
pub enum Operand<'a, T> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Internal constructor for shapes already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor::from_parts(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn scalar(value: T) -> Self {
        Tensor::from_parts(Vec::new(), vec![value])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Builds a tensor from a shape and an `f64` buffer, converting entries.
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], low: f64, high: f64, rng: &mut R) -> Self {
        let dist = Uniform::new(low, high).expect("uniform bounds must satisfy low < high");
        let data = (0..numel(shape)).map(|_| T::of(dist.sample(rng))).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                T::of(v)
            })
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a rank-0 (or single-element) tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!(
                "expected rank-4 (N,C,H,W), got {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [m, n] => Ok((m, n)),
            _ => Err(Error::shape(format!(
                "expected rank-2 matrix, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.clone().into_reshape(shape)
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) || numel(shape) != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    fn check_same(&self, other: &Tensor<T>, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same(other, "zip_map")?;
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// Entrywise `op` against another tensor of identical shape or a scalar.
    pub fn elementwise(&self, op: ElementwiseOp, rhs: Operand<'_, T>) -> Result<Self> {
        let f = match op {
            ElementwiseOp::Add => |a: T, b: T| a + b,
            ElementwiseOp::Sub => |a: T, b: T| a - b,
            ElementwiseOp::Mul => |a: T, b: T| a * b,
        };
        match rhs {
            Operand::Tensor(t) => self.zip_map(t, f),
            Operand::Scalar(s) => Ok(self.map(|a| f(a, s))),
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|a| a * factor)
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        self.check_same(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Standard matrix product of `(m,k)` and `(k,p)`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, p) = other.dims2()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * p];
        T::gemm(
            m,
            k,
            p,
            T::one(),
            &self.data,
            [k, 1],
            &other.data,
            [p, 1],
            T::zero(),
            &mut out,
            [p, 1],
        );
        Ok(Tensor::from_parts(vec![m, p], out))
    }

    pub fn transpose2d(&self) -> Result<Self> {
        let (m, n) = self.dims2()?;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_parts(vec![n, m], out))
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let (n, _, h, w) = first.dims4()?;
        let mut total_c = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(format!(
                    "concat_channels: {:?} incompatible with {:?}",
                    p.shape, first.shape
                )));
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for p in parts {
                let pc = p.shape[1];
                out.extend_from_slice(&p.data[b * pc * plane..(b + 1) * pc * plane]);
            }
        }
        Ok(Tensor::from_parts(vec![n, total_c, h, w], out))
    }

    /// Channels `start..start+len` of a rank-4 tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if len == 0 || start + len > c {
            return Err(Error::shape(format!(
                "channel slice {start}..{} out of range for {c} channels",
                start + len
            )));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Tensor::from_parts(vec![n, len, h, w], out))
    }

    /// Selects index `i` along axis 0, dropping that axis.
    pub fn index0(&self, i: usize) -> Result<Self> {
        let lead = *self
            .shape
            .first()
            .ok_or_else(|| Error::shape("index0 on a scalar"))?;
        if i >= lead {
            return Err(Error::shape(format!("index {i} out of range for {lead}")));
        }
        let inner: Vec<usize> = self.shape[1..].to_vec();
        let len = numel(&inner);
        Ok(Tensor::from_parts(
            inner,
            self.data[i * len..(i + 1) * len].to_vec(),
        ))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("stack of zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            first.check_same(p, "stack")?;
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor::from_parts(shape, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn constructor_rejects_inconsistent_shapes() {
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(&[0, 2], vec![]).is_err());
        let s = Tensor::<f32>::new(&[], vec![3.0]).unwrap();
        assert_eq!(s.rank(), 0);
        assert_eq!(s.item().unwrap(), 3.0);
    }

    #[test]
    fn elementwise_examples() {
        let x = t(&[2], &[1.0, 2.0]);
        let y = t(&[2], &[3.0, 4.0]);
        assert_eq!(
            x.elementwise(ElementwiseOp::Add, Operand::Tensor(&y)).unwrap().data(),
            &[4.0, 6.0]
        );
        let z = Tensor::zeros_like(&x);
        assert_eq!(x.add(&z).unwrap(), x);
        assert_eq!(x.scale(1.0), x);
        assert_eq!(
            x.elementwise(ElementwiseOp::Mul, Operand::Scalar(3.0)).unwrap().data(),
            &[3.0, 6.0]
        );
        assert!(x.add(&t(&[1, 2], &[1.0, 1.0])).is_err());
    }

    #[test]
    fn matmul_examples() {
        let i2 = Tensor::<f64>::eye(2);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(i2.matmul(&m).unwrap(), m);
        let a = t(&[1, 2], &[1.0, 2.0]);
        let b = t(&[2, 1], &[3.0, 4.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
        let mut rng = crate::rng::seeded(1);
        let r = Tensor::<f64>::randn(&[3, 4], &mut rng);
        let zero = Tensor::<f64>::zeros(&[2, 3]).matmul(&r).unwrap();
        assert_eq!(zero, Tensor::zeros(&[2, 4]));
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn matmul_rectangular_against_loops() {
        let mut rng = crate::rng::seeded(7);
        let a = Tensor::<f64>::randn(&[5, 7], &mut rng);
        let b = Tensor::<f64>::randn(&[7, 3], &mut rng);
        let c = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..7 {
                    s += a.data()[i * 7 + k] * b.data()[k * 3 + j];
                }
                assert!((c.data()[i * 3 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_concat_and_slice_are_inverse() {
        let mut rng = crate::rng::seeded(3);
        let a = Tensor::<f32>::randn(&[2, 3, 2, 2], &mut rng);
        let b = Tensor::<f32>::randn(&[2, 1, 2, 2], &mut rng);
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 4, 2, 2]);
        assert_eq!(c.slice_channels(0, 3).unwrap(), a);
        assert_eq!(c.slice_channels(3, 1).unwrap(), b);
        assert!(c.slice_channels(3, 2).is_err());
    }
}
