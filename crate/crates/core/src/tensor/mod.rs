//! Dense row-major tensors and the primitives built on them.

mod scalar;
mod shape;

use std::fmt;

use rand::Rng as _;
use rand_distr::StandardNormal;

pub use scalar::{DType, Scalar};
pub use shape::Shape;
pub(crate) use shape::StridedWalk;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Max,
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Max => "max",
        }
    }

    #[inline]
    fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            // ties resolve to the first operand
            BinaryOp::Max => {
                if b > a {
                    b
                } else {
                    a
                }
            }
        }
    }
}

/// Dense n-dimensional array in contiguous row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor<{:?}>{} [", T::DTYPE, self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(shape)?;
        if shape.numel() != data.len() {
            return Err(Error::shape(format!(
                "shape {shape} needs {} elements, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = Shape::new(shape)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Tensor::from_parts(self.shape.clone(), vec![T::zero(); self.data.len()])
    }

    /// Standard-normal draws scaled by `std`.
    pub fn randn(shape: impl Into<Vec<usize>>, std: T, rng: &mut Rng) -> Result<Self> {
        let shape = Shape::new(shape)?;
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                T::from_f64_lossy(z) * std
            })
            .collect();
        Ok(Tensor { shape, data })
    }

    /// Uniform draws in `[low, high)`.
    pub fn uniform(shape: impl Into<Vec<usize>>, low: T, high: T, rng: &mut Rng) -> Result<Self> {
        let shape = Shape::new(shape)?;
        let (lo, hi) = (low.to_f64_lossy(), high.to_f64_lossy());
        let data = (0..shape.numel()).map(|_| T::from_f64_lossy(rng.random_range(lo..hi))).collect();
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Contract(format!("item() on tensor of shape {}", self.shape))),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(shape)?;
        if shape.numel() != self.numel() {
            return Err(Error::shape(format!("cannot reshape {} into {shape}", self.shape)));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(Error::shape(format!("permutation {perm:?} for rank {rank}")));
        }
        for &p in perm {
            if p >= rank {
                return Err(Error::Axis { axis: p, rank });
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::shape(format!("repeated axis in permutation {perm:?}")));
            }
        }
        let dims: Vec<usize> = perm.iter().map(|&p| self.dims()[p]).collect();
        let src_strides = self.shape.strides();
        let gathered: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let data = StridedWalk::new(&dims, [&gathered]).map(|[src]| self.data[src]).collect();
        Ok(Tensor::from_parts(Shape(dims), data))
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::shape(format!("transpose of rank-{} tensor", self.rank())));
        }
        self.permute(&[1, 0])
    }

    /// Elementwise `op` on broadcast-expanded operands.
    pub fn broadcast_binary(&self, other: &Tensor<T>, op: BinaryOp) -> Result<Self> {
        self.zip_with(other, op.name(), |a, b| op.apply(a, b))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.broadcast_binary(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.broadcast_binary(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        self.broadcast_binary(other, BinaryOp::Mul)
    }

    pub fn maximum(&self, other: &Tensor<T>) -> Result<Self> {
        self.broadcast_binary(other, BinaryOp::Max)
    }

    pub(crate) fn zip_with(&self, other: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor::from_parts(self.shape.clone(), data));
        }
        let out = self.shape.broadcast(&other.shape).ok_or_else(|| Error::Broadcast {
            op,
            lhs: self.dims().to_vec(),
            rhs: other.dims().to_vec(),
        })?;
        let sa = self.shape.broadcast_strides(&out);
        let sb = other.shape.broadcast_strides(&out);
        let data = StridedWalk::new(out.dims(), [&sa, &sb])
            .map(|[ia, ib]| f(self.data[ia], other.data[ib]))
            .collect();
        Ok(Tensor::from_parts(out, data))
    }

    /// Materializes `self` expanded to `target` by broadcasting.
    pub fn broadcast_to(&self, target: &Shape) -> Result<Self> {
        if !self.shape.expands_to(target) {
            return Err(Error::Broadcast {
                op: "broadcast_to",
                lhs: self.dims().to_vec(),
                rhs: target.dims().to_vec(),
            });
        }
        let s = self.shape.broadcast_strides(target);
        let data = StridedWalk::new(target.dims(), [&s]).map(|[i]| self.data[i]).collect();
        Ok(Tensor::from_parts(target.clone(), data))
    }

    /// Sums `self` down to `target`, the inverse of broadcasting `target`
    /// up to `self.shape()`.
    pub fn sum_to(&self, target: &Shape) -> Result<Self> {
        if &self.shape == target {
            return Ok(self.clone());
        }
        if !target.expands_to(&self.shape) {
            return Err(Error::Broadcast {
                op: "sum_to",
                lhs: self.dims().to_vec(),
                rhs: target.dims().to_vec(),
            });
        }
        let src = self.shape.strides();
        let dst = target.broadcast_strides(&self.shape);
        let mut out = vec![T::zero(); target.numel()];
        for [i, o] in StridedWalk::new(self.dims(), [&src, &dst]) {
            out[o] += self.data[i];
        }
        Ok(Tensor::from_parts(target.clone(), out))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn exp(&self) -> Self {
        self.map(T::exp)
    }

    pub fn sqrt(&self) -> Self {
        self.map(T::sqrt)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn add_scalar(&self, offset: T) -> Self {
        self.map(|v| v + offset)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Shape after reducing `axes`, plus the validated axis mask.
    fn reduced_shape(&self, axes: &[usize]) -> Result<(Vec<bool>, Vec<usize>)> {
        let rank = self.rank();
        let mut mask = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(Error::Axis { axis: a, rank });
            }
            mask[a] = true;
        }
        let kept = self.dims().iter().zip(&mask).map(|(&d, &m)| if m { 1 } else { d }).collect();
        Ok((mask, kept))
    }

    pub fn reduce_sum(&self, axes: &[usize], keep_dims: bool) -> Result<Self> {
        let (mask, kept) = self.reduced_shape(axes)?;
        let kept = Shape(kept);
        let summed = self.sum_to(&kept)?;
        if keep_dims {
            return Ok(summed);
        }
        let squeezed: Vec<usize> = kept.dims().iter().zip(&mask).filter(|(_, &m)| !m).map(|(&d, _)| d).collect();
        Ok(Tensor::from_parts(Shape(squeezed), summed.data))
    }

    /// Arithmetic mean over `axes`; reduced extents become 1 when
    /// `keep_dims`, otherwise they are dropped.
    pub fn reduce_mean(&self, axes: &[usize], keep_dims: bool) -> Result<Self> {
        let (mask, _) = self.reduced_shape(axes)?;
        let count: usize = self.dims().iter().zip(&mask).filter(|(_, &m)| m).map(|(&d, _)| d).product();
        let inv = T::one() / T::from_usize(count).expect("count fits");
        Ok(self.reduce_sum(axes, keep_dims)?.scale(inv))
    }

    /// Index of the largest element along `axis` (first on ties), laid out
    /// in row-major order over the remaining axes.
    pub fn argmax(&self, axis: usize) -> Result<Vec<usize>> {
        let rank = self.rank();
        if axis >= rank {
            return Err(Error::Axis { axis, rank });
        }
        let len = self.dims()[axis];
        let inner: usize = self.dims()[axis + 1..].iter().product();
        let outer: usize = self.dims()[..axis].iter().product();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = 0;
                for j in 1..len {
                    if self.data[base + j * inner] > self.data[base + best * inner] {
                        best = j;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let rank = self.rank();
        if axis >= rank {
            return Err(Error::Axis { axis, rank });
        }
        let extent = self.dims()[axis];
        if len == 0 || start + len > extent {
            return Err(Error::shape(format!("slice {start}..{} out of extent {extent}", start + len)));
        }
        let inner: usize = self.dims()[axis + 1..].iter().product();
        let outer: usize = self.dims()[..axis].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * extent + start) * inner;
            data.extend_from_slice(&self.data[from..from + len * inner]);
        }
        let mut dims = self.dims().to_vec();
        dims[axis] = len;
        Ok(Tensor::from_parts(Shape(dims), data))
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::Axis { axis, rank });
        }
        for p in parts {
            let same = p.rank() == rank && p.dims().iter().zip(first.dims()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(Error::Broadcast {
                    op: "concat",
                    lhs: first.dims().to_vec(),
                    rhs: p.dims().to_vec(),
                });
            }
        }
        let inner: usize = first.dims()[axis + 1..].iter().product();
        let outer: usize = first.dims()[..axis].iter().product();
        let total: usize = parts.iter().map(|p| p.dims()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.dims()[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut dims = first.dims().to_vec();
        dims[axis] = total;
        Ok(Tensor::from_parts(Shape(dims), data))
    }

    /// Rank-2 matrix product.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.dims()[1] != other.dims()[0] {
            return Err(Error::Broadcast {
                op: "matmul",
                lhs: self.dims().to_vec(),
                rhs: other.dims().to_vec(),
            });
        }
        let (m, k, n) = (self.dims()[0], self.dims()[1], other.dims()[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            (k, 1),
            &other.data,
            (n, 1),
            T::zero(),
            &mut out,
            (n, 1),
        );
        Ok(Tensor::from_parts(Shape(vec![m, n]), out))
    }

    /// In-place `self += alpha * other` for equal shapes.
    pub fn axpy(&mut self, alpha: T, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Broadcast {
                op: "axpy",
                lhs: self.dims().to_vec(),
                rhs: other.dims().to_vec(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zeros_follow_shape() {
        let z = Tensor::<f64>::zeros([2, 2]).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        assert_eq!(Tensor::<f64>::zeros([1]).unwrap().data(), &[0.0]);
        assert_eq!(Tensor::<f32>::zeros([3, 1, 2]).unwrap().numel(), 6);
        assert!(matches!(Tensor::<f32>::zeros([2, 0]), Err(Error::Shape(_))));
    }

    #[test]
    fn broadcast_add_expands_both_sides() {
        let a = Tensor::<f64>::new([2, 1, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::new([1, 1, 2], vec![10.0, 20.0]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.dims(), &[2, 1, 2]);
        assert_eq!(c.data(), &[11.0, 21.0, 12.0, 22.0]);
    }

    #[test]
    fn mul_by_zeros_and_max() {
        let mut r = rng::seeded(3);
        let x = Tensor::<f64>::randn([3, 4], 1.0, &mut r).unwrap();
        let z = x.mul(&x.zeros_like()).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let a = Tensor::<f64>::new([2], vec![1.0, 5.0]).unwrap();
        let b = Tensor::<f64>::new([2], vec![3.0, 2.0]).unwrap();
        assert_eq!(a.maximum(&b).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn incompatible_broadcast_reports_both_shapes() {
        let a = Tensor::<f32>::zeros([2, 3]).unwrap();
        let b = Tensor::<f32>::zeros([4]).unwrap();
        match a.add(&b) {
            Err(Error::Broadcast { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matmul_examples() {
        let a = Tensor::<f64>::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Tensor::<f64>::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&eye).unwrap(), a);
        let b = Tensor::<f64>::new([2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
        let zrow = Tensor::<f64>::zeros([1, 2]).unwrap();
        assert_eq!(zrow.matmul(&b).unwrap().data(), &[0.0, 0.0]);
        assert!(a.matmul(&Tensor::zeros([3, 2]).unwrap()).is_err());
    }

    #[test]
    fn reduce_mean_examples() {
        let a = Tensor::<f64>::new([2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let m = a.reduce_mean(&[0, 1], false).unwrap();
        assert_eq!(m.rank(), 0);
        assert_eq!(m.item().unwrap(), 4.0);
        let c = Tensor::<f64>::full([3, 5], 2.5).unwrap();
        assert!(c.reduce_mean(&[1], false).unwrap().data().iter().all(|&v| v == 2.5));
        let f = Tensor::<f32>::zeros([4, 3, 5]).unwrap();
        assert_eq!(f.reduce_mean(&[1, 2], true).unwrap().dims(), &[4, 1, 1]);
        assert!(matches!(f.reduce_mean(&[3], true), Err(Error::Axis { axis: 3, rank: 3 })));
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let z = Tensor::<f64>::zeros([1]).unwrap().sigmoid();
        assert_eq!(z.data()[0], 0.5);
        let z32 = Tensor::<f32>::zeros([1]).unwrap().sigmoid();
        assert_eq!(z32.data()[0], 0.5);
    }

    #[test]
    fn slice_concat_argmax() {
        let a = Tensor::<f64>::new([2, 3], vec![1.0, 9.0, 3.0, 7.0, 2.0, 7.0]).unwrap();
        assert_eq!(a.argmax(1).unwrap(), vec![1, 0]);
        assert_eq!(a.argmax(0).unwrap(), vec![1, 0, 1]);
        let s = a.slice(1, 1, 2).unwrap();
        assert_eq!(s.data(), &[9.0, 3.0, 2.0, 7.0]);
        let head = a.slice(1, 0, 1).unwrap();
        assert_eq!(Tensor::concat(&[&head, &s], 1).unwrap(), a);
        assert!(a.slice(1, 2, 2).is_err());
    }

    #[test]
    fn permute_moves_axes() {
        let a = Tensor::<f64>::new([2, 3], (0..6).map(f64::from).collect()).unwrap();
        let t = a.t().unwrap();
        assert_eq!(t.dims(), &[3, 2]);
        assert_eq!(t.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(a.permute(&[0, 0]).is_err());
    }

    #[test]
    fn sum_to_inverts_broadcast() {
        let g = Tensor::<f64>::ones([2, 3]).unwrap();
        let col = g.sum_to(&Shape::new([2, 1]).unwrap()).unwrap();
        assert_eq!(col.data(), &[3.0, 3.0]);
        let row = g.sum_to(&Shape::new([3]).unwrap()).unwrap();
        assert_eq!(row.data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn randn_is_reproducible() {
        let a = Tensor::<f32>::randn([16], 1.0, &mut rng::seeded(11)).unwrap();
        let b = Tensor::<f32>::randn([16], 1.0, &mut rng::seeded(11)).unwrap();
        let c = Tensor::<f32>::randn([16], 1.0, &mut rng::seeded(12)).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }
}
