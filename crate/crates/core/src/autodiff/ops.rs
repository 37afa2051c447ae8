//! Differentiable counterparts of the tensor primitives.

use std::rc::Rc;

use super::tape::Var;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

fn need<T: Scalar>(flags: &[bool], i: usize, f: impl FnOnce() -> Result<Tensor<T>>) -> Result<Option<Tensor<T>>> {
    if flags[i] {
        f().map(Some)
    } else {
        Ok(None)
    }
}

/// `g · bᵀ` without materializing the transpose.
pub(crate) fn matmul_nt<T: Scalar>(g: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (g.dims()[0], g.dims()[1]);
    let k = b.dims()[0];
    let mut out = vec![T::zero(); m * k];
    T::gemm(m, n, k, T::one(), g.data(), (n, 1), b.data(), (1, n), T::zero(), &mut out, (k, 1));
    Tensor::new([m, k], out).expect("matmul_nt shape")
}

/// `aᵀ · g` without materializing the transpose.
pub(crate) fn matmul_tn<T: Scalar>(a: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let n = g.dims()[1];
    let mut out = vec![T::zero(); k * n];
    T::gemm(k, m, n, T::one(), a.data(), (1, k), g.data(), (n, 1), T::zero(), &mut out, (n, 1));
    Tensor::new([k, n], out).expect("matmul_tn shape")
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let value = self.value().add(other.value())?;
        let (sa, sb) = (self.value().shape().clone(), other.value().shape().clone());
        Ok(self.tape().op(value, &[self, other], move |g, needs| {
            Ok(vec![need(needs, 0, || g.sum_to(&sa))?, need(needs, 1, || g.sum_to(&sb))?])
        }))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let value = self.value().sub(other.value())?;
        let (sa, sb) = (self.value().shape().clone(), other.value().shape().clone());
        Ok(self.tape().op(value, &[self, other], move |g, needs| {
            Ok(vec![
                need(needs, 0, || g.sum_to(&sa))?,
                need(needs, 1, || Ok(g.sum_to(&sb)?.scale(-T::one())))?,
            ])
        }))
    }

    /// Elementwise product; each input receives the upstream gradient
    /// scaled by the other input.
    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let value = self.value().mul(other.value())?;
        let (a, b) = (self.value_rc(), other.value_rc());
        Ok(self.tape().op(value, &[self, other], move |g, needs| {
            Ok(vec![
                need(needs, 0, || g.mul(&b)?.sum_to(a.shape()))?,
                need(needs, 1, || g.mul(&a)?.sum_to(b.shape()))?,
            ])
        }))
    }

    /// Elementwise maximum; the gradient goes only to the larger input,
    /// and to `self` on exact ties.
    pub fn maximum(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let value = self.value().maximum(other.value())?;
        let (a, b) = (self.value_rc(), other.value_rc());
        Ok(self.tape().op(value, &[self, other], move |g, needs| {
            let to_first = a.zip_with(&b, "max", |x, y| if y > x { T::zero() } else { T::one() })?;
            Ok(vec![
                need(needs, 0, || g.mul(&to_first)?.sum_to(a.shape()))?,
                need(needs, 1, || g.mul(&to_first.map(|m| T::one() - m))?.sum_to(b.shape()))?,
            ])
        }))
    }

    pub fn scale(&self, factor: T) -> Var<'t, T> {
        self.tape()
            .op(self.value().scale(factor), &[self], move |g, _| Ok(vec![Some(g.scale(factor))]))
    }

    pub fn add_scalar(&self, offset: T) -> Var<'t, T> {
        self.tape()
            .op(self.value().add_scalar(offset), &[self], |g, _| Ok(vec![Some(g.clone())]))
    }

    pub fn relu(&self) -> Var<'t, T> {
        let x = self.value_rc();
        self.tape().op(self.value().relu(), &[self], move |g, _| {
            let masked = g.zip_with(&x, "relu", |g, x| if x > T::zero() { g } else { T::zero() })?;
            Ok(vec![Some(masked)])
        })
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        let out = Rc::new(self.value().sigmoid());
        let s = Rc::clone(&out);
        self.tape().op(out, &[self], move |g, _| {
            Ok(vec![Some(g.zip_with(&s, "sigmoid", |g, s| g * s * (T::one() - s))?)])
        })
    }

    pub fn exp(&self) -> Var<'t, T> {
        let out = Rc::new(self.value().exp());
        let e = Rc::clone(&out);
        self.tape().op(out, &[self], move |g, _| Ok(vec![Some(g.mul(&e)?)]))
    }

    pub fn sqrt(&self) -> Var<'t, T> {
        let out = Rc::new(self.value().sqrt());
        let r = Rc::clone(&out);
        let half = T::from_f64_lossy(0.5);
        self.tape().op(out, &[self], move |g, _| {
            Ok(vec![Some(g.zip_with(&r, "sqrt", |g, r| g * half / r)?)])
        })
    }

    /// Sum of all elements, as a rank-0 value.
    pub fn sum(&self) -> Var<'t, T> {
        let shape = self.value().shape().clone();
        self.tape().op(Tensor::scalar(self.value().sum()), &[self], move |g, _| {
            let g = g.item()?;
            Ok(vec![Some(Tensor::full(shape.dims().to_vec(), g)?)])
        })
    }

    pub fn mean(&self, axes: &[usize], keep_dims: bool) -> Result<Var<'t, T>> {
        let value = self.value().reduce_mean(axes, keep_dims)?;
        let input = self.value().shape().clone();
        let kept: Vec<usize> = input
            .dims()
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let count = input.numel() / kept.iter().product::<usize>();
        let inv = T::one() / T::from_usize(count).expect("count fits");
        Ok(self.tape().op(value, &[self], move |g, _| {
            let g = g.reshape(kept.clone())?.scale(inv);
            Ok(vec![Some(g.broadcast_to(&input)?)])
        }))
    }

    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let value = self.value().reshape(dims)?;
        let original = self.value().dims().to_vec();
        Ok(self
            .tape()
            .op(value, &[self], move |g, _| Ok(vec![Some(g.reshape(original.clone())?)])))
    }

    /// Expands to `target` by broadcasting; the gradient is summed back.
    pub fn broadcast_to(&self, target: &Shape) -> Result<Var<'t, T>> {
        let value = self.value().broadcast_to(target)?;
        let original = self.value().shape().clone();
        Ok(self.tape().op(value, &[self], move |g, _| Ok(vec![Some(g.sum_to(&original)?)])))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t, T>> {
        let value = self.value().permute(perm)?;
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(self.tape().op(value, &[self], move |g, _| Ok(vec![Some(g.permute(&inverse)?)])))
    }

    pub fn t(&self) -> Result<Var<'t, T>> {
        self.permute(&[1, 0])
    }

    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let value = self.value().matmul(other.value())?;
        let (a, b) = (self.value_rc(), other.value_rc());
        Ok(self.tape().op(value, &[self, other], move |g, needs| {
            Ok(vec![
                need(needs, 0, || Ok(matmul_nt(g, &b)))?,
                need(needs, 1, || Ok(matmul_tn(&a, g)))?,
            ])
        }))
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against class labels.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Var<'t, T>> {
        let logits = self.value();
        if logits.rank() != 2 || logits.dims()[0] != labels.len() {
            return Err(Error::shape(format!(
                "cross-entropy of logits {} against {} labels",
                logits.shape(),
                labels.len()
            )));
        }
        let (n, k) = (logits.dims()[0], logits.dims()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Contract(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for (row, (x, p)) in logits.data().chunks(k).zip(probs.chunks_mut(k)).enumerate() {
            let max = x.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for (pj, &xj) in p.iter_mut().zip(x) {
                *pj = (xj - max).exp();
                total += *pj;
            }
            for pj in p.iter_mut() {
                *pj = *pj / total;
            }
            loss += total.ln() + max - x[labels[row]];
        }
        let inv_n = T::one() / T::from_usize(n).expect("batch fits");
        let labels = labels.to_vec();
        Ok(self.tape().op(Tensor::scalar(loss * inv_n), &[self], move |g, _| {
            let scale = g.item()? * inv_n;
            let mut grad = probs.clone();
            for (row, &label) in labels.iter().enumerate() {
                grad[row * k + label] -= T::one();
            }
            grad.iter_mut().for_each(|v| *v *= scale);
            Ok(vec![Some(Tensor::new([n, k], grad)?)])
        }))
    }
}
