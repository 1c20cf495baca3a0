//! Elementwise, reduction and shape ops.

use super::{numel, OpKind, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_same(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn unary(
        &self,
        kind: OpKind,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Tensor<T> {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(kind, self.shape().to_vec(), data, vec![self.clone()], move |a| {
            let x = a.inputs[0].data();
            let g = x
                .iter()
                .zip(a.output)
                .zip(a.grad)
                .map(|((&x, &y), &g)| g * df(x, y))
                .collect();
            vec![Some(g)]
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            OpKind::Relu,
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s = T::of(slope);
        self.unary(
            OpKind::LeakyRelu,
            move |x| if x > T::zero() { x } else { x * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(OpKind::Tanh, |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(
            OpKind::Sigmoid,
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor<T> {
        self.unary(
            OpKind::Softplus,
            |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| T::one() / (T::one() + (-x).exp()),
        )
    }

    pub fn abs(&self) -> Tensor<T> {
        self.unary(OpKind::Abs, |x| x.abs(), |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Natural log. Rejects non-positive inputs; clamp first.
    pub fn log(&self) -> Result<Tensor<T>> {
        if let Some(bad) = self.data().iter().find(|&&x| !(x > T::zero())) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(OpKind::Log, |x| x.ln(), |x, _| T::one() / x))
    }

    /// Square root. Rejects non-positive inputs, where the derivative blows up.
    pub fn sqrt(&self) -> Result<Tensor<T>> {
        if let Some(bad) = self.data().iter().find(|&&x| !(x > T::zero())) {
            return Err(Error::Domain {
                op: "sqrt",
                msg: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(OpKind::Sqrt, |x| x.sqrt(), |_, y| T::of(0.5) / y))
    }

    /// Gradient passes where `min <= x <= max`.
    pub fn clamp(&self, min: f64, max: f64) -> Tensor<T> {
        let (lo, hi) = (T::of(min), T::of(max));
        self.unary(
            OpKind::Clamp,
            move |x| x.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
        )
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        let s = T::of(s);
        self.unary(OpKind::ScalarMul, move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::of(s);
        self.unary(OpKind::AddScalar, move |x| x + s, |_, _| T::one())
    }

    fn binary(
        &self,
        other: &Tensor<T>,
        kind: OpKind,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        df: impl Fn(T, T, T) -> (T, T) + 'static,
    ) -> Result<Tensor<T>> {
        check_same(name, self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_op(
            kind,
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move |a| {
                let (x, y) = (a.inputs[0].data(), a.inputs[1].data());
                let n = x.len();
                let mut ga = a.needs(0).then(|| vec![T::zero(); n]);
                let mut gb = a.needs(1).then(|| vec![T::zero(); n]);
                for i in 0..n {
                    let (da, db) = df(x[i], y[i], a.grad[i]);
                    if let Some(ga) = ga.as_mut() {
                        ga[i] = da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[i] = db;
                    }
                }
                vec![ga, gb]
            },
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, OpKind::Add, "add", |a, b| a + b, |_, _, g| (g, g))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, OpKind::Sub, "sub", |a, b| a - b, |_, _, g| (g, -g))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, OpKind::Mul, "mul", |a, b| a * b, |a, b, g| (g * b, g * a))
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(
            other,
            OpKind::Div,
            "div",
            |a, b| a / b,
            |a, b, g| (g / b, -g * a / (b * b)),
        )
    }

    /// Sum of all elements (64-bit accumulator), rank-0 result.
    pub fn sum(&self) -> Tensor<T> {
        let s: f64 = self.data().iter().map(|v| v.f64()).sum();
        let n = self.numel();
        Tensor::from_op(OpKind::Sum, Vec::new(), vec![T::of(s)], vec![self.clone()], move |a| {
            vec![Some(vec![a.grad[0]; n])]
        })
    }

    /// Mean of all elements (64-bit accumulator), rank-0 result.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        let s: f64 = self.data().iter().map(|v| v.f64()).sum();
        Tensor::from_op(
            OpKind::Mean,
            Vec::new(),
            vec![T::of(s / n as f64)],
            vec![self.clone()],
            move |a| vec![Some(vec![a.grad[0] / T::of(n as f64); n])],
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            OpKind::Reshape,
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |a| vec![Some(a.grad.to_vec())],
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::shape("slice", shape, &[axis, start, end]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let width = (end - start) * inner;
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * len * inner + start * inner;
            data.extend_from_slice(&self.data()[base..base + width]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = end - start;
        let total = self.numel();
        Ok(Tensor::from_op(
            OpKind::Slice,
            out_shape,
            data,
            vec![self.clone()],
            move |a| {
                let mut g = vec![T::zero(); total];
                for o in 0..outer {
                    let base = o * len * inner + start * inner;
                    g[base..base + width].copy_from_slice(&a.grad[o * width..(o + 1) * width]);
                }
                vec![Some(g)]
            },
        ))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::shape("concat", first.shape(), &[axis]));
        }
        for p in &parts[1..] {
            let ok = p.shape().len() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let row: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op(
            OpKind::Concat,
            shape,
            data,
            parts.to_vec(),
            move |a| {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(widths.len());
                for (i, &w) in widths.iter().enumerate() {
                    if a.needs(i) {
                        let mut g = Vec::with_capacity(outer * w);
                        for o in 0..outer {
                            let base = o * row + offset;
                            g.extend_from_slice(&a.grad[base..base + w]);
                        }
                        grads.push(Some(g));
                    } else {
                        grads.push(None);
                    }
                    offset += w;
                }
                grads
            },
        ))
    }
}
