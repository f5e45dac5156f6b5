//! Elementwise, reduction, and layout operations.

use super::graph::{Function, Graph, NodeId};
use super::linalg::gemm;
use super::tensor::{cget, cset, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub struct Add;

impl Function for Add {
    fn name(&self) -> &'static str {
        "add"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        same_shape("add", x[0], x[1])?;
        Ok(zip_map(x[0], x[1], |a, b| a + b))
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.clone()), Some(g.clone())]
    }
}

pub struct Sub;

impl Function for Sub {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        same_shape("sub", x[0], x[1])?;
        Ok(zip_map(x[0], x[1], |a, b| a - b))
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.clone()), needs[1].then(|| g.map(|v| -v))]
    }
}

pub struct Mul;

impl Function for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        same_shape("mul", x[0], x[1])?;
        Ok(zip_map(x[0], x[1], |a, b| a * b))
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![
            needs[0].then(|| zip_map(g, x[1], |g, b| g * b)),
            needs[1].then(|| zip_map(g, x[0], |g, a| g * a)),
        ]
    }
}

/// Multiplication by a fixed real constant.
pub struct Scale(pub f64);

impl Function for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        Ok(x[0].map(|v| v * self.0))
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.map(|v| v * self.0))]
    }
}

/// Scalar node times tensor node; the only broadcast the engine supports.
pub struct ScalarMul;

impl Function for ScalarMul {
    fn name(&self) -> &'static str {
        "scalar_mul"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        if !x[0].is_scalar() {
            return Err(Error::shape("scalar_mul", format!("lhs {:?} is not scalar", x[0].shape())));
        }
        let s = x[0].item();
        Ok(x[1].map(|v| s * v))
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let s = x[0].item();
        vec![
            needs[0].then(|| Tensor::full(x[0].shape(), g.dot(x[1]))),
            needs[1].then(|| g.map(|v| s * v)),
        ]
    }
}

pub struct Sum;

impl Function for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(x[0].data().iter().sum()))
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(x[0].shape(), g.item()))]
    }
}

pub struct Mean;

impl Function for Mean {
    fn name(&self) -> &'static str {
        "mean"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        if x[0].is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        Ok(Tensor::scalar(x[0].data().iter().sum::<f64>() / x[0].len() as f64))
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(x[0].shape(), g.item() / x[0].len() as f64))]
    }
}

/// Two-dimensional matrix product.
pub struct MatMul;

impl Function for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (x[0], x[1]);
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, a.data(), false, b.data(), false, out.data_mut(), 0.0);
        Ok(out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (x[0], x[1]);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let ga = needs[0].then(|| {
            let mut ga = Tensor::zeros(&[m, k]);
            gemm(m, n, k, g.data(), false, b.data(), true, ga.data_mut(), 0.0);
            ga
        });
        let gb = needs[1].then(|| {
            let mut gb = Tensor::zeros(&[k, n]);
            gemm(k, m, n, a.data(), true, g.data(), false, gb.data_mut(), 0.0);
            gb
        });
        vec![ga, gb]
    }
}

pub struct Reshape(pub Vec<usize>);

impl Function for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        x[0].clone().reshape(&self.0)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.clone().reshape(x[0].shape()).expect("same numel"))]
    }
}

/// Axis permutation: output axis `i` is input axis `axes[i]`.
pub struct Permute(pub Vec<usize>);

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute(t: &Tensor, axes: &[usize]) -> Tensor {
    let in_strides = strides(t.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| t.shape()[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(t.len());
    let mut idx = vec![0usize; out_shape.len()];
    let src = t.data();
    for _ in 0..t.len() {
        let offset: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(src[offset]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permute preserves numel")
}

impl Function for Permute {
    fn name(&self) -> &'static str {
        "permute"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let mut seen = self.0.clone();
        seen.sort_unstable();
        if seen != (0..x[0].rank()).collect::<Vec<_>>() {
            return Err(Error::shape("permute", format!("axes {:?} for rank {}", self.0, x[0].rank())));
        }
        Ok(permute(x[0], &self.0))
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut inverse = vec![0; self.0.len()];
        for (i, &a) in self.0.iter().enumerate() {
            inverse[a] = i;
        }
        vec![Some(permute(g, &inverse))]
    }
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Concatenation along `axis`; all other extents must agree.
pub struct Concat(pub usize);

impl Function for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let axis = self.0;
        let first = x.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        if axis >= first.rank() {
            return Err(Error::shape("concat", format!("axis {} for rank {}", axis, first.rank())));
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for t in x {
            let mut s = t.shape().to_vec();
            if s.len() != shape.len() {
                return Err(Error::shape("concat", "rank differs"));
            }
            shape[axis] += s[axis];
            s[axis] = 0;
            let mut expect = shape.clone();
            expect[axis] = 0;
            if s != expect {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", t.shape(), first.shape())));
            }
        }
        let (outer, _, inner) = split_at_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for t in x {
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        Tensor::new(shape, data)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let axis = self.0;
        let (outer, total, inner) = split_at_axis(g.shape(), axis);
        let mut start = 0;
        x.iter()
            .zip(needs)
            .map(|(t, &need)| {
                let len = t.shape()[axis];
                let out = need.then(|| {
                    let mut data = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let base = (o * total + start) * inner;
                        data.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    Tensor::new(t.shape().to_vec(), data).expect("slice shape")
                });
                start += len;
                out
            })
            .collect()
    }
}

/// Contiguous slice `[start, start + len)` along `axis`.
pub struct Slice {
    pub axis: usize,
    pub start: usize,
    pub len: usize,
}

impl Function for Slice {
    fn name(&self) -> &'static str {
        "slice"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let t = x[0];
        if self.axis >= t.rank() || self.start + self.len > t.shape()[self.axis] {
            return Err(Error::shape(
                "slice",
                format!("[{}, +{}) on axis {} of {:?}", self.start, self.len, self.axis, t.shape()),
            ));
        }
        let (outer, total, inner) = split_at_axis(t.shape(), self.axis);
        let mut shape = t.shape().to_vec();
        shape[self.axis] = self.len;
        let mut data = Vec::with_capacity(outer * self.len * inner);
        for o in 0..outer {
            let base = (o * total + self.start) * inner;
            data.extend_from_slice(&t.data()[base..base + self.len * inner]);
        }
        Tensor::new(shape, data)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (outer, total, inner) = split_at_axis(x[0].shape(), self.axis);
        let mut out = Tensor::zeros(x[0].shape());
        let block = self.len * inner;
        for o in 0..outer {
            let base = (o * total + self.start) * inner;
            out.data_mut()[base..base + block].copy_from_slice(&g.data()[o * block..(o + 1) * block]);
        }
        vec![Some(out)]
    }
}

pub struct Relu;

impl Function for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        Ok(x[0].map(|v| v.max(0.0)))
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(zip_map(g, x[0], |g, v| if v > 0.0 { g } else { 0.0 }))]
    }
}

pub struct Sigmoid;

impl Function for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        Ok(x[0].map(|v| 1.0 / (1.0 + (-v).exp())))
    }
    fn backward(&self, _: &[&Tensor], y: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(zip_map(g, y, |g, s| g * s * (1.0 - s)))]
    }
}

/// Elementwise complex product of two `[..., 2]` tensors.
pub struct ComplexMul;

impl Function for ComplexMul {
    fn name(&self) -> &'static str {
        "complex_mul"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        same_shape("complex_mul", x[0], x[1])?;
        if x[0].shape().last() != Some(&2) {
            return Err(Error::shape("complex_mul", "trailing axis must be 2"));
        }
        let mut out = Tensor::zeros(x[0].shape());
        for i in 0..x[0].len() / 2 {
            cset(out.data_mut(), i, cget(x[0].data(), i) * cget(x[1].data(), i));
        }
        Ok(out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let conj_times = |other: &Tensor| {
            let mut out = Tensor::zeros(other.shape());
            for i in 0..other.len() / 2 {
                cset(out.data_mut(), i, cget(other.data(), i).conj() * cget(g.data(), i));
            }
            out
        };
        vec![needs[0].then(|| conj_times(x[1])), needs[1].then(|| conj_times(x[0]))]
    }
}

impl Graph {
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.record(Scale(c), &[a])
    }

    pub fn scalar_mul(&mut self, s: NodeId, t: NodeId) -> Result<NodeId> {
        self.record(ScalarMul, &[s, t])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Mean, &[a])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(MatMul, &[a, b])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.record(Reshape(shape.to_vec()), &[a])
    }

    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.record(Permute(axes.to_vec()), &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.record(Concat(axis), parts)
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        self.record(Slice { axis, start, len }, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Relu, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Sigmoid, &[a])
    }

    pub fn complex_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(ComplexMul, &[a, b])
    }

    /// Mean squared error between two same-shaped nodes.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }
}
