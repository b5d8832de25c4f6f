use super::{split_axis, Op};
use crate::error::{contract, mismatch, Result};
use crate::tensor::{numel, Tensor};

impl Tensor {
    /// Reinterprets the row-major data under a new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() {
            return Err(mismatch("reshape", self.shape(), shape));
        }
        Tensor::from_op_shared(Op::Reshape, &[self], shape.to_vec(), self.arc_data())
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(contract("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let out = permute_data(self.shape(), perm, self.data());
        Tensor::from_op(Op::Permute { perm: perm.to_vec() }, &[self], shape, out)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + len > self.shape()[axis] {
            return Err(contract(
                "slice",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, self.shape()),
            ));
        }
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(Op::Slice { outer, axis: n, start, len, inner }, &[self], shape, out)
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data(shape: &[usize], perm: &[usize], x: &[f64]) -> Vec<f64> {
    let rank = shape.len();
    if rank == 0 {
        return x.to_vec();
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    let last = rank - 1;
    while out.len() < n {
        let step = src_strides[last];
        for j in 0..out_shape[last] {
            out.push(x[src + j * step]);
        }
        let mut d = last;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
        if out_shape[last] == 0 {
            break;
        }
    }
    out
}

pub(crate) fn permute_backward(in_shape: &[usize], perm: &[usize], g: &[f64]) -> Vec<f64> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    permute_data(&out_shape, &inverse, g)
}

/// Concatenates tensors along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| contract("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(contract("concat", format!("axis {axis} out of range for {:?}", first.shape())));
    }
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(mismatch("concat", first.shape(), p.shape()));
        }
    }
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &s) in parts.iter().zip(&sizes) {
            out.extend_from_slice(&p.data()[o * s * inner..(o + 1) * s * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::from_op(Op::Concat { outer, sizes, inner }, parts, shape, out)
}

pub(crate) fn concat_backward(outer: usize, sizes: &[usize], inner: usize, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let total: usize = sizes.iter().sum();
    let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&s| Vec::with_capacity(outer * s * inner)).collect();
    for o in 0..outer {
        let mut at = o * total * inner;
        for (gp, &s) in grads.iter_mut().zip(sizes) {
            gp.extend_from_slice(&g[at..at + s * inner]);
            at += s * inner;
        }
    }
    grads.into_iter().map(Some).collect()
}

pub(crate) fn slice_backward(outer: usize, n: usize, start: usize, len: usize, inner: usize, g: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; outer * n * inner];
    for o in 0..outer {
        gx[(o * n + start) * inner..(o * n + start + len) * inner]
            .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    gx
}
