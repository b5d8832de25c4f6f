use super::{split_axis, Op};
use crate::error::{contract, Result};
use crate::tensor::Tensor;

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(contract(op, format!("axis {axis} out of range for shape {:?}", t.shape())));
    }
    Ok(())
}

impl Tensor {
    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        Tensor::from_op(Op::Sum, &[self], vec![], vec![s])
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(contract("mean", "empty tensor"));
        }
        self.sum()?.scale(1.0 / self.len() as f64)
    }

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("sum_axis", self, axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let src = &x[(o * n + a) * inner..(o * n + a + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Tensor::from_op(Op::SumAxis { outer, axis: n, inner }, &[self], shape, out)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("mean_axis", self, axis)?;
        let n = self.shape()[axis];
        self.sum_axis(axis)?.scale(1.0 / n as f64)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", self, axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let max = (0..n).map(|a| x[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for a in 0..n {
                    let e = (x[at(a)] - max).exp();
                    out[at(a)] = e;
                    total += e;
                }
                for a in 0..n {
                    out[at(a)] /= total;
                }
            }
        }
        Tensor::from_op(Op::Softmax { outer, axis: n, inner }, &[self], self.shape().to_vec(), out)
    }

    /// Index of the largest entry along `axis` for every other position,
    /// ties resolved to the lowest index. Not recorded: the choice is
    /// discrete and carries no gradient.
    pub fn argmax_axis(&self, axis: usize) -> Result<Vec<usize>> {
        check_axis("argmax_axis", self, axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        if n == 0 {
            return Err(contract("argmax_axis", "empty axis"));
        }
        let x = self.data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                for a in 1..n {
                    if x[(o * n + a) * inner + i] > x[(o * n + best) * inner + i] {
                        best = a;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }
}

pub(crate) fn sum_axis_backward(outer: usize, n: usize, inner: usize, g: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; outer * n * inner];
    for o in 0..outer {
        for a in 0..n {
            gx[(o * n + a) * inner..(o * n + a + 1) * inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
        }
    }
    gx
}

pub(crate) fn softmax_backward(outer: usize, n: usize, inner: usize, y: &[f64], g: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * n + a) * inner + i;
            let dot: f64 = (0..n).map(|a| g[at(a)] * y[at(a)]).sum();
            for a in 0..n {
                gx[at(a)] = y[at(a)] * (g[at(a)] - dot);
            }
        }
    }
    gx
}
