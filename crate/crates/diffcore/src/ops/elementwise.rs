use super::{Binary, Op, Unary};
use crate::error::{mismatch, Result};
use crate::record::Node;
use crate::tensor::{numel, Tensor};

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(mismatch(op, a, b)),
        };
    }
    Ok(out)
}

/// Strides of `shape` aligned to `out`, zero along broadcast dimensions.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut stride = 1;
    for i in (0..shape.len()).rev() {
        let o = i + rank - shape.len();
        if shape[i] != 1 {
            strides[o] = stride;
        }
        stride *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_pair(a: &[usize], b: &[usize], out: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(out);
    let (na, nb) = (numel(a), numel(b));
    if na == n && nb == n {
        for i in 0..n {
            f(i, i, i);
        }
        return;
    }
    if na == n && nb == 1 {
        for i in 0..n {
            f(i, i, 0);
        }
        return;
    }
    if na == 1 && nb == n {
        for i in 0..n {
            f(i, 0, i);
        }
        return;
    }
    let sa = aligned_strides(a, out);
    let sb = aligned_strides(b, out);
    let rank = out.len();
    // innermost dimension handled as a tight loop
    let last = rank - 1;
    let (inner, ia_step, ib_step) = (out[last], sa[last], sb[last]);
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut o = 0;
    while o < n {
        for j in 0..inner {
            f(o + j, ia + j * ia_step, ib + j * ib_step);
        }
        o += inner;
        let mut d = last;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn binary(kind: Binary, name: &'static str, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = broadcast_shape(name, a.shape(), b.shape())?;
    let mut out = vec![0.0; numel(&shape)];
    let (x, y) = (a.data(), b.data());
    if shape.is_empty() {
        out[0] = apply_binary(kind, x[0], y[0]);
    } else {
        for_each_pair(a.shape(), b.shape(), &shape, |o, i, j| {
            out[o] = apply_binary(kind, x[i], y[j]);
        });
    }
    Tensor::from_op(Op::Binary(kind), &[a, b], shape, out)
}

#[inline]
fn apply_binary(kind: Binary, x: f64, y: f64) -> f64 {
    match kind {
        Binary::Add => x + y,
        Binary::Sub => x - y,
        Binary::Mul => x * y,
        Binary::Div => x / y,
        Binary::Minimum => {
            if x <= y {
                x
            } else {
                y
            }
        }
        Binary::Maximum => {
            if x >= y {
                x
            } else {
                y
            }
        }
    }
}

pub(crate) fn binary_backward(
    kind: Binary,
    inputs: &[&Node],
    out: &Node,
    g: &[f64],
    need: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let (a, b) = (inputs[0], inputs[1]);
    let (x, y) = (&a.value, &b.value);
    let mut ga = need[0].then(|| vec![0.0; x.len()]);
    let mut gb = need[1].then(|| vec![0.0; y.len()]);
    let mut visit = |o: usize, i: usize, j: usize| {
        let (da, db) = match kind {
            Binary::Add => (g[o], g[o]),
            Binary::Sub => (g[o], -g[o]),
            Binary::Mul => (g[o] * y[j], g[o] * x[i]),
            Binary::Div => (g[o] / y[j], -g[o] * x[i] / (y[j] * y[j])),
            Binary::Minimum => {
                if x[i] <= y[j] {
                    (g[o], 0.0)
                } else {
                    (0.0, g[o])
                }
            }
            Binary::Maximum => {
                if x[i] >= y[j] {
                    (g[o], 0.0)
                } else {
                    (0.0, g[o])
                }
            }
        };
        if let Some(ga) = ga.as_mut() {
            ga[i] += da;
        }
        if let Some(gb) = gb.as_mut() {
            gb[j] += db;
        }
    };
    if out.shape.is_empty() {
        visit(0, 0, 0);
    } else {
        for_each_pair(&a.shape, &b.shape, &out.shape, visit);
    }
    vec![ga, gb]
}

fn unary(kind: Unary, a: &Tensor) -> Result<Tensor> {
    let out = a.data().iter().map(|&x| apply_unary(kind, x)).collect();
    Tensor::from_op(Op::Unary(kind), &[a], a.shape().to_vec(), out)
}

#[inline]
fn apply_unary(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Neg => -x,
        Unary::Scale(s) => s * x,
        Unary::AddScalar(s) => x + s,
        Unary::Relu => x.max(0.0),
        Unary::Sigmoid => {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        }
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Abs => x.abs(),
        Unary::Powf(p) => x.powf(p),
        Unary::Sqrt => x.sqrt(),
        Unary::ClampMin(c) => x.max(c),
    }
}

pub(crate) fn unary_backward(kind: Unary, input: &Node, out: &Node, g: &[f64]) -> Vec<f64> {
    let x = &input.value;
    let y = &out.value;
    (0..g.len())
        .map(|i| {
            let d = match kind {
                Unary::Neg => -1.0,
                Unary::Scale(s) => s,
                Unary::AddScalar(_) => 1.0,
                Unary::Relu => {
                    if x[i] > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                Unary::Sigmoid => y[i] * (1.0 - y[i]),
                Unary::Exp => y[i],
                Unary::Log => 1.0 / x[i],
                Unary::Abs => {
                    if x[i] > 0.0 {
                        1.0
                    } else if x[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                Unary::Powf(p) => p * x[i].powf(p - 1.0),
                Unary::Sqrt => 0.5 / y[i],
                Unary::ClampMin(c) => {
                    if x[i] >= c {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            g[i] * d
        })
        .collect()
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Add, "add", self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Sub, "sub", self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Mul, "mul", self, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Div, "div", self, other)
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Minimum, "minimum", self, other)
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Maximum, "maximum", self, other)
    }

    pub fn neg(&self) -> Result<Tensor> {
        unary(Unary::Neg, self)
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        unary(Unary::Scale(s), self)
    }

    pub fn add_scalar(&self, s: f64) -> Result<Tensor> {
        unary(Unary::AddScalar(s), self)
    }

    pub fn relu(&self) -> Result<Tensor> {
        unary(Unary::Relu, self)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        unary(Unary::Sigmoid, self)
    }

    pub fn exp(&self) -> Result<Tensor> {
        unary(Unary::Exp, self)
    }

    pub fn log(&self) -> Result<Tensor> {
        unary(Unary::Log, self)
    }

    pub fn abs(&self) -> Result<Tensor> {
        unary(Unary::Abs, self)
    }

    pub fn powf(&self, p: f64) -> Result<Tensor> {
        unary(Unary::Powf(p), self)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        unary(Unary::Sqrt, self)
    }

    /// `max(x, c)` elementwise; zero gradient where clamped.
    pub fn clamp_min(&self, c: f64) -> Result<Tensor> {
        unary(Unary::ClampMin(c), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape("t", &[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape("t", &[4, 1, 3], &[2, 1]).unwrap(), vec![4, 2, 3]);
        assert!(broadcast_shape("t", &[2, 3], &[2]).is_err());
    }

    #[test]
    fn bias_add_broadcasts_over_rows() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![3], vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let c = Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap();
        assert_eq!(a.mul(&c).unwrap().data(), &[1.0, 2.0, 3.0, -4.0, -5.0, -6.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let x = Tensor::zeros(&[1]);
        assert_eq!(x.sigmoid().unwrap().data(), &[0.5]);
    }

    #[test]
    fn mismatched_shapes_name_the_op() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[4]"), "{err}");
    }
}
