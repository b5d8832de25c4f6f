//! Forward operations and their backward rules.

mod conv;
mod elementwise;
mod linalg;
mod reduce;
mod sample;
mod shape;

pub use shape::concat;

use crate::error::Result;
use crate::record::Node;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Minimum,
    Maximum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Unary {
    Neg,
    Scale(f64),
    AddScalar(f64),
    Relu,
    Sigmoid,
    Exp,
    Log,
    Abs,
    Powf(f64),
    Sqrt,
    ClampMin(f64),
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Binary(Binary),
    Unary(Unary),
    MatMul { batch: usize, m: usize, k: usize, n: usize },
    Conv2d(conv::ConvGeom),
    Sum,
    SumAxis { outer: usize, axis: usize, inner: usize },
    Softmax { outer: usize, axis: usize, inner: usize },
    Concat { outer: usize, sizes: Vec<usize>, inner: usize },
    Slice { outer: usize, axis: usize, start: usize, len: usize, inner: usize },
    Reshape,
    Permute { perm: Vec<usize> },
    UpsampleNearest { channels: usize, h: usize, w: usize, factor: usize },
    UpsampleBilinear { channels: usize, h: usize, w: usize, factor: usize },
    Subsample { channels: usize, h: usize, w: usize, factor: usize },
    AvgPool3 { channels: usize, h: usize, w: usize },
    GridSample { channels: usize, h: usize, w: usize },
}

pub(crate) fn backward(
    op: &Op,
    inputs: &[&Node],
    out: &Node,
    g: &[f64],
    need: &[bool],
) -> Result<Vec<Option<Vec<f64>>>> {
    Ok(match op {
        Op::Leaf | Op::Constant => Vec::new(),
        Op::Binary(kind) => elementwise::binary_backward(*kind, inputs, out, g, need),
        Op::Unary(kind) => vec![Some(elementwise::unary_backward(*kind, inputs[0], out, g))],
        Op::MatMul { batch, m, k, n } => linalg::matmul_backward(*batch, *m, *k, *n, inputs, g, need),
        Op::Conv2d(geom) => conv::conv2d_backward(geom, inputs, g, need),
        Op::Sum => vec![Some(vec![g[0]; inputs[0].value.len()])],
        Op::SumAxis { outer, axis, inner } => vec![Some(reduce::sum_axis_backward(*outer, *axis, *inner, g))],
        Op::Softmax { outer, axis, inner } => {
            vec![Some(reduce::softmax_backward(*outer, *axis, *inner, &out.value, g))]
        }
        Op::Concat { outer, sizes, inner } => shape::concat_backward(*outer, sizes, *inner, g),
        Op::Slice { outer, axis, start, len, inner } => {
            vec![Some(shape::slice_backward(*outer, *axis, *start, *len, *inner, g))]
        }
        Op::Reshape => vec![Some(g.to_vec())],
        Op::Permute { perm } => vec![Some(shape::permute_backward(&inputs[0].shape, perm, g))],
        Op::UpsampleNearest { channels, h, w, factor } => {
            vec![Some(sample::upsample_nearest_backward(*channels, *h, *w, *factor, g))]
        }
        Op::UpsampleBilinear { channels, h, w, factor } => {
            vec![Some(sample::upsample_bilinear_backward(*channels, *h, *w, *factor, g))]
        }
        Op::Subsample { channels, h, w, factor } => {
            vec![Some(sample::subsample_backward(*channels, *h, *w, *factor, g))]
        }
        Op::AvgPool3 { channels, h, w } => vec![Some(sample::avg_pool3_backward(*channels, *h, *w, g))],
        Op::GridSample { channels, h, w } => {
            sample::grid_sample_backward(*channels, *h, *w, inputs, g, need)
        }
    })
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
