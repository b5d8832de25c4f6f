use super::Op;
use crate::error::{mismatch, Result};
use crate::record::Node;
use crate::tensor::Tensor;

/// `c[m×n] += a · b` where `a` and `b` are addressed through row/column
/// strides, so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut().take(m * n) {
            *v *= beta;
        }
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches for
    // the dense layouts used by callers; strides describe those layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Matrix product. Supports `[m,k]·[k,n]`, batched `[b,m,k]·[b,k,n]`,
    /// and `[b,m,k]·[k,n]` with a shared right operand.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        let (batch, m, k, n, out_shape) = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => (1, sa[0], sa[1], sb[1], vec![sa[0], sb[1]]),
            (3, 3) if sa[0] == sb[0] && sa[2] == sb[1] => {
                (sa[0], sa[1], sa[2], sb[2], vec![sa[0], sa[1], sb[2]])
            }
            (3, 2) if sa[2] == sb[0] => (1, sa[0] * sa[1], sa[2], sb[1], vec![sa[0], sa[1], sb[1]]),
            _ => return Err(mismatch("matmul", sa, sb)),
        };
        let mut out = vec![0.0; batch * m * n];
        let (x, y) = (self.data(), other.data());
        for bi in 0..batch {
            gemm(
                m,
                k,
                n,
                &x[bi * m * k..],
                k as isize,
                1,
                &y[bi * k * n..],
                n as isize,
                1,
                &mut out[bi * m * n..],
                0.0,
            );
        }
        Tensor::from_op(Op::MatMul { batch, m, k, n }, &[self, other], out_shape, out)
    }
}

pub(crate) fn matmul_backward(
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    inputs: &[&Node],
    g: &[f64],
    need: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let (a, b) = (&inputs[0].value, &inputs[1].value);
    let ga = need[0].then(|| {
        let mut ga = vec![0.0; batch * m * k];
        for bi in 0..batch {
            // g[m×n] · bᵀ[n×k]
            gemm(
                m,
                n,
                k,
                &g[bi * m * n..],
                n as isize,
                1,
                &b[bi * k * n..],
                1,
                n as isize,
                &mut ga[bi * m * k..],
                0.0,
            );
        }
        ga
    });
    let gb = need[1].then(|| {
        let mut gb = vec![0.0; batch * k * n];
        for bi in 0..batch {
            // aᵀ[k×m] · g[m×n]
            gemm(
                k,
                m,
                n,
                &a[bi * m * k..],
                1,
                k as isize,
                &g[bi * m * n..],
                n as isize,
                1,
                &mut gb[bi * k * n..],
                0.0,
            );
        }
        gb
    });
    vec![ga, gb]
}
