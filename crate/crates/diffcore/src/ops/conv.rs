use super::linalg::gemm;
use super::Op;
use crate::error::{contract, mismatch, Result};
use crate::record::Node;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn spatial(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds `x[cin,h,w]` into columns `[cin·k·k, oh·ow]`, zero-padded.
fn im2col(geom: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let ConvGeom { cin, h, w, k, stride, pad, oh, ow, .. } = *geom;
    let mut cols = vec![0.0; geom.patch() * geom.spatial()];
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[(c * h + iy as usize) * w..];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(geom: &ConvGeom, cols: &[f64]) -> Vec<f64> {
    let ConvGeom { cin, h, w, k, stride, pad, oh, ow, .. } = *geom;
    let mut x = vec![0.0; cin * h * w];
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (c * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

impl Tensor {
    /// 2-D convolution of `self: [cin,h,w]` with `weight: [cout,cin,k,k]`
    /// and `bias: [cout]`, zero padding `pad` on every side.
    pub fn conv2d(&self, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] {
            return Err(mismatch("conv2d", xs, ws));
        }
        if bias.shape() != [ws[0]] {
            return Err(mismatch("conv2d(bias)", bias.shape(), &ws[..1]));
        }
        if stride == 0 {
            return Err(contract("conv2d", "stride must be positive"));
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(contract("conv2d", format!("kernel {k} larger than padded input {h}x{w}")));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let geom = ConvGeom { cin, h, w, cout, k, stride, pad, oh, ow };
        let cols = im2col(&geom, self.data());
        let spatial = geom.spatial();
        let mut out = vec![0.0; cout * spatial];
        for (co, &b) in bias.data().iter().enumerate() {
            out[co * spatial..(co + 1) * spatial].fill(b);
        }
        let patch = geom.patch();
        gemm(cout, patch, spatial, weight.data(), patch as isize, 1, &cols, spatial as isize, 1, &mut out, 1.0);
        Tensor::from_op(Op::Conv2d(geom), &[self, weight, bias], vec![cout, oh, ow], out)
    }
}

pub(crate) fn conv2d_backward(
    geom: &ConvGeom,
    inputs: &[&Node],
    g: &[f64],
    need: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let (x, w) = (&inputs[0].value, &inputs[1].value);
    let (patch, spatial, cout) = (geom.patch(), geom.spatial(), geom.cout);
    let gx = need[0].then(|| {
        // wᵀ[patch×cout] · g[cout×spatial]
        let mut gcols = vec![0.0; patch * spatial];
        gemm(patch, cout, spatial, w, 1, patch as isize, g, spatial as isize, 1, &mut gcols, 0.0);
        col2im(geom, &gcols)
    });
    let gw = need[1].then(|| {
        let cols = im2col(geom, x);
        // g[cout×spatial] · colsᵀ[spatial×patch]
        let mut gw = vec![0.0; cout * patch];
        gemm(cout, spatial, patch, g, spatial as isize, 1, &cols, 1, spatial as isize, &mut gw, 0.0);
        gw
    });
    let gb = need[2].then(|| {
        (0..cout)
            .map(|co| g[co * spatial..(co + 1) * spatial].iter().sum())
            .collect()
    });
    vec![gx, gw, gb]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_output_shape() {
        let x = Tensor::zeros(&[3, 16, 16]);
        let w = Tensor::zeros(&[8, 3, 3, 3]);
        let b = Tensor::full(&[8], 0.5);
        let y = x.conv2d(&w, &b, 2, 1).unwrap();
        assert_eq!(y.shape(), &[8, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn matches_direct_convolution() {
        let x = Tensor::from_fn(&[2, 5, 4], |i| ((i * 7) % 11) as f64 - 5.0);
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 5) % 7) as f64 * 0.25 - 0.75);
        let b = Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
        let y = x.conv2d(&w, &b, 2, 1).unwrap();
        let (oh, ow) = (y.shape()[1], y.shape()[2]);
        for co in 0..3 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy >= 0 && iy < 5 && ix >= 0 && ix < 4 {
                                    acc += w.at(&[co, ci, ky, kx]) * x.at(&[ci, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    assert!((y.at(&[co, oy, ox]) - acc).abs() < 1e-12);
                }
            }
        }
    }
}
