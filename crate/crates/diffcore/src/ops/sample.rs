//! Spatial resampling on `[C,H,W]` (or `[H,W]`) maps. Pixel centres sit at
//! integer coordinates; upsampling by `f` maps output `x` to input `x/f`.

use super::Op;
use crate::error::{contract, mismatch, Result};
use crate::record::Node;
use crate::tensor::Tensor;

fn planes(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        [h, w] => Ok((1, h, w)),
        _ => Err(contract(op, format!("expected [C,H,W] or [H,W], got {:?}", t.shape()))),
    }
}

fn resized(t: &Tensor, h: usize, w: usize) -> Vec<usize> {
    let mut s = t.shape().to_vec();
    let r = s.len();
    s[r - 2] = h;
    s[r - 1] = w;
    s
}

/// Left cell index and fractional weight for a coordinate already clamped
/// to `[0, n-1]`.
#[inline]
fn cell(x: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let x0 = (x.floor() as usize).min(n - 2);
    (x0, x0 + 1, x - x0 as f64)
}

impl Tensor {
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor> {
        let (c, h, w) = planes("upsample_nearest", self)?;
        if factor == 0 {
            return Err(contract("upsample_nearest", "factor must be positive"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let x = self.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let row = &x[(ch * h + y / factor) * w..];
                out.extend((0..ow).map(|xo| row[xo / factor]));
            }
        }
        Tensor::from_op(
            Op::UpsampleNearest { channels: c, h, w, factor },
            &[self],
            resized(self, oh, ow),
            out,
        )
    }

    /// Bilinear upsampling by an integer factor with edge clamping.
    pub fn upsample_bilinear(&self, factor: usize) -> Result<Tensor> {
        let (c, h, w) = planes("upsample_bilinear", self)?;
        if factor == 0 {
            return Err(contract("upsample_bilinear", "factor must be positive"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let x = self.data();
        let mut out = vec![0.0; c * oh * ow];
        let f = factor as f64;
        for ch in 0..c {
            let src = &x[ch * h * w..(ch + 1) * h * w];
            for yo in 0..oh {
                let (y0, y1, fy) = cell((yo as f64 / f).min((h - 1) as f64), h);
                for xo in 0..ow {
                    let (x0, x1, fx) = cell((xo as f64 / f).min((w - 1) as f64), w);
                    out[(ch * oh + yo) * ow + xo] = (1.0 - fy) * ((1.0 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1])
                        + fy * ((1.0 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1]);
                }
            }
        }
        Tensor::from_op(
            Op::UpsampleBilinear { channels: c, h, w, factor },
            &[self],
            resized(self, oh, ow),
            out,
        )
    }

    /// Keeps every `factor`-th pixel starting at the origin.
    pub fn subsample(&self, factor: usize) -> Result<Tensor> {
        let (c, h, w) = planes("subsample", self)?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(contract("subsample", format!("{h}x{w} not divisible by {factor}")));
        }
        let (oh, ow) = (h / factor, w / factor);
        let x = self.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let row = &x[(ch * h + y * factor) * w..];
                out.extend((0..ow).map(|xo| row[xo * factor]));
            }
        }
        Tensor::from_op(
            Op::Subsample { channels: c, h, w, factor },
            &[self],
            resized(self, oh, ow),
            out,
        )
    }

    /// 3×3 box mean, averaging only the in-bounds neighbours.
    pub fn avg_pool3(&self) -> Result<Tensor> {
        let (c, h, w) = planes("avg_pool3", self)?;
        let x = self.data();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            let src = &x[ch * h * w..(ch + 1) * h * w];
            for y in 0..h {
                let (ya, yb) = (y.saturating_sub(1), (y + 1).min(h - 1));
                for xo in 0..w {
                    let (xa, xb) = (xo.saturating_sub(1), (xo + 1).min(w - 1));
                    let mut acc = 0.0;
                    for yy in ya..=yb {
                        for xx in xa..=xb {
                            acc += src[yy * w + xx];
                        }
                    }
                    out[(ch * h + y) * w + xo] = acc / ((yb - ya + 1) * (xb - xa + 1)) as f64;
                }
            }
        }
        Tensor::from_op(Op::AvgPool3 { channels: c, h, w }, &[self], self.shape().to_vec(), out)
    }

    /// Bilinear read of `self: [C,H,W]` at continuous pixel coordinates
    /// `coords: [..., 2]` holding `(u, v)` = (column, row). Coordinates are
    /// clamped to the image for the read; the result is `[..., C]`.
    /// Differentiable w.r.t. both the source values and the coordinates
    /// (zero coordinate gradient where clamped).
    pub fn grid_sample(&self, coords: &Tensor) -> Result<Tensor> {
        let (c, h, w) = planes("grid_sample", self)?;
        let cs = coords.shape();
        if cs.last() != Some(&2) {
            return Err(mismatch("grid_sample(coords)", cs, &[2]));
        }
        if h == 0 || w == 0 {
            return Err(contract("grid_sample", "empty source"));
        }
        let n = coords.len() / 2;
        let (src, uv) = (self.data(), coords.data());
        let mut out = vec![0.0; n * c];
        for p in 0..n {
            let u = uv[2 * p].clamp(0.0, (w - 1) as f64);
            let v = uv[2 * p + 1].clamp(0.0, (h - 1) as f64);
            let (x0, x1, fx) = cell(u, w);
            let (y0, y1, fy) = cell(v, h);
            let (w00, w01, w10, w11) = ((1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx);
            for ch in 0..c {
                let s = &src[ch * h * w..];
                out[p * c + ch] = w00 * s[y0 * w + x0] + w01 * s[y0 * w + x1] + w10 * s[y1 * w + x0] + w11 * s[y1 * w + x1];
            }
        }
        let mut shape = cs[..cs.len() - 1].to_vec();
        shape.push(c);
        Tensor::from_op(Op::GridSample { channels: c, h, w }, &[self, coords], shape, out)
    }
}

pub(crate) fn upsample_nearest_backward(c: usize, h: usize, w: usize, factor: usize, g: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h * factor, w * factor);
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                gx[(ch * h + y / factor) * w + x / factor] += g[(ch * oh + y) * ow + x];
            }
        }
    }
    gx
}

pub(crate) fn upsample_bilinear_backward(c: usize, h: usize, w: usize, factor: usize, g: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h * factor, w * factor);
    let f = factor as f64;
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        let dst = &mut gx[ch * h * w..(ch + 1) * h * w];
        for yo in 0..oh {
            let (y0, y1, fy) = cell((yo as f64 / f).min((h - 1) as f64), h);
            for xo in 0..ow {
                let (x0, x1, fx) = cell((xo as f64 / f).min((w - 1) as f64), w);
                let gv = g[(ch * oh + yo) * ow + xo];
                dst[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += gv * (1.0 - fy) * fx;
                dst[y1 * w + x0] += gv * fy * (1.0 - fx);
                dst[y1 * w + x1] += gv * fy * fx;
            }
        }
    }
    gx
}

pub(crate) fn subsample_backward(c: usize, h: usize, w: usize, factor: usize, g: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / factor, w / factor);
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                gx[(ch * h + y * factor) * w + x * factor] = g[(ch * oh + y) * ow + x];
            }
        }
    }
    gx
}

pub(crate) fn avg_pool3_backward(c: usize, h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        let dst = &mut gx[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let (ya, yb) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (xa, xb) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let share = g[(ch * h + y) * w + x] / ((yb - ya + 1) * (xb - xa + 1)) as f64;
                for yy in ya..=yb {
                    for xx in xa..=xb {
                        dst[yy * w + xx] += share;
                    }
                }
            }
        }
    }
    gx
}

pub(crate) fn grid_sample_backward(
    c: usize,
    h: usize,
    w: usize,
    inputs: &[&Node],
    g: &[f64],
    need: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let (src, uv) = (&inputs[0].value, &inputs[1].value);
    let n = uv.len() / 2;
    let mut gs = need[0].then(|| vec![0.0; src.len()]);
    let mut gc = need[1].then(|| vec![0.0; uv.len()]);
    for p in 0..n {
        let (ru, rv) = (uv[2 * p], uv[2 * p + 1]);
        let u = ru.clamp(0.0, (w - 1) as f64);
        let v = rv.clamp(0.0, (h - 1) as f64);
        let (x0, x1, fx) = cell(u, w);
        let (y0, y1, fy) = cell(v, h);
        let gp = &g[p * c..(p + 1) * c];
        if let Some(gs) = gs.as_mut() {
            let (w00, w01, w10, w11) = ((1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx);
            for (ch, &gv) in gp.iter().enumerate() {
                let base = ch * h * w;
                gs[base + y0 * w + x0] += gv * w00;
                gs[base + y0 * w + x1] += gv * w01;
                gs[base + y1 * w + x0] += gv * w10;
                gs[base + y1 * w + x1] += gv * w11;
            }
        }
        if let Some(gc) = gc.as_mut() {
            let u_free = w > 1 && (0.0..=(w - 1) as f64).contains(&ru);
            let v_free = h > 1 && (0.0..=(h - 1) as f64).contains(&rv);
            let (mut du, mut dv) = (0.0, 0.0);
            for (ch, &gv) in gp.iter().enumerate() {
                let s = &src[ch * h * w..];
                let (s00, s01, s10, s11) = (s[y0 * w + x0], s[y0 * w + x1], s[y1 * w + x0], s[y1 * w + x1]);
                if u_free {
                    du += gv * ((1.0 - fy) * (s01 - s00) + fy * (s11 - s10));
                }
                if v_free {
                    dv += gv * ((1.0 - fx) * (s10 - s00) + fx * (s11 - s01));
                }
            }
            gc[2 * p] = du;
            gc[2 * p + 1] = dv;
        }
    }
    vec![gs, gc]
}
