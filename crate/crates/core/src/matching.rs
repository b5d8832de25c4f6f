//! Feature encoder, epipolar feature volumes, the cross/self attention
//! stack that turns them into a cost volume, and SAD/SSIM baselines.
//!
//! Layouts: feature maps are `[C,h,w]`; a feature volume is `[P,D,C]` with
//! `P = h·w` pixels in row-major order; cost volumes are `[P,D]`.

use diffcore::Tensor;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::geometry::{candidate_grid, chw, DepthBins, Intrinsics, RigidTransform};
use crate::loss::ssim_map;
use crate::params::{self, apply_conv, ParamGroup};

/// Logit offset that removes invalid candidates from a softmax.
pub const INVALID_LOGIT: f64 = -1e9;

pub const ENCODER_WIDTHS: [usize; 2] = [16, 32];

pub fn init_encoder(rng: &mut ChaCha8Rng, channels: usize) -> ParamGroup {
    let mut g = ParamGroup::new();
    params::conv(&mut g, rng, "conv1", 3, ENCODER_WIDTHS[0], 3);
    params::conv(&mut g, rng, "conv2", ENCODER_WIDTHS[0], ENCODER_WIDTHS[1], 3);
    params::conv(&mut g, rng, "conv3", ENCODER_WIDTHS[1], channels, 3);
    g
}

/// `[3,H,W]` image to `[C,H/4,W/4]` features.
pub fn encode(p: &ParamGroup, image: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(image, "encode")?;
    if c != 3 || h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(contract("encode", format!("need [3,H,W] with H, W divisible by 4, got {:?}", image.shape())));
    }
    let x = apply_conv(p, "conv1", image, 1)?.relu()?;
    let x = apply_conv(p, "conv2", &x, 2)?.relu()?;
    apply_conv(p, "conv3", &x, 2)
}

#[derive(Debug, Clone)]
pub struct FeatureVolume {
    /// `[P,D,C]`, zero at invalid cells.
    pub values: Tensor,
    /// `[P·D]` row-major.
    pub valid: Vec<bool>,
    pub h: usize,
    pub w: usize,
}

impl FeatureVolume {
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn depth(&self) -> usize {
        self.valid.len() / self.pixels()
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    /// Whether pixel `p` has at least one valid candidate.
    pub fn pixel_valid(&self) -> Vec<bool> {
        self.valid.chunks(self.depth()).map(|c| c.iter().any(|&v| v)).collect()
    }

    fn cell_mask(&self) -> Result<Tensor> {
        let d = self.depth();
        Ok(Tensor::from_fn(&[self.pixels(), d, 1], |i| f64::from(u8::from(self.valid[i]))))
    }

    /// Per-pixel softmax bias: `(multiplier [P,1], offset [P,D])`. Pixels
    /// without any valid candidate get multiplier 0 and offset 0, so their
    /// distribution is uniform.
    fn logit_mask(&self) -> Result<(Tensor, Tensor)> {
        let d = self.depth();
        let any = self.pixel_valid();
        let mult = Tensor::from_fn(&[self.pixels(), 1], |p| f64::from(u8::from(any[p])));
        let offset = Tensor::from_fn(&[self.pixels(), d], |i| {
            if any[i / d] && !self.valid[i] {
                INVALID_LOGIT
            } else {
                0.0
            }
        });
        Ok((mult, offset))
    }

    fn with_values(&self, values: Tensor) -> Self {
        Self { values, valid: self.valid.clone(), h: self.h, w: self.w }
    }
}

/// Samples `context: [C,h,w]` along every target pixel's epipolar line.
/// `k` must already be expressed at the feature resolution.
pub fn build_feature_volume(
    context: &Tensor,
    bins: &DepthBins,
    k: &Intrinsics,
    pose: &RigidTransform,
) -> Result<FeatureVolume> {
    let (_, h, w) = chw(context, "build_feature_volume")?;
    let (coords, valid) = candidate_grid(h, w, bins, k, pose)?;
    let mut vol = FeatureVolume { values: Tensor::zeros(&[0]), valid, h, w };
    let mask = vol.cell_mask()?;
    vol.values = context.grid_sample(&coords)?.mul(&mask)?;
    Ok(vol)
}

/// Per-pixel candidate distributions with validity.
#[derive(Debug, Clone)]
pub struct CostVolume {
    /// `[P,D]`; every column sums to one.
    pub probs: Tensor,
    /// `[P·D]` candidate validity.
    pub valid: Vec<bool>,
    /// `[P]`; false where no candidate is valid.
    pub pixel_valid: Vec<bool>,
    pub h: usize,
    pub w: usize,
}

impl CostVolume {
    pub fn depth(&self) -> usize {
        self.probs.shape()[1]
    }

    /// Probability column of pixel `(u, v)`.
    pub fn column(&self, u: usize, v: usize) -> &[f64] {
        let d = self.depth();
        let p = v * self.w + u;
        &self.probs.data()[p * d..(p + 1) * d]
    }

    /// One pixel's distribution as CSV `u,v,bin,depth,probability`, header
    /// included.
    pub fn pixel_csv(&self, bins: &DepthBins, u: usize, v: usize) -> Result<String> {
        if u >= self.w || v >= self.h {
            return Err(contract("pixel_csv", format!("pixel ({u},{v}) outside {}x{}", self.w, self.h)));
        }
        if bins.len() != self.depth() {
            return Err(contract("pixel_csv", format!("{} bins for a {}-bin volume", bins.len(), self.depth())));
        }
        let mut out = String::from("u,v,bin,depth,probability\n");
        for (i, a) in self.column(u, v).iter().enumerate() {
            out.push_str(&format!("{u},{v},{i},{},{a}\n", bins.values[i]));
        }
        Ok(out)
    }

    /// Shannon entropy (nats) of every pixel's distribution.
    pub fn entropy(&self) -> Vec<f64> {
        self.probs
            .data()
            .chunks(self.depth())
            .map(|c| c.iter().filter(|&&a| a > 0.0).map(|&a| -a * a.ln()).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub channels: usize,
    pub heads: usize,
    pub layers: usize,
}

impl AttentionShape {
    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn check(&self) -> Result<()> {
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(contract(
                "attention",
                format!("{} channels not divisible by {} heads", self.channels, self.heads),
            ));
        }
        if self.layers == 0 {
            return Err(contract("attention", "need at least one layer"));
        }
        Ok(())
    }
}

/// Attention weights uniform in `±√(1/C_h)`, biases zero. Cross layer `l`
/// owns query/key/value/output projections; self layer `l` (for every
/// cross layer but the last) owns only its query projection.
pub fn init_attention(rng: &mut ChaCha8Rng, shape: AttentionShape) -> Result<ParamGroup> {
    shape.check()?;
    let (c, nh, ch) = (shape.channels, shape.heads, shape.head_dim());
    let bound = (1.0 / ch as f64).sqrt();
    let mut g = ParamGroup::new();
    for l in 0..shape.layers {
        let wq = params::uniform(rng, &[nh, ch, ch], bound);
        let wv = params::uniform(rng, &[nh, ch, ch], bound);
        for (proj, w) in [("q", &wq), ("k", &wq), ("v", &wv)] {
            g.push(format!("cross{l}.w{proj}"), w.clone());
            g.push(format!("cross{l}.b{proj}"), Tensor::zeros(&[nh, 1, ch]));
        }
        g.push(format!("cross{l}.wo"), params::uniform(rng, &[c, c], bound));
        g.push(format!("cross{l}.bo"), Tensor::zeros(&[c]));
        if l + 1 < shape.layers {
            g.push(format!("self{l}.wq"), wq.clone());
            g.push(format!("self{l}.bq"), Tensor::zeros(&[nh, 1, ch]));
        }
    }
    Ok(g)
}

/// `[N,C]` to per-head projections `[N_h, N, C_h]`.
fn project(x: &Tensor, heads: usize, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    if c % heads != 0 || w.shape() != [heads, c / heads, c / heads] {
        return Err(contract("attention", format!("input {:?} vs projection {:?}", x.shape(), w.shape())));
    }
    Ok(x.reshape(&[n, heads, c / heads])?.permute(&[1, 0, 2])?.matmul(w)?.add(b)?)
}

/// Merges per-head values `[N_h,P,D,C_h]` and applies the output map.
fn merge(values: &Tensor, p: &ParamGroup, layer: usize, vol: &FeatureVolume) -> Result<Tensor> {
    let [nh, np, d, ch] = *values.shape() else { unreachable!() };
    let merged = values.permute(&[1, 2, 0, 3])?.reshape(&[np * d, nh * ch])?;
    let out = merged
        .matmul(p.get(&format!("cross{layer}.wo"))?)?
        .add(p.get(&format!("cross{layer}.bo"))?)?
        .reshape(&[np, d, nh * ch])?;
    Ok(out.mul(&vol.cell_mask()?)?)
}

/// Feature map `[C,h,w]` to per-pixel rows `[P,C]`.
pub fn pixel_rows(features: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(features, "pixel_rows")?;
    Ok(features.reshape(&[c, h * w])?.permute(&[1, 0])?)
}

/// One cross-attention layer: queries from `target: [P,C]`, keys and
/// values from the volume. The per-bin output is added to the input
/// volume. Returns the updated volume and the head-averaged attention
/// `[P,D]`.
pub fn cross_attention_layer(
    target: &Tensor,
    vol: &FeatureVolume,
    p: &ParamGroup,
    layer: usize,
    heads: usize,
) -> Result<(FeatureVolume, Tensor)> {
    let (np, d, c) = (vol.pixels(), vol.depth(), vol.channels());
    if target.shape() != [np, c] {
        return Err(contract("cross_attention", format!("target {:?} vs volume {:?}", target.shape(), vol.values.shape())));
    }
    let ch = c / heads;
    let g = |n: &str| p.get(&format!("cross{layer}.{n}"));
    let q = project(target, heads, g("wq")?, g("bq")?)?;
    let cells = vol.values.reshape(&[np * d, c])?;
    let k = project(&cells, heads, g("wk")?, g("bk")?)?;
    let v = project(&cells, heads, g("wv")?, g("bv")?)?;
    let (mult, offset) = vol.logit_mask()?;
    let logits = q
        .reshape(&[heads, np, 1, ch])?
        .mul(&k.reshape(&[heads, np, d, ch])?)?
        .sum_axis(3)?
        .scale(1.0 / (ch as f64).sqrt())?
        .mul(&mult)?
        .add(&offset)?;
    let alpha_h = logits.softmax(2)?;
    let weighted = alpha_h.reshape(&[heads, np, d, 1])?.mul(&v.reshape(&[heads, np, d, ch])?)?;
    let out = vol.values.add(&merge(&weighted, p, layer, vol)?)?;
    Ok((vol.with_values(out), alpha_h.mean_axis(0)?))
}

/// Self-attention among each pixel's candidates. Keys, values and the
/// output map are shared with cross layer `layer`.
pub fn self_attention_layer(vol: &FeatureVolume, p: &ParamGroup, layer: usize, heads: usize) -> Result<FeatureVolume> {
    let (np, d, c) = (vol.pixels(), vol.depth(), vol.channels());
    let ch = c / heads;
    let cells = vol.values.reshape(&[np * d, c])?;
    let g = |n: &str| p.get(&format!("cross{layer}.{n}"));
    let q = project(&cells, heads, p.get(&format!("self{layer}.wq"))?, p.get(&format!("self{layer}.bq"))?)?;
    let k = project(&cells, heads, g("wk")?, g("bk")?)?;
    let v = project(&cells, heads, g("wv")?, g("bv")?)?;
    let (mult, offset) = vol.logit_mask()?;
    let logits = q
        .reshape(&[heads * np, d, ch])?
        .matmul(&k.reshape(&[heads * np, d, ch])?.permute(&[0, 2, 1])?)?
        .reshape(&[heads, np, d, d])?
        .scale(1.0 / (ch as f64).sqrt())?
        .mul(&mult.reshape(&[np, 1, 1])?)?
        .add(&offset.reshape(&[np, 1, d])?)?;
    let alpha = logits.softmax(3)?.reshape(&[heads * np, d, d])?;
    let mixed = alpha.matmul(&v.reshape(&[heads * np, d, ch])?)?.reshape(&[heads, np, d, ch])?;
    Ok(vol.with_values(vol.values.add(&merge(&mixed, p, layer, vol)?)?))
}

/// `L` cross layers with a self layer after each but the last; the final
/// cross attention is the cost volume.
pub fn attention_stack(target: &Tensor, vol: &FeatureVolume, p: &ParamGroup, shape: AttentionShape) -> Result<CostVolume> {
    shape.check()?;
    let mut current = vol.clone();
    let mut alpha = None;
    for l in 0..shape.layers {
        let (out, a) = cross_attention_layer(target, &current, p, l, shape.heads)?;
        alpha = Some(a);
        if l + 1 < shape.layers {
            current = self_attention_layer(&out, p, l, shape.heads)?;
        }
    }
    Ok(CostVolume {
        probs: alpha.expect("at least one layer"),
        valid: vol.valid.clone(),
        pixel_valid: vol.pixel_valid(),
        h: vol.h,
        w: vol.w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Sad,
    Ssim,
}

/// A baseline matching volume: raw dissimilarities, their argmin, and the
/// softmax-of-negated-dissimilarity distribution.
#[derive(Debug, Clone)]
pub struct BaselineVolume {
    /// `[P·D]`, `+∞` at invalid candidates.
    pub dissimilarity: Vec<f64>,
    /// Lowest-dissimilarity valid bin per pixel (ties to the lowest index).
    pub argmin: Vec<usize>,
    pub volume: CostVolume,
}

fn finish_baseline(dis: Vec<f64>, valid: Vec<bool>, h: usize, w: usize, d: usize) -> Result<BaselineVolume> {
    let np = h * w;
    let mut argmin = Vec::with_capacity(np);
    let mut probs = vec![0.0; np * d];
    let mut pixel_valid = Vec::with_capacity(np);
    for p in 0..np {
        let col = &dis[p * d..(p + 1) * d];
        let ok = &valid[p * d..(p + 1) * d];
        let best = (0..d).filter(|&i| ok[i]).fold(None, |b: Option<usize>, i| match b {
            Some(j) if col[j] <= col[i] => Some(j),
            _ => Some(i),
        });
        pixel_valid.push(best.is_some());
        argmin.push(best.unwrap_or(0));
        let out = &mut probs[p * d..(p + 1) * d];
        match best {
            Some(b) => {
                let mut total = 0.0;
                for i in (0..d).filter(|&i| ok[i]) {
                    out[i] = (col[b] - col[i]).exp();
                    total += out[i];
                }
                out.iter_mut().for_each(|a| *a /= total);
            }
            None => out.fill(1.0 / d as f64),
        }
    }
    Ok(BaselineVolume {
        dissimilarity: dis,
        argmin,
        volume: CostVolume { probs: Tensor::new(vec![np, d], probs)?, valid, pixel_valid, h, w },
    })
}

/// Baseline over a feature volume: SAD sums absolute channel differences;
/// SSIM compares 3×3 windows of each depth slice with the target map,
/// averaged over channels, as `(1 − SSIM)/2`.
pub fn baseline_cost_volume(target: &Tensor, vol: &FeatureVolume, metric: Metric) -> Result<BaselineVolume> {
    let (c, h, w) = chw(target, "baseline_cost_volume")?;
    let (np, d) = (vol.pixels(), vol.depth());
    if (h, w, c) != (vol.h, vol.w, vol.channels()) {
        return Err(contract("baseline_cost_volume", format!("target {:?} vs volume {:?}", target.shape(), vol.values.shape())));
    }
    let t = target.detach();
    let values = vol.values.detach();
    let mut dis = vec![0.0; np * d];
    match metric {
        Metric::Sad => {
            let rows = pixel_rows(&t)?;
            for p in 0..np {
                let f = &rows.data()[p * c..(p + 1) * c];
                for i in 0..d {
                    let cand = &values.data()[(p * d + i) * c..(p * d + i + 1) * c];
                    dis[p * d + i] = f.iter().zip(cand).map(|(a, b)| (a - b).abs()).sum();
                }
            }
        }
        Metric::Ssim => {
            // [P,D,C] -> [D,C,h,w] depth slices
            let slices = values.permute(&[1, 2, 0])?;
            for i in 0..d {
                let slice = slices.slice(0, i, 1)?.reshape(&[c, h, w])?;
                let s = ssim_map(&t, &slice)?.mean_axis(0)?;
                for p in 0..np {
                    dis[p * d + i] = (1.0 - s.data()[p]) / 2.0;
                }
            }
        }
    }
    for (x, &ok) in dis.iter_mut().zip(&vol.valid) {
        if !ok {
            *x = f64::INFINITY;
        }
    }
    finish_baseline(dis, vol.valid.clone(), h, w, d)
}

/// Plane-sweep baseline on raw images: the context image is warped onto
/// the target for every bin depth at full resolution and compared with
/// 3×3 SSIM; pixel `(u, v)` of the `1/stride` result reads full-resolution
/// pixel `(stride·u, stride·v)`.
pub fn image_plane_sweep(
    target: &Tensor,
    context: &Tensor,
    bins: &DepthBins,
    k: &Intrinsics,
    pose: &RigidTransform,
    stride: usize,
) -> Result<BaselineVolume> {
    let (_, hh, ww) = chw(target, "image_plane_sweep")?;
    if context.shape() != target.shape() || stride == 0 || hh % stride != 0 || ww % stride != 0 {
        return Err(contract("image_plane_sweep", format!("images {:?}, {:?}, stride {stride}", target.shape(), context.shape())));
    }
    let (h, w, d) = (hh / stride, ww / stride, bins.len());
    let mut dis = vec![0.0; h * w * d];
    let mut valid = vec![false; h * w * d];
    for (i, &depth) in bins.values.iter().enumerate() {
        let plane = Tensor::full(&[hh, ww], depth);
        let (warped, ok) = crate::geometry::warp_image(context, &plane, k, pose)?;
        let s = ssim_map(target, &warped)?.mean_axis(0)?;
        for y in 0..h {
            for x in 0..w {
                let full = y * stride * ww + x * stride;
                let cell = (y * w + x) * d + i;
                valid[cell] = ok[full];
                dis[cell] = if ok[full] { (1.0 - s.data()[full]) / 2.0 } else { f64::INFINITY };
            }
        }
    }
    finish_baseline(dis, valid, h, w, d)
}

/// Stacks per-pixel rows `[P,C]` back into a map `[C,h,w]`.
pub fn rows_to_map(rows: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let c = rows.shape()[1];
    Ok(rows.permute(&[1, 0])?.reshape(&[c, h, w])?)
}

/// Cost volume `[P,D]` as a `[D,h,w]` map stack.
pub fn volume_to_maps(probs: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    rows_to_map(probs, h, w)
}
