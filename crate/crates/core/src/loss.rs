//! SSIM, photometric reconstruction, edge-aware smoothness, and the
//! weighted sum over every predicted depth map.

use diffcore::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::geometry::{chw, warp_image, Intrinsics, RigidTransform};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Added to the loss of a pixel a context cannot see, so the minimum
/// over contexts picks another one.
const UNSEEN_PENALTY: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_photo: f64,
    pub lambda_s: f64,
    pub lambda_h: f64,
    pub lambda_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha_photo: 0.85, lambda_s: 1e-4, lambda_h: 0.5, lambda_c: 0.5 }
    }
}

impl LossWeights {
    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_photo) {
            return Err(contract("loss weights", format!("alpha_photo {} outside [0,1]", self.alpha_photo)));
        }
        if [self.lambda_s, self.lambda_h, self.lambda_c].iter().any(|&w| !(w >= 0.0)) {
            return Err(contract("loss weights", "weights must be non-negative"));
        }
        Ok(())
    }
}

/// Weight of the `i`-th multi-scale map, `i = 1` being the finest.
pub fn scale_weight(i: usize) -> f64 {
    0.5f64.powi(i as i32)
}

/// Per-pixel, per-channel SSIM of two `[C,H,W]` maps over 3×3 windows.
pub fn ssim_map(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.shape() != y.shape() {
        return Err(contract("ssim", format!("shape mismatch {:?} vs {:?}", x.shape(), y.shape())));
    }
    let mu_x = x.avg_pool3()?;
    let mu_y = y.avg_pool3()?;
    let mu_xx = mu_x.mul(&mu_x)?;
    let mu_yy = mu_y.mul(&mu_y)?;
    let mu_xy = mu_x.mul(&mu_y)?;
    let sxx = x.mul(x)?.avg_pool3()?.sub(&mu_xx)?;
    let syy = y.mul(y)?.avg_pool3()?.sub(&mu_yy)?;
    let sxy = x.mul(y)?.avg_pool3()?.sub(&mu_xy)?;
    let num = mu_xy.scale(2.0)?.add_scalar(SSIM_C1)?.mul(&sxy.scale(2.0)?.add_scalar(SSIM_C2)?)?;
    let den = mu_xx.add(&mu_yy)?.add_scalar(SSIM_C1)?.mul(&sxx.add(&syy)?.add_scalar(SSIM_C2)?)?;
    Ok(num.div(&den)?)
}

/// `α·(1 − SSIM)/2 + (1 − α)·|I − Î|`, averaged over channels: `[H,W]`.
pub fn photometric_map(target: &Tensor, recon: &Tensor, alpha: f64) -> Result<Tensor> {
    let dssim = ssim_map(target, recon)?.neg()?.add_scalar(1.0)?.scale(alpha / 2.0)?;
    let l1 = target.sub(recon)?.abs()?.scale(1.0 - alpha)?;
    Ok(dssim.add(&l1)?.mean_axis(0)?)
}

pub fn mask_tensor(mask: &[bool], shape: &[usize]) -> Result<Tensor> {
    Ok(Tensor::new(shape.to_vec(), mask.iter().map(|&m| f64::from(u8::from(m))).collect())?)
}

/// Mean of `map` over the pixels where `mask` holds.
pub fn masked_mean(map: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(contract("masked_mean", "empty mask"));
    }
    Ok(map.mul(&mask_tensor(mask, map.shape())?)?.sum()?.scale(1.0 / n as f64)?)
}

/// Photometric loss of one reconstruction: the `[H,W]` map and its mean
/// over `mask`.
pub fn photometric_loss(target: &Tensor, recon: &Tensor, mask: &[bool], alpha: f64) -> Result<(Tensor, Tensor)> {
    let map = photometric_map(target, recon, alpha)?;
    let mean = masked_mean(&map, mask)?;
    Ok((map, mean))
}

/// Per-pixel minimum over several `(map, seen)` pairs. A pixel is valid
/// when at least one context sees it.
pub fn min_over_contexts(maps: &[(Tensor, Vec<bool>)]) -> Result<(Tensor, Vec<bool>)> {
    let (first, rest) = maps.split_first().ok_or_else(|| contract("photometric", "no contexts"))?;
    let penalized = |(m, seen): &(Tensor, Vec<bool>)| -> Result<Tensor> {
        let pen = Tensor::new(m.shape().to_vec(), seen.iter().map(|&s| if s { 0.0 } else { UNSEEN_PENALTY }).collect())?;
        Ok(m.add(&pen)?)
    };
    let mut best = penalized(first)?;
    let mut any = first.1.clone();
    for pair in rest {
        best = best.minimum(&penalized(pair)?)?;
        for (a, &s) in any.iter_mut().zip(&pair.1) {
            *a |= s;
        }
    }
    Ok((best, any))
}

/// Edge-aware smoothness of the mean-normalized depth `[H,W]` against the
/// image `[C,H,W]`, using forward differences and normalized by `H·W`.
/// With `mask`, only differences between two masked-in pixels count and
/// the mean is taken over masked-in pixels.
pub fn smoothness_loss(depth: &Tensor, image: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let (_, h, w) = chw(image, "smoothness")?;
    if depth.shape() != [h, w] {
        return Err(contract("smoothness", format!("depth {:?} vs image {:?}", depth.shape(), image.shape())));
    }
    let mean = match mask {
        Some(m) => masked_mean(depth, m)?,
        None => depth.mean()?,
    };
    let norm = depth.div(&mean)?;
    let img = image.detach();
    let mut total = Tensor::scalar(0.0);
    for axis in [0usize, 1] {
        let n = [h, w][axis];
        if n < 2 {
            continue;
        }
        let dd = norm.slice(axis, 1, n - 1)?.sub(&norm.slice(axis, 0, n - 1)?)?.abs()?;
        let di = img.slice(axis + 1, 1, n - 1)?.sub(&img.slice(axis + 1, 0, n - 1)?)?.abs()?.mean_axis(0)?;
        let mut weight = di.neg()?.exp()?;
        if let Some(m) = mask {
            let pair = Tensor::from_fn(weight.shape(), |i| {
                let (y, x) = if axis == 0 { (i / w, i % w) } else { (i / (w - 1), i % (w - 1)) };
                let (a, b) = if axis == 0 { (y * w + x, (y + 1) * w + x) } else { (y * w + x, y * w + x + 1) };
                f64::from(u8::from(m[a] && m[b]))
            });
            weight = weight.mul(&pair)?;
        }
        total = total.add(&dd.mul(&weight)?.sum()?)?;
    }
    Ok(total.scale(1.0 / (h * w) as f64)?)
}

/// One context frame for the loss: image and pose target→context.
#[derive(Debug, Clone)]
pub struct ContextView<'a> {
    pub image: &'a Tensor,
    pub pose: &'a RigidTransform,
}

/// Photometric (minimum over contexts) and smoothness terms of one
/// full-resolution depth map.
#[derive(Debug, Clone)]
pub struct MapLoss {
    pub photometric: Tensor,
    pub smoothness: Tensor,
    pub combined: Tensor,
    pub pixels: usize,
}

pub fn map_loss(
    depth: &Tensor,
    target: &Tensor,
    contexts: &[ContextView<'_>],
    k: &Intrinsics,
    weights: &LossWeights,
    mask: Option<&[bool]>,
) -> Result<MapLoss> {
    if contexts.is_empty() {
        return Err(contract("total_loss", "missing context frames"));
    }
    let mut maps = Vec::with_capacity(contexts.len());
    for ctx in contexts {
        let (recon, seen) = warp_image(ctx.image, depth, k, ctx.pose)?;
        maps.push((photometric_map(target, &recon, weights.alpha_photo)?, seen));
    }
    let (best, mut valid) = min_over_contexts(&maps)?;
    if let Some(m) = mask {
        for (v, &keep) in valid.iter_mut().zip(m) {
            *v &= keep;
        }
    }
    let pixels = valid.iter().filter(|&&v| v).count();
    // a map no context can see carries no photometric signal
    let photometric = if pixels == 0 { Tensor::scalar(0.0) } else { masked_mean(&best, &valid)? };
    let smoothness = smoothness_loss(depth, target, mask)?;
    let combined = photometric.add(&smoothness.scale(weights.lambda_s)?)?;
    Ok(MapLoss { photometric, smoothness, combined, pixels })
}

/// Depth predictions entering the loss, all `[h,w]` at their native
/// resolution.
#[derive(Debug, Clone)]
pub struct Predictions {
    /// High-response depth at 1/4 resolution and its confidence mask.
    pub high_response: Option<(Tensor, Vec<bool>)>,
    pub context_adjusted: Option<Tensor>,
    /// Multi-scale maps ordered finest first.
    pub multi_scale: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: Tensor,
    pub l_h: f64,
    pub l_c: f64,
    /// Finest first.
    pub l_m: Vec<f64>,
    pub weights: LossWeights,
    pub hr_pixels: usize,
}

impl LossReport {
    /// The weighted sum recomputed from the reported components.
    pub fn recombined(&self) -> f64 {
        let m: f64 = self.l_m.iter().enumerate().map(|(i, l)| scale_weight(i + 1) * l).sum();
        self.weights.lambda_h * self.l_h + self.weights.lambda_c * self.l_c + m
    }

    pub fn csv_header(scales: usize) -> String {
        let mut s = "step,total,L_H,L_C".to_string();
        for i in 1..=scales {
            s.push_str(&format!(",L_M{i}"));
        }
        s
    }

    pub fn csv_row(&self, step: usize) -> String {
        let mut s = format!("{step},{:?},{:?},{:?}", self.total.data()[0], self.l_h, self.l_c);
        for l in &self.l_m {
            s.push_str(&format!(",{l:?}"));
        }
        s
    }
}

/// Upsamples a `[h,w]` map to `[H,W]` bilinearly.
pub fn to_full(depth: &Tensor, full_h: usize) -> Result<Tensor> {
    let h = depth.shape()[0];
    if h == 0 || full_h % h != 0 {
        return Err(contract("upsample", format!("{h} rows do not divide {full_h}")));
    }
    let f = full_h / h;
    if f == 1 {
        return Ok(depth.clone());
    }
    Ok(depth.upsample_bilinear(f)?)
}

fn nearest_mask(mask: &[bool], h: usize, w: usize, f: usize) -> Vec<bool> {
    let (fh, fw) = (h * f, w * f);
    (0..fh * fw).map(|i| mask[(i / fw / f) * w + (i % fw) / f]).collect()
}

/// Weighted aggregate `λ_H·L_H + λ_C·L_C + Σ_i 2^{-i}·L_{M_i}`, each term
/// photometric plus weighted smoothness at full resolution.
pub fn total_loss(
    pred: &Predictions,
    target: &Tensor,
    contexts: &[ContextView<'_>],
    k: &Intrinsics,
    weights: &LossWeights,
) -> Result<LossReport> {
    weights.check()?;
    if contexts.is_empty() {
        return Err(contract("total_loss", "missing context frames"));
    }
    let (_, fh, _) = chw(target, "total_loss")?;
    let mut total = Tensor::scalar(0.0);
    let (mut l_h, mut l_c, mut hr_pixels) = (0.0, 0.0, 0);
    if let Some((depth, mask)) = &pred.high_response {
        let [h, w] = *depth.shape() else {
            return Err(contract("total_loss", "high-response depth must be [h,w]"));
        };
        // an empty confidence mask contributes nothing
        if mask.iter().any(|&m| m) {
            let d = if weights.lambda_h > 0.0 { depth.clone() } else { depth.detach() };
            let f = fh / h;
            let full = if f == 1 { d } else { d.upsample_nearest(f)? };
            let ml = map_loss(&full, target, contexts, k, weights, Some(&nearest_mask(mask, h, w, f)))?;
            hr_pixels = ml.pixels;
            l_h = ml.combined.item()?;
            if weights.lambda_h > 0.0 {
                total = total.add(&ml.combined.scale(weights.lambda_h)?)?;
            }
        }
    }
    if let Some(depth) = &pred.context_adjusted {
        let d = if weights.lambda_c > 0.0 { depth.clone() } else { depth.detach() };
        let ml = map_loss(&to_full(&d, fh)?, target, contexts, k, weights, None)?;
        l_c = ml.combined.item()?;
        if weights.lambda_c > 0.0 {
            total = total.add(&ml.combined.scale(weights.lambda_c)?)?;
        }
    }
    let mut l_m = Vec::with_capacity(pred.multi_scale.len());
    for (i, depth) in pred.multi_scale.iter().enumerate() {
        let ml = map_loss(&to_full(depth, fh)?, target, contexts, k, weights, None)?;
        l_m.push(ml.combined.item()?);
        total = total.add(&ml.combined.scale(scale_weight(i + 1))?)?;
    }
    Ok(LossReport { total, l_h, l_c, l_m, weights: *weights, hr_pixels })
}
