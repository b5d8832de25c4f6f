//! Depth from cost volumes: windowed high-response decoding with
//! confidence masking, image-conditioned residual adjustment, and the
//! multi-scale decoder that fuses single-frame features with the volume.

use diffcore::{concat, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::geometry::{chw, DepthBins};
use crate::loss::{mask_tensor, masked_mean};
use crate::matching::{volume_to_maps, CostVolume};
use crate::params::{self, apply_conv, ParamGroup};

pub const EPS_STD: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct HighResponseDepth {
    /// `[h,w]` meters.
    pub depth: Tensor,
    /// Column maximum of the cost volume, `[h·w]`.
    pub confidence: Vec<f64>,
    /// Confident and valid pixels.
    pub mask: Vec<bool>,
    /// Argmax bin per pixel.
    pub peak: Vec<usize>,
}

/// Window `[h−s, h+s]` around the argmax, truncated to the bin range.
pub fn window(peak: usize, s: usize, d: usize) -> (usize, usize) {
    (peak.saturating_sub(s), (peak + s).min(d - 1))
}

/// `(max_i A ≥ λ_min) ∧ valid` per pixel.
pub fn confidence_mask(cost: &CostVolume, lambda_min: f64) -> Vec<bool> {
    cost.probs
        .data()
        .chunks(cost.depth())
        .zip(&cost.pixel_valid)
        .map(|(col, &ok)| ok && col.iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= lambda_min)
        .collect()
}

/// Renormalizes the distribution inside the window around each pixel's
/// peak and takes the expected bin depth. The peak location carries no
/// gradient; the weights and hence the depth do.
pub fn high_response_decode(cost: &CostVolume, bins: &DepthBins, s: usize, lambda_min: f64) -> Result<HighResponseDepth> {
    let d = cost.depth();
    if bins.len() != d {
        return Err(contract("high_response_decode", format!("{} bins for a {d}-bin volume", bins.len())));
    }
    if 2 * s + 1 > d {
        return Err(contract("high_response_decode", format!("window half-width {s} too wide for {d} bins")));
    }
    let np = cost.h * cost.w;
    let peak = cost.probs.argmax_axis(1)?;
    let mut win = vec![0.0; np * d];
    let (mut near, mut far) = (Vec::with_capacity(np), Vec::with_capacity(np));
    for (p, &h) in peak.iter().enumerate() {
        let (lo, hi) = window(h, s, d);
        win[p * d + lo..=p * d + hi].fill(1.0);
        near.push(bins.values[lo]);
        far.push(bins.values[hi]);
    }
    let win = Tensor::new(vec![np, d], win)?;
    let values = Tensor::new(vec![1, d], bins.values.clone())?;
    let kept = cost.probs.mul(&win)?;
    // the weighted mean can round one ulp past the window span
    let depth = kept
        .mul(&values)?
        .sum_axis(1)?
        .div(&kept.sum_axis(1)?)?
        .maximum(&Tensor::new(vec![np], near)?)?
        .minimum(&Tensor::new(vec![np], far)?)?
        .reshape(&[cost.h, cost.w])?;
    let confidence = peak.iter().enumerate().map(|(p, &h)| cost.probs.data()[p * d + h]).collect();
    Ok(HighResponseDepth { depth, confidence, mask: confidence_mask(cost, lambda_min), peak })
}

pub const CONTEXT_WIDTH: usize = 8;

pub fn init_context(rng: &mut ChaCha8Rng) -> ParamGroup {
    let n = CONTEXT_WIDTH;
    let mut g = ParamGroup::new();
    params::conv(&mut g, rng, "in", 4, n, 3);
    for b in 0..2 {
        params::conv(&mut g, rng, &format!("block{b}.a"), n + 1, n, 3);
        params::conv(&mut g, rng, &format!("block{b}.b"), n, n, 3);
    }
    g.push("out.w", Tensor::zeros(&[1, n, 3, 3]));
    g.push("out.b", Tensor::zeros(&[1]));
    g
}

/// Masked-in mean and guarded standard deviation of a depth map.
pub fn depth_statistics(depth: &Tensor, mask: &[bool]) -> Result<(Tensor, Tensor)> {
    if !mask.iter().any(|&m| m) {
        return Err(contract("context_adjust", "no masked-in pixels"));
    }
    let flat = depth.reshape(&[depth.len()])?;
    let mean = masked_mean(&flat, mask)?;
    let centered = flat.sub(&mean)?;
    let var = masked_mean(&centered.mul(&centered)?, mask)?;
    let std = var.clamp_min(EPS_STD * EPS_STD)?.sqrt()?;
    Ok((mean, std))
}

/// `D̂_C = (D̃ + θ(I_t, D̃))·std + mean` with `D̃` the high-response map
/// normalized by its masked-in statistics; clamped to the bin range.
pub fn context_adjust(hr: &HighResponseDepth, image: &Tensor, p: &ParamGroup, bins: &DepthBins) -> Result<Tensor> {
    let [h, w] = *hr.depth.shape() else {
        return Err(contract("context_adjust", "depth must be [h,w]"));
    };
    let (_, ih, iw) = chw(image, "context_adjust")?;
    if ih != 4 * h || iw != 4 * w {
        return Err(contract("context_adjust", format!("image {:?} is not 4× depth {:?}", image.shape(), hr.depth.shape())));
    }
    let (mean, std) = depth_statistics(&hr.depth, &hr.mask)?;
    let norm = hr.depth.sub(&mean)?.div(&std)?.reshape(&[1, h, w])?;
    let small = image.subsample(4)?;
    let mut x = apply_conv(p, "in", &concat(&[&small, &norm], 0)?, 1)?.relu()?;
    for b in 0..2 {
        let y = apply_conv(p, &format!("block{b}.a"), &concat(&[&x, &norm], 0)?, 1)?.relu()?;
        let y = apply_conv(p, &format!("block{b}.b"), &y, 1)?;
        x = x.add(&y)?.relu()?;
    }
    let theta = apply_conv(p, "out", &x, 1)?;
    let out = norm.add(&theta)?.mul(&std)?.add(&mean)?.reshape(&[h, w])?;
    Ok(out.clamp_min(bins.d_min)?.minimum(&Tensor::scalar(bins.d_max))?)
}

pub const DECODER_WIDTHS: [usize; 4] = [64, 32, 32, 16];
const SKIP_WIDTHS: [usize; 3] = [16, 16, 32];
const FUSE_WIDTH: usize = 64;

pub fn init_decoder(rng: &mut ChaCha8Rng, bins: usize) -> ParamGroup {
    let [s1, s2, s3] = SKIP_WIDTHS;
    let [w3, w2, w1, w0] = DECODER_WIDTHS;
    let mut g = ParamGroup::new();
    params::conv(&mut g, rng, "enc1", 3, s1, 3);
    params::conv(&mut g, rng, "enc2", s1, s2, 3);
    params::conv(&mut g, rng, "enc3", s2, s3, 3);
    params::conv(&mut g, rng, "fuse", s3 + bins, FUSE_WIDTH, 3);
    params::conv(&mut g, rng, "enc4", FUSE_WIDTH, FUSE_WIDTH, 3);
    params::conv(&mut g, rng, "dec3", FUSE_WIDTH, w3, 3);
    params::conv(&mut g, rng, "dec2", w3 + FUSE_WIDTH, w2, 3);
    params::conv(&mut g, rng, "dec1", w2 + s2, w1, 3);
    params::conv(&mut g, rng, "dec0", w1 + s1, w0, 3);
    for (i, c) in [w3, w2, w1, w0].into_iter().enumerate() {
        params::conv(&mut g, rng, &format!("head{}", 3 - i), c, 1, 3);
    }
    g
}

/// Maps a sigmoid output linearly onto inverse depth between the range
/// ends.
pub fn sigmoid_to_depth(sigma: &Tensor, bins: &DepthBins) -> Result<Tensor> {
    let (lo, hi) = (1.0 / bins.d_max, 1.0 / bins.d_min);
    Ok(sigma.scale(hi - lo)?.add_scalar(lo)?.powf(-1.0)?)
}

/// Multi-scale predictions, coarsest first; the full set is
/// 1/8, 1/4, 1/2 and full resolution.
#[derive(Debug, Clone)]
pub struct MultiScaleDepth {
    pub maps: Vec<Tensor>,
}

impl MultiScaleDepth {
    pub fn finest_first(&self) -> Vec<Tensor> {
        self.maps.iter().rev().cloned().collect()
    }

    pub fn finest(&self) -> &Tensor {
        self.maps.last().expect("at least one scale")
    }
}

/// Cost volume `[P,D]` as `[D,h,w]` maps with masked-out pixels zeroed.
pub fn masked_cost_maps(cost: &CostVolume, mask: &[bool]) -> Result<Tensor> {
    let keep = mask_tensor(mask, &[mask.len(), 1])?;
    volume_to_maps(&cost.probs.mul(&keep)?, cost.h, cost.w)
}

/// Decodes the image and masked cost volume into the finest `scales` of
/// the four output resolutions.
pub fn multi_scale_decode(image: &Tensor, cost_maps: &Tensor, p: &ParamGroup, bins: &DepthBins, scales: usize) -> Result<MultiScaleDepth> {
    let (_, h, w) = chw(image, "multi_scale_decode")?;
    if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(contract("multi_scale_decode", format!("image {h}x{w} not divisible by 8")));
    }
    if !(1..=4).contains(&scales) {
        return Err(contract("multi_scale_decode", format!("scales must be in 1..=4, got {scales}")));
    }
    if cost_maps.shape()[1..] != [h / 4, w / 4] {
        return Err(contract("multi_scale_decode", format!("cost maps {:?} vs image {h}x{w}", cost_maps.shape())));
    }
    let e1 = apply_conv(p, "enc1", image, 1)?.relu()?;
    let e2 = apply_conv(p, "enc2", &e1, 2)?.relu()?;
    let e3 = apply_conv(p, "enc3", &e2, 2)?.relu()?;
    let fused = apply_conv(p, "fuse", &concat(&[&e3, cost_maps], 0)?, 1)?.relu()?;
    let e4 = apply_conv(p, "enc4", &fused, 2)?.relu()?;

    let head = |x: &Tensor, i: usize| -> Result<Tensor> {
        let s = apply_conv(p, &format!("head{i}"), x, 1)?.sigmoid()?;
        let [1, hh, ww] = *s.shape() else { unreachable!() };
        sigmoid_to_depth(&s.reshape(&[hh, ww])?, bins)
    };
    let mut maps = Vec::with_capacity(4);
    let x = apply_conv(p, "dec3", &e4, 1)?.relu()?;
    maps.push(head(&x, 3)?);
    let x = apply_conv(p, "dec2", &concat(&[&x.upsample_nearest(2)?, &fused], 0)?, 1)?.relu()?;
    maps.push(head(&x, 2)?);
    let x = apply_conv(p, "dec1", &concat(&[&x.upsample_nearest(2)?, &e2], 0)?, 1)?.relu()?;
    maps.push(head(&x, 1)?);
    let x = apply_conv(p, "dec0", &concat(&[&x.upsample_nearest(2)?, &e1], 0)?, 1)?.relu()?;
    maps.push(head(&x, 0)?);
    Ok(MultiScaleDepth { maps: maps.split_off(4 - scales) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sid_bins;

    fn volume(cols: &[&[f64]], h: usize, w: usize) -> CostVolume {
        let d = cols[0].len();
        let data: Vec<f64> = cols.iter().flat_map(|c| c.iter().copied()).collect();
        CostVolume {
            probs: Tensor::new(vec![cols.len(), d], data).unwrap(),
            valid: vec![true; cols.len() * d],
            pixel_valid: vec![true; cols.len()],
            h,
            w,
        }
    }

    #[test]
    fn decode_examples() {
        let bins = sid_bins(2.0, 8.0, 3).unwrap();
        let hr = high_response_decode(&volume(&[&[0.2, 0.6, 0.2]], 1, 1), &bins, 1, 0.1).unwrap();
        assert!((hr.depth.data()[0] - 4.4).abs() < 1e-12);
        assert_eq!(hr.confidence, vec![0.6]);
        let hr = high_response_decode(&volume(&[&[0.0, 1.0, 0.0]], 1, 1), &bins, 1, 0.1).unwrap();
        assert!((hr.depth.data()[0] - 4.0).abs() < 1e-15);
        // peak at bin 0: window {0,1}
        let hr = high_response_decode(&volume(&[&[0.5, 0.3, 0.2]], 1, 1), &bins, 1, 0.1).unwrap();
        assert!((hr.depth.data()[0] - (0.5 * 2.0 + 0.3 * 4.0) / 0.8).abs() < 1e-12);
    }

    #[test]
    fn window_is_truncated() {
        assert_eq!(window(0, 1, 5), (0, 1));
        assert_eq!(window(4, 2, 5), (2, 4));
        assert_eq!(window(2, 1, 5), (1, 3));
    }

    #[test]
    fn sigmoid_endpoints() {
        let bins = sid_bins(0.5, 20.0, 4).unwrap();
        let lo = sigmoid_to_depth(&Tensor::zeros(&[2, 2]), &bins).unwrap();
        let hi = sigmoid_to_depth(&Tensor::full(&[2, 2], 1.0), &bins).unwrap();
        assert!(lo.data().iter().all(|&d| (d - 20.0).abs() < 1e-12));
        assert!(hi.data().iter().all(|&d| (d - 0.5).abs() < 1e-12));
    }
}
