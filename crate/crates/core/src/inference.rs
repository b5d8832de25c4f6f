//! Full-resolution depth for every output kind of a trained model, and
//! metric tables comparing them.

use diffcore::Tensor;

use crate::error::{contract, Result};
use crate::eval::{compute_metrics, DepthMetrics};
use crate::loss::to_full;
use crate::matching::{baseline_cost_volume, encode, Metric};
use crate::model::{forward, Forward, Model, ModelConfig, FEATURE_STRIDE};
use crate::synthdata::FrameSample;

/// Output kinds in table order, coarse baselines first.
pub fn output_kinds(scales: usize) -> Vec<String> {
    let mut kinds: Vec<String> =
        ["sad-argmin", "ssim-argmin", "high-response", "context-adjusted"].iter().map(|s| s.to_string()).collect();
    let names = ["1/8", "1/4", "1/2", "full"];
    kinds.extend(names[4 - scales..].iter().map(|n| format!("decoded-{n}")));
    kinds
}

/// A full-resolution depth map and the pixels it covers.
#[derive(Debug, Clone)]
pub struct KindDepth {
    pub kind: String,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

fn nearest_full(map: &[f64], h: usize, w: usize, f: usize) -> Vec<f64> {
    let fw = w * f;
    (0..h * f * fw).map(|i| map[(i / fw / f) * w + (i % fw) / f]).collect()
}

fn nearest_mask(mask: &[bool], h: usize, w: usize, f: usize) -> Vec<bool> {
    let fw = w * f;
    (0..h * f * fw).map(|i| mask[(i / fw / f) * w + (i % fw) / f]).collect()
}

/// Baseline argmin depth `[h·w]` and pixel validity on the model's own
/// features.
pub fn baseline_depth(model: &Model, cfg: &ModelConfig, fwd: &Forward, target: &Tensor, metric: Metric) -> Result<(Vec<f64>, Vec<bool>)> {
    let bins = cfg.depth_bins()?;
    let ft = encode(&model.encoder, target)?;
    let base = baseline_cost_volume(&ft, &fwd.volume, metric)?;
    Ok((base.argmin.iter().map(|&i| bins.values[i]).collect(), base.volume.pixel_valid))
}

/// Every output kind of one sample at full resolution.
pub fn predict_kinds(model: &Model, cfg: &ModelConfig, s: &FrameSample) -> Result<Vec<KindDepth>> {
    let fwd = forward(model, cfg, &s.target, &s.prev, &s.intrinsics, &s.pose_prev)?;
    let (h, w) = (cfg.height / FEATURE_STRIDE, cfg.width / FEATURE_STRIDE);
    let f = FEATURE_STRIDE;
    let full = cfg.height * cfg.width;
    let mut out = Vec::new();
    for (kind, metric) in [("sad-argmin", Metric::Sad), ("ssim-argmin", Metric::Ssim)] {
        let (d, valid) = baseline_depth(model, cfg, &fwd, &s.target, metric)?;
        out.push(KindDepth { kind: kind.into(), depth: nearest_full(&d, h, w, f), valid: nearest_mask(&valid, h, w, f) });
    }
    let hr = &fwd.high_response;
    out.push(KindDepth {
        kind: "high-response".into(),
        depth: nearest_full(hr.depth.data(), h, w, f),
        valid: nearest_mask(&hr.mask, h, w, f),
    });
    let ca = match &fwd.context_adjusted {
        Some(d) => KindDepth { kind: "context-adjusted".into(), depth: to_full(d, cfg.height)?.to_vec(), valid: vec![true; full] },
        None => KindDepth { kind: "context-adjusted".into(), depth: vec![cfg.d_max; full], valid: vec![false; full] },
    };
    out.push(ca);
    let kinds = output_kinds(cfg.scales);
    for (map, kind) in fwd.multi_scale.maps.iter().zip(&kinds[4..]) {
        out.push(KindDepth { kind: kind.clone(), depth: to_full(map, cfg.height)?.to_vec(), valid: vec![true; full] });
    }
    Ok(out)
}

/// Metrics per output kind, pooling pixels over all samples.
pub fn compare_outputs(
    model: &Model,
    cfg: &ModelConfig,
    samples: &[FrameSample],
    median_scale: bool,
    cap: f64,
) -> Result<Vec<(String, Option<DepthMetrics>)>> {
    if samples.is_empty() {
        return Err(contract("compare_outputs", "no samples"));
    }
    let kinds = output_kinds(cfg.scales);
    let mut pooled: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)> = vec![Default::default(); kinds.len()];
    for s in samples {
        for (slot, k) in pooled.iter_mut().zip(predict_kinds(model, cfg, s)?) {
            slot.0.extend(k.depth);
            slot.1.extend_from_slice(s.depth.data());
            slot.2.extend(k.valid);
        }
    }
    Ok(kinds
        .into_iter()
        .zip(pooled)
        .map(|(k, (p, g, v))| {
            let m = if v.iter().any(|&x| x) { compute_metrics(&p, &g, &v, median_scale, cap).ok() } else { None };
            (k, m)
        })
        .collect())
}

/// Metrics CSV rows, optionally prefixed by a checkpoint label. Kinds
/// without any evaluated pixel get empty fields and a zero count.
pub fn metrics_csv(rows: &[(String, Option<DepthMetrics>)], checkpoint: Option<&str>) -> String {
    let mut out = String::new();
    for (kind, m) in rows {
        if let Some(c) = checkpoint {
            out.push_str(c);
            out.push(',');
        }
        out.push_str(kind);
        out.push(',');
        match m {
            Some(m) => out.push_str(&m.csv()),
            None => out.push_str(",,,,,,,0"),
        }
        out.push('\n');
    }
    out
}

/// Final depth at full resolution and the high-response confidence as
/// 8-bit levels, nearest-upsampled from feature resolution.
pub fn infer(model: &Model, cfg: &ModelConfig, s: &FrameSample) -> Result<(Tensor, Vec<u8>)> {
    let fwd = forward(model, cfg, &s.target, &s.prev, &s.intrinsics, &s.pose_prev)?;
    let depth = to_full(fwd.multi_scale.finest(), cfg.height)?;
    let (h, w) = (cfg.height / FEATURE_STRIDE, cfg.width / FEATURE_STRIDE);
    let conf = nearest_full(&fwd.high_response.confidence, h, w, FEATURE_STRIDE);
    Ok((depth, conf.iter().map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8).collect()))
}
