//! Model configuration, parameter groups and the full forward pass from a
//! target/context pair to every depth output.

use diffcore::{Record, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoding::{
    context_adjust, high_response_decode, init_context, init_decoder, masked_cost_maps, multi_scale_decode,
    HighResponseDepth, MultiScaleDepth,
};
use crate::error::{contract, Result};
use crate::geometry::{sid_bins, DepthBins, Intrinsics, RigidTransform};
use crate::loss::Predictions;
use crate::matching::{
    attention_stack, build_feature_volume, encode, init_attention, init_encoder, pixel_rows, AttentionShape,
    CostVolume, FeatureVolume,
};
use crate::params::ParamGroup;

/// Stride between image and feature resolution.
pub const FEATURE_STRIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width: usize,
    pub height: usize,
    /// Depth bins `D`.
    pub bins: usize,
    /// Feature channels `C`.
    pub channels: usize,
    pub heads: usize,
    pub layers: usize,
    /// Multi-scale outputs `S`.
    pub scales: usize,
    /// High-response window half-width `s`.
    pub window: usize,
    pub lambda_min: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            width: 64,
            height: 64,
            bins: 64,
            channels: 32,
            heads: 4,
            layers: 2,
            scales: 4,
            window: 1,
            lambda_min: 0.0,
            d_min: 2.0,
            d_max: 12.0,
        }
    }

    pub fn full_width() -> Self {
        Self {
            width: 640,
            height: 192,
            bins: 128,
            channels: 128,
            heads: 8,
            layers: 6,
            scales: 4,
            window: 1,
            lambda_min: 0.1,
            d_min: 0.1,
            d_max: 100.0,
        }
    }

    pub fn attention_shape(&self) -> AttentionShape {
        AttentionShape { channels: self.channels, heads: self.heads, layers: self.layers }
    }

    pub fn depth_bins(&self) -> Result<DepthBins> {
        sid_bins(self.d_min, self.d_max, self.bins)
    }

    pub fn check(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width % 8 != 0 || self.height % 8 != 0 {
            return Err(contract("model config", format!("image size {}x{} not divisible by 8", self.width, self.height)));
        }
        if !(1..=4).contains(&self.scales) {
            return Err(contract("model config", format!("scales must be in 1..=4, got {}", self.scales)));
        }
        if 2 * self.window + 1 > self.bins {
            return Err(contract("model config", format!("window {} too wide for {} bins", self.window, self.bins)));
        }
        if !(0.0..=1.0).contains(&self.lambda_min) {
            return Err(contract("model config", format!("lambda_min {} outside [0,1]", self.lambda_min)));
        }
        self.attention_shape().check()?;
        self.depth_bins().map(|_| ())
    }
}

/// The four separately stored parameter groups.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: ParamGroup,
    pub attention: ParamGroup,
    pub decoder: ParamGroup,
    pub context: ParamGroup,
}

pub const GROUP_NAMES: [&str; 4] = ["encoder", "attention", "decoder", "context"];

impl Model {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            encoder: init_encoder(&mut rng, cfg.channels),
            attention: init_attention(&mut rng, cfg.attention_shape())?,
            decoder: init_decoder(&mut rng, cfg.bins),
            context: init_context(&mut rng),
        })
    }

    pub fn groups(&self) -> [&ParamGroup; 4] {
        [&self.encoder, &self.attention, &self.decoder, &self.context]
    }

    pub fn groups_mut(&mut self) -> [&mut ParamGroup; 4] {
        [&mut self.encoder, &mut self.attention, &mut self.decoder, &mut self.context]
    }

    pub fn from_groups(mut groups: Vec<ParamGroup>) -> Result<Self> {
        if groups.len() != 4 {
            return Err(contract("model", format!("expected 4 parameter groups, got {}", groups.len())));
        }
        let context = groups.pop().expect("len checked");
        let decoder = groups.pop().expect("len checked");
        let attention = groups.pop().expect("len checked");
        let encoder = groups.pop().expect("len checked");
        Ok(Self { encoder, attention, decoder, context })
    }

    pub fn tracked(&self, record: &Record) -> Self {
        Self {
            encoder: self.encoder.tracked(record),
            attention: self.attention.tracked(record),
            decoder: self.decoder.tracked(record),
            context: self.context.tracked(record),
        }
    }

    pub fn numel(&self) -> usize {
        self.groups().iter().map(|g| g.numel()).sum()
    }

    /// All parameters as one flat vector, groups in storage order.
    pub fn flatten(&self) -> Tensor {
        let mut out = Vec::with_capacity(self.numel());
        for g in self.groups() {
            g.flatten_into(&mut out);
        }
        let n = out.len();
        Tensor::new(vec![n], out).expect("length matches")
    }

    /// Rebuilds a model with this layout from a flat vector, keeping any
    /// derivative tracking of `flat`.
    pub fn from_flat(&self, flat: &Tensor) -> Result<Self> {
        let mut at = 0;
        let mut groups = Vec::with_capacity(4);
        for g in self.groups() {
            let (rebuilt, next) = g.from_flat(flat, at)?;
            groups.push(rebuilt);
            at = next;
        }
        if at != flat.len() {
            return Err(contract("model", format!("flat vector of {} for {at} parameters", flat.len())));
        }
        Self::from_groups(groups)
    }
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct Forward {
    pub volume: FeatureVolume,
    pub cost: CostVolume,
    pub high_response: HighResponseDepth,
    /// Absent when the confidence mask is empty.
    pub context_adjusted: Option<Tensor>,
    pub multi_scale: MultiScaleDepth,
}

impl Forward {
    pub fn predictions(&self) -> Predictions {
        Predictions {
            high_response: Some((self.high_response.depth.clone(), self.high_response.mask.clone())),
            context_adjusted: self.context_adjusted.clone(),
            multi_scale: self.multi_scale.finest_first(),
        }
    }
}

/// Runs the model on a target frame and the context used for the cost
/// volume. `k` is at image resolution; `pose` maps target to context.
pub fn forward(
    model: &Model,
    cfg: &ModelConfig,
    target: &Tensor,
    context: &Tensor,
    k: &Intrinsics,
    pose: &RigidTransform,
) -> Result<Forward> {
    if target.shape() != [3, cfg.height, cfg.width] || context.shape() != target.shape() {
        return Err(contract(
            "forward",
            format!("frames {:?} / {:?} for a {}x{} model", target.shape(), context.shape(), cfg.width, cfg.height),
        ));
    }
    let bins = cfg.depth_bins()?;
    let kf = k.scaled(1.0 / FEATURE_STRIDE as f64);
    let ft = encode(&model.encoder, target)?;
    let fc = encode(&model.encoder, context)?;
    let volume = build_feature_volume(&fc, &bins, &kf, pose)?;
    let cost = attention_stack(&pixel_rows(&ft)?, &volume, &model.attention, cfg.attention_shape())?;
    let hr = high_response_decode(&cost, &bins, cfg.window, cfg.lambda_min)?;
    let context_adjusted =
        if hr.mask.iter().any(|&m| m) { Some(context_adjust(&hr, target, &model.context, &bins)?) } else { None };
    let maps = masked_cost_maps(&cost, &hr.mask)?;
    let multi_scale = multi_scale_decode(target, &maps, &model.decoder, &bins, cfg.scales)?;
    Ok(Forward { volume, cost, high_response: hr, context_adjusted, multi_scale })
}
