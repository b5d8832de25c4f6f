//! Training configuration, Adam, and the seeded training loop.

use std::path::{Path, PathBuf};

use diffcore::{Gradients, Record, Tensor};
use log::{debug, info};
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{contract, io_err, Error, Result};
use crate::geometry::RigidTransform;
use crate::loss::{total_loss, ContextView, LossReport, LossWeights};
use crate::model::{forward, Model, ModelConfig};
use crate::params::ParamGroup;
use crate::synthdata::{read_dataset, FrameSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    /// Epochs between learning-rate halvings.
    pub halving_period: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, lr: 2e-4, halving_period: 20 }
    }
}

impl OptimizerConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * 0.5f64.powi((epoch / self.halving_period.max(1)) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Stops early once this many steps have run.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub freeze_attention: bool,
    /// Standard deviation of the pose perturbation: radians per rotation
    /// axis and a fraction of the baseline per translation axis.
    pub pose_noise: f64,
}

impl TrainConfig {
    /// Toy-width profile for 64×64 synthetic data.
    pub fn desk(dataset: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            model: ModelConfig::desk(),
            weights: LossWeights::default(),
            optimizer: OptimizerConfig { lr: 1e-3, halving_period: 20, ..OptimizerConfig::default() },
            epochs: 25,
            max_steps: Some(500),
            seed: 0,
            freeze_attention: false,
            pose_noise: 0.0,
        }
    }

    pub fn full_width(dataset: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            model: ModelConfig::full_width(),
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 25,
            max_steps: None,
            seed: 0,
            freeze_attention: false,
            pose_noise: 0.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        self.model.check()?;
        self.weights.check()?;
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(contract("train config", "bad optimizer hyperparameters"));
        }
        if o.halving_period == 0 || self.epochs == 0 {
            return Err(contract("train config", "epochs and halving period must be positive"));
        }
        if !(self.pose_noise >= 0.0) {
            return Err(contract("train config", "pose noise must be non-negative"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, opt: &OptimizerConfig, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(contract(
            "adam_step",
            format!("{} parameters, {} gradients, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
        state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + opt.eps);
    }
    Ok(())
}

fn update_group(
    group: &ParamGroup,
    tracked: &ParamGroup,
    grads: &Gradients,
    states: &mut [AdamState],
    opt: &OptimizerConfig,
    lr: f64,
) -> Result<ParamGroup> {
    let mut i = 0;
    let tracked: Vec<&Tensor> = tracked.tensors().collect();
    group.map(|_, t| {
        let mut data = t.to_vec();
        let g = grads.get(tracked[i]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        adam_step(&mut data, &g, &mut states[i], opt, lr)?;
        i += 1;
        Ok(Tensor::new(t.shape().to_vec(), data)?)
    })
}

/// Perturbs a pose by uniform noise of standard deviation `sigma`.
pub fn perturb_pose(rng: &mut ChaCha8Rng, pose: &RigidTransform, sigma: f64) -> RigidTransform {
    if sigma == 0.0 {
        return *pose;
    }
    let half = sigma * 3f64.sqrt();
    let mut draw = || Vector3::new(rng.gen_range(-half..=half), rng.gen_range(-half..=half), rng.gen_range(-half..=half));
    let w = draw();
    let dt = draw() * pose.t.norm();
    let noise = RigidTransform::from_axis_angle(w, dt);
    noise.compose(pose)
}

/// Forward pass and loss of one sample; the cost volume uses the
/// previous frame, the loss both neighbours.
pub fn sample_loss(model: &Model, cfg: &ModelConfig, weights: &LossWeights, s: &FrameSample, poses: (&RigidTransform, &RigidTransform)) -> Result<LossReport> {
    let fwd = forward(model, cfg, &s.target, &s.prev, &s.intrinsics, poses.0)?;
    let contexts = [ContextView { image: &s.prev, pose: poses.0 }, ContextView { image: &s.next, pose: poses.1 }];
    total_loss(&fwd.predictions(), &s.target, &contexts, &s.intrinsics, weights)
}

/// Outcome of a training run held in memory.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Loss CSV, header included.
    pub csv: String,
    /// Serialized checkpoint after each (possibly partial) epoch.
    pub checkpoints: Vec<Vec<u8>>,
}

/// Trains on in-memory samples. `on_epoch` sees each finished checkpoint.
pub fn train_samples(
    cfg: &TrainConfig,
    samples: &[FrameSample],
    mut on_epoch: impl FnMut(usize, &[u8]) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.check()?;
    if samples.is_empty() {
        return Err(contract("train", "dataset has no samples"));
    }
    let m = &cfg.model;
    if let Some(s) = samples.iter().find(|s| s.target.shape() != [3, m.height, m.width]) {
        return Err(contract("train", format!("sample {} is {:?}, model expects 3x{}x{}", s.name, s.target.shape(), m.height, m.width)));
    }
    let mut model = Model::init(m, cfg.seed)?;
    let mut states: Vec<Vec<AdamState>> =
        model.groups().iter().map(|g| g.tensors().map(|t| AdamState::new(t.len())).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7a11));
    let mut csv = LossReport::csv_header(m.scales);
    csv.push('\n');
    let mut checkpoints = Vec::new();
    let mut step = 0usize;
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    for epoch in 0..cfg.epochs {
        if step >= limit {
            break;
        }
        let lr = cfg.optimizer.lr_at(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        for &i in &order {
            if step >= limit {
                break;
            }
            let s = &samples[i];
            let prev = perturb_pose(&mut rng, &s.pose_prev, cfg.pose_noise);
            let next = perturb_pose(&mut rng, &s.pose_next, cfg.pose_noise);
            let record = Record::new();
            let mut tracked = model.tracked(&record);
            if cfg.freeze_attention {
                tracked.attention = model.attention.clone();
            }
            let report = sample_loss(&tracked, m, &cfg.weights, s, (&prev, &next))?;
            let grads = report.total.backward()?;
            let frozen = [false, cfg.freeze_attention, false, false];
            let fresh: Vec<ParamGroup> = model
                .groups()
                .into_iter()
                .zip(tracked.groups())
                .zip(states.iter_mut())
                .zip(frozen)
                .map(|(((g, tg), st), freeze)| if freeze { Ok(g.clone()) } else { update_group(g, tg, &grads, st, &cfg.optimizer, lr) })
                .collect::<Result<_>>()?;
            model = Model::from_groups(fresh)?;
            csv.push_str(&report.csv_row(step));
            csv.push('\n');
            debug!("step {step} epoch {epoch} sample {} total {:.6}", s.name, report.total.item()?);
            step += 1;
        }
        let ckpt = Checkpoint { config: cfg.clone(), epoch: epoch as u64, step: step as u64, model: model.clone() };
        let bytes = ckpt.to_bytes()?;
        on_epoch(epoch, &bytes)?;
        checkpoints.push(bytes);
        info!("epoch {epoch} done after {step} steps");
    }
    Ok(TrainOutcome { model, csv, checkpoints })
}

/// Trains on `cfg.dataset`, writing `epoch_NNN.ckpt` files and
/// `loss.csv` into `out`.
pub fn train(cfg: &TrainConfig, out: &Path) -> Result<TrainOutcome> {
    if !cfg.dataset.join("manifest.txt").is_file() {
        return Err(contract("train", format!("dataset {} not found", cfg.dataset.display())));
    }
    let samples = read_dataset(&cfg.dataset)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let outcome = train_samples(cfg, &samples, |epoch, bytes| {
        let path = out.join(format!("epoch_{epoch:03}.ckpt"));
        std::fs::write(&path, bytes).map_err(io_err(&path))
    })?;
    let path = out.join("loss.csv");
    std::fs::write(&path, &outcome.csv).map_err(io_err(&path))?;
    Ok(outcome)
}
