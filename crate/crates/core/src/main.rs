use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use mfdepth::checkpoint::{swap_attention, Checkpoint};
use mfdepth::eval::DEFAULT_CAP;
use mfdepth::inference::{compare_outputs, infer, metrics_csv};
use mfdepth::model::forward;
use mfdepth::pnm::{encode_pgm16, encode_pgm8, write_bytes};
use mfdepth::synthdata::{generate_dataset, read_dataset, read_manifest, read_sample, write_dataset, FrameSample, Layout, SceneSpec, DEPTH_SCALE};
use mfdepth::train::{train, TrainConfig};
use mfdepth::{Error, Result};

/// Multi-frame depth from epipolar attention: synthetic data, training,
/// inference and evaluation.
#[derive(Parser, Debug)]
#[command(name = "mfdepth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset.
    GenData(GenData),
    /// Train a model; writes epoch_NNN.ckpt and loss.csv.
    Train(Train),
    /// Write final depth (16-bit PGM) and confidence (8-bit PGM) per sample.
    Infer(Infer),
    /// Metrics CSV with one row per checkpoint and output kind.
    Eval(Eval),
    /// One pixel's cost-volume distribution as CSV.
    InspectVolume(Inspect),
    /// Metrics CSV with one row per output kind for one checkpoint.
    CompareBaselines(Compare),
    /// Checkpoint A with the attention group of checkpoint B.
    SwapAttention(Swap),
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    /// Comma-separated scene layouts, cycled over samples.
    #[arg(long, value_delimiter = ',', default_values = ["fronto", "slanted", "height-field"])]
    layouts: Vec<Layout>,
    #[arg(long)]
    octaves: Option<u32>,
    #[arg(long)]
    contrast: Option<f64>,
    /// Finest texture wavelength in pixels.
    #[arg(long)]
    finest_px: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Profile {
    Desk,
    FullWidth,
}

#[derive(Args, Debug)]
struct Train {
    /// JSON training config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults used when no config file is given.
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    freeze_attention: bool,
    /// Pose perturbation std: radians per axis, baseline fraction per axis.
    #[arg(long)]
    pose_noise: Option<f64>,
}

#[derive(Args, Debug)]
struct Source {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Restrict to one sample of the dataset.
    #[arg(long)]
    sample: Option<String>,
}

#[derive(Args, Debug)]
struct Infer {
    #[command(flatten)]
    src: Source,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    median_scale: bool,
    #[arg(long, default_value_t = DEFAULT_CAP)]
    cap: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Inspect {
    #[command(flatten)]
    src: Source,
    /// Pixel `u,v` at cost-volume (1/4) resolution.
    #[arg(long, value_parser = parse_pixel)]
    pixel: (usize, usize),
    /// Also dump the full `[P,D]` cost volume as a tensor file.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Compare {
    #[command(flatten)]
    src: Source,
    #[arg(long)]
    median_scale: bool,
    #[arg(long, default_value_t = DEFAULT_CAP)]
    cap: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Swap {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_pixel(s: &str) -> std::result::Result<(usize, usize), String> {
    let (u, v) = s.split_once(',').ok_or_else(|| format!("expected u,v, got {s:?}"))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((parse(u)?, parse(v)?))
}

fn samples(src: &Source) -> Result<Vec<FrameSample>> {
    match &src.sample {
        Some(name) => Ok(vec![read_sample(&src.data, name)?]),
        None => read_dataset(&src.data),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_data(a: &GenData) -> Result<()> {
    let mut base = SceneSpec::desk(a.seed, a.layouts[0]);
    if let Some(o) = a.octaves {
        base.texture.octaves = o;
    }
    if let Some(c) = a.contrast {
        base.texture.contrast = c;
    }
    if let Some(f) = a.finest_px {
        base.texture.finest_px = f;
    }
    base.check()?;
    let data = generate_dataset(&base, &a.layouts, a.samples, a.seed)?;
    write_dataset(&data, &a.out)?;
    info!("wrote {} samples to {}", data.len(), a.out.display());
    Ok(())
}

fn run_train(a: &Train) -> Result<()> {
    let data = a.data.clone().unwrap_or_default();
    let mut cfg = match (&a.config, a.profile) {
        (Some(path), _) => TrainConfig::load(path)?,
        (None, Profile::Desk) => TrainConfig::desk(&data),
        (None, Profile::FullWidth) => TrainConfig::full_width(&data),
    };
    if let Some(d) = &a.data {
        cfg.dataset = d.clone();
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    if let Some(lr) = a.lr {
        cfg.optimizer.lr = lr;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(l) = a.lambda_min {
        cfg.model.lambda_min = l;
    }
    if let Some(n) = a.pose_noise {
        cfg.pose_noise = n;
    }
    cfg.freeze_attention |= a.freeze_attention;
    let outcome = train(&cfg, &a.out)?;
    info!("{} checkpoints in {}", outcome.checkpoints.len(), a.out.display());
    Ok(())
}

fn run_infer(a: &Infer) -> Result<()> {
    let ck = Checkpoint::load(&a.src.checkpoint)?;
    let cfg = &ck.config.model;
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io { path: a.out.clone(), source })?;
    for s in samples(&a.src)? {
        let (depth, conf) = infer(&ck.model, cfg, &s)?;
        write_bytes(&a.out.join(format!("{}_depth.pgm", s.name)), &encode_pgm16(&depth, DEPTH_SCALE)?)?;
        write_bytes(&a.out.join(format!("{}_confidence.pgm", s.name)), &encode_pgm8(&conf, cfg.width, cfg.height))?;
    }
    Ok(())
}

fn run_eval(a: &Eval) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let mut text = format!("checkpoint,kind,{}\n", mfdepth::eval::DepthMetrics::CSV_HEADER);
    for path in &a.checkpoint {
        let ck = Checkpoint::load(path)?;
        let rows = compare_outputs(&ck.model, &ck.config.model, &data, a.median_scale, a.cap)?;
        text.push_str(&metrics_csv(&rows, Some(&path.display().to_string())));
    }
    emit(&text, a.out.as_deref())
}

fn run_inspect(a: &Inspect) -> Result<()> {
    let ck = Checkpoint::load(&a.src.checkpoint)?;
    let cfg = &ck.config.model;
    let name = match &a.src.sample {
        Some(n) => n.clone(),
        None => read_manifest(&a.src.data)?.into_iter().next().ok_or_else(|| Error::Config("dataset has no samples".into()))?,
    };
    let s = read_sample(&a.src.data, &name)?;
    let fwd = forward(&ck.model, cfg, &s.target, &s.prev, &s.intrinsics, &s.pose_prev)?;
    if let Some(path) = &a.dump {
        write_bytes(path, &diffcore::io::encode(&fwd.cost.probs)?)?;
    }
    let (u, v) = a.pixel;
    emit(&fwd.cost.pixel_csv(&cfg.depth_bins()?, u, v)?, None)
}

fn run_compare(a: &Compare) -> Result<()> {
    let ck = Checkpoint::load(&a.src.checkpoint)?;
    let rows = compare_outputs(&ck.model, &ck.config.model, &samples(&a.src)?, a.median_scale, a.cap)?;
    let text = format!("kind,{}\n{}", mfdepth::eval::DepthMetrics::CSV_HEADER, metrics_csv(&rows, None));
    emit(&text, a.out.as_deref())
}

fn run_swap(a: &Swap) -> Result<()> {
    let hybrid = swap_attention(&Checkpoint::load(&a.a)?, &Checkpoint::load(&a.b)?)?;
    hybrid.save(&a.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Infer(a) => run_infer(a),
        Command::Eval(a) => run_eval(a),
        Command::InspectVolume(a) => run_inspect(a),
        Command::CompareBaselines(a) => run_compare(a),
        Command::SwapAttention(a) => run_swap(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
