//! Procedural scenes with analytic depth: fronto-parallel and slanted
//! planes or a smooth height field, textured with multi-octave value noise
//! and rendered by ray casting. Samples hold a target frame, its two
//! neighbours, ground-truth depth, relative poses and per-context
//! visibility masks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use diffcore::Tensor;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, io_err, Error, Result};
use crate::geometry::{chw, CameraFile, Intrinsics, RigidTransform};
use crate::pnm;

pub const DATASET_VERSION: u32 = 1;
const MANIFEST_MAGIC: &str = "mfdepth-dataset";
/// Meters per unit of stored 16-bit depth.
pub const DEPTH_SCALE: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Fronto,
    Slanted,
    HeightField,
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fronto" => Ok(Layout::Fronto),
            "slanted" => Ok(Layout::Slanted),
            "height-field" => Ok(Layout::HeightField),
            _ => Err(format!("unknown layout {s:?} (fronto, slanted, height-field)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub octaves: u32,
    /// Peak deviation from the base colour.
    pub contrast: f64,
    /// Wavelength of the finest octave in pixels at the surface's far end.
    pub finest_px: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self { octaves: 4, contrast: 0.5, finest_px: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub layout: Layout,
    /// Surface count for plane layouts, background included.
    pub planes: usize,
    pub depth_range: (f64, f64),
    pub texture: TextureSpec,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    /// Disparity span at `1/feature_stride` resolution the motion is
    /// drawn to respect.
    pub disparity_px: (f64, f64),
    pub feature_stride: usize,
    /// Largest per-axis camera rotation, radians.
    pub max_rotation: f64,
}

impl SceneSpec {
    pub fn desk(seed: u64, layout: Layout) -> Self {
        Self {
            seed,
            layout,
            planes: 3,
            depth_range: (2.5, 10.0),
            texture: TextureSpec::default(),
            width: 64,
            height: 64,
            fx: 57.6,
            disparity_px: (2.0, 12.0),
            feature_stride: 4,
            max_rotation: 0.004,
        }
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(self.fx, self.fx, (self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn check(&self) -> Result<()> {
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(contract("scene spec", format!("bad depth range {lo}..{hi}")));
        }
        if hi / DEPTH_SCALE > 65535.0 {
            return Err(contract("scene spec", format!("depth {hi} exceeds the 16-bit depth range")));
        }
        if self.width == 0 || self.height == 0 || self.width % 8 != 0 || self.height % 8 != 0 {
            return Err(contract("scene spec", format!("image size {}x{} not divisible by 8", self.width, self.height)));
        }
        if self.planes == 0 || self.texture.octaves < 3 || !(self.texture.finest_px > 0.0) {
            return Err(contract("scene spec", "need at least one plane and three texture octaves"));
        }
        let (dlo, dhi) = self.disparity_px;
        if !(dlo > 0.0 && dlo < dhi) || self.feature_stride == 0 {
            return Err(contract("scene spec", format!("bad disparity span {dlo}..{dhi}")));
        }
        self.intrinsics().map(|_| ())
    }
}

/// Multi-octave value noise on the plane, one lattice per colour channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub seed: u64,
    /// Wavelength of the coarsest octave, meters.
    pub wavelength: f64,
    pub octaves: u32,
    pub contrast: f64,
    pub base: [f64; 3],
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    // splitmix64 finalizer over the packed lattice coordinates
    let mut z = seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (fade(x - fx), fade(y - fy));
    let a = lattice(ix, iy, seed) + tx * (lattice(ix + 1, iy, seed) - lattice(ix, iy, seed));
    let b = lattice(ix, iy + 1, seed) + tx * (lattice(ix + 1, iy + 1, seed) - lattice(ix, iy + 1, seed));
    a + ty * (b - a)
}

impl Texture {
    pub fn color(&self, s: f64, t: f64) -> [f64; 3] {
        let mut out = self.base;
        for (c, v) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for o in 0..self.octaves {
                let f = f64::from(1u32 << o) / self.wavelength;
                let amp = 0.5f64.powi(o as i32);
                let seed = self.seed.wrapping_add((c as u64) << 32 | u64::from(o));
                acc += amp * value_noise(s * f, t * f, seed);
                norm += amp;
            }
            *v = (*v + self.contrast * acc / norm).clamp(0.0, 1.0);
        }
        out
    }
}

/// Target-image rectangle `[u0,u1]×[v0,v1]` bounding a finite plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub u0: f64,
    pub u1: f64,
    pub v0: f64,
    pub v1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    /// Points with `n·X = c` in the target frame, `|n| = 1`.
    Plane { n: Vector3<f64>, c: f64, region: Option<Region>, texture: Texture },
    /// `Z = z0 + amp·Σ_k w_k·sin(a_k·X + b_k·Y + φ_k)`.
    HeightField { z0: f64, amp: f64, waves: Vec<[f64; 4]>, texture: Texture },
}

impl Surface {
    pub fn fronto(depth: f64, region: Option<Region>, texture: Texture) -> Self {
        Surface::Plane { n: Vector3::new(0.0, 0.0, 1.0), c: depth, region, texture }
    }

    /// Plane whose target-view inverse depth is `ρ0 + gu·x̃ + gv·ỹ` with
    /// `x̃ = (u − cx)/fx`, `ỹ = (v − cy)/fy`.
    pub fn inverse_depth_plane(rho0: f64, gu: f64, gv: f64, region: Option<Region>, texture: Texture) -> Self {
        // 1/z = ρ0 + gu·x/z + gv·y/z  ⇔  gu·x + gv·y + ρ0·z = 1
        let raw = Vector3::new(gu, gv, rho0);
        let norm = raw.norm();
        Surface::Plane { n: raw / norm, c: 1.0 / norm, region, texture }
    }

    fn height(&self, x: f64, y: f64) -> f64 {
        match self {
            Surface::HeightField { z0, amp, waves, .. } => {
                z0 + amp * waves.iter().map(|[a, b, phi, w]| w * (a * x + b * y + phi).sin()).sum::<f64>()
            }
            Surface::Plane { .. } => unreachable!(),
        }
    }

    /// Smallest ray parameter `s > 0` where `o + s·d` meets the surface.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>, k: &Intrinsics) -> Option<f64> {
        match self {
            Surface::Plane { n, c, region, .. } => {
                let den = n.dot(d);
                if den.abs() < 1e-12 {
                    return None;
                }
                let s = (c - n.dot(o)) / den;
                if s <= 1e-9 {
                    return None;
                }
                if let Some(r) = region {
                    let p = o + d * s;
                    let (u, v, z) = k.project(&p);
                    if z <= 0.0 || u < r.u0 || u > r.u1 || v < r.v0 || v > r.v1 {
                        return None;
                    }
                }
                Some(s)
            }
            Surface::HeightField { z0, amp, .. } => {
                if d.z <= 1e-9 {
                    return None;
                }
                let g = |s: f64| {
                    let p = o + d * s;
                    p.z - self.height(p.x, p.y)
                };
                let lo = ((z0 - amp - o.z) / d.z).max(1e-9);
                let hi = (z0 + amp - o.z) / d.z;
                if hi <= lo {
                    return None;
                }
                const STEPS: usize = 96;
                let mut prev = (lo, g(lo));
                if prev.1 >= 0.0 {
                    return Some(lo);
                }
                for i in 1..=STEPS {
                    let s = lo + (hi - lo) * i as f64 / STEPS as f64;
                    let gs = g(s);
                    if gs >= 0.0 {
                        let (mut a, mut b) = (prev.0, s);
                        for _ in 0..60 {
                            let m = 0.5 * (a + b);
                            if g(m) >= 0.0 {
                                b = m;
                            } else {
                                a = m;
                            }
                        }
                        return Some(b);
                    }
                    prev = (s, gs);
                }
                None
            }
        }
    }

    fn texture_coords(&self, p: &Vector3<f64>) -> (f64, f64) {
        match self {
            Surface::Plane { n, .. } => {
                let e1 = (Vector3::x() - n * n.x).normalize();
                let e2 = n.cross(&e1);
                (p.dot(&e1), p.dot(&e2))
            }
            Surface::HeightField { .. } => (p.x, p.y),
        }
    }

    fn texture(&self) -> &Texture {
        match self {
            Surface::Plane { texture, .. } | Surface::HeightField { texture, .. } => texture,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub surfaces: Vec<Surface>,
}

/// Nearest hit of the ray: surface index, world point.
fn cast(scene: &Scene, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(usize, Vector3<f64>)> {
    let k = &scene.intrinsics;
    scene
        .surfaces
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.intersect(o, d, k).map(|t| (i, t)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, t)| (i, o + d * t))
}

/// Camera ray of pixel `(u, v)` for a camera with world→camera `pose`,
/// in world coordinates.
fn camera_ray(k: &Intrinsics, pose: &RigidTransform, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
    let inv = pose.inverse();
    (inv.t, inv.r * k.unproject(u, v, 1.0))
}

/// Renders the scene from a camera whose world→camera transform is
/// `pose`. Returns the `[3,H,W]` image and `[H,W]` camera-frame depth;
/// pixels that hit nothing are black with depth 0.
pub fn render(scene: &Scene, pose: &RigidTransform) -> Result<(Tensor, Tensor)> {
    let (h, w) = (scene.height, scene.width);
    let mut img = vec![0.0; 3 * h * w];
    let mut depth = vec![0.0; h * w];
    let mut hits = 0;
    for y in 0..h {
        for x in 0..w {
            let (o, d) = camera_ray(&scene.intrinsics, pose, x as f64, y as f64);
            let Some((i, p)) = cast(scene, &o, &d) else { continue };
            hits += 1;
            let surf = &scene.surfaces[i];
            let (s, t) = surf.texture_coords(&p);
            let col = surf.texture().color(s, t);
            for c in 0..3 {
                img[(c * h + y) * w + x] = col[c];
            }
            depth[y * w + x] = pose.apply(&p).z;
        }
    }
    if hits == 0 {
        return Err(contract("render", "scene entirely outside the camera view"));
    }
    Ok((Tensor::new(vec![3, h, w], img)?, Tensor::new(vec![h, w], depth)?))
}

/// Target pixels that are in view and unoccluded in the context camera.
pub fn visibility(scene: &Scene, depth: &Tensor, pose: &RigidTransform) -> Vec<bool> {
    let (h, w) = (scene.height, scene.width);
    let k = &scene.intrinsics;
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let z = depth.data()[y * w + x];
            if !(z > 0.0) {
                continue;
            }
            let p = k.unproject(x as f64, y as f64, z);
            let pc = pose.apply(&p);
            let (u, v, zc) = k.project(&pc);
            if !(zc > 0.0 && u >= 0.0 && u <= (w - 1) as f64 && v >= 0.0 && v <= (h - 1) as f64) {
                continue;
            }
            let (o, d) = camera_ray(k, pose, u, v);
            if let Some((_, hit)) = cast(scene, &o, &d) {
                let zh = pose.apply(&hit).z;
                out[y * w + x] = (zh - zc).abs() <= 1e-6 * zc.max(1.0);
            }
        }
    }
    out
}

fn texture(rng: &mut ChaCha8Rng, spec: &TextureSpec, far: f64, fx: f64) -> Texture {
    let finest = spec.finest_px * far / fx;
    Texture {
        seed: rng.gen(),
        wavelength: finest * f64::from(1u32 << (spec.octaves - 1)),
        octaves: spec.octaves,
        contrast: spec.contrast * rng.gen_range(0.7..1.0),
        base: [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)],
    }
}

fn random_region(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Region {
    let (w, h) = (w as f64, h as f64);
    let (rw, rh) = (rng.gen_range(0.25..0.5) * w, rng.gen_range(0.3..0.7) * h);
    let u0 = rng.gen_range(-0.1 * w..w - 0.6 * rw);
    let v0 = rng.gen_range(-0.1 * h..h - 0.6 * rh);
    Region { u0, u1: u0 + rw, v0, v1: v0 + rh }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.intrinsics()?;
    let (lo, hi) = spec.depth_range;
    let tex = &spec.texture;
    let mut surfaces = Vec::new();
    match spec.layout {
        Layout::Fronto | Layout::Slanted => {
            // background in the far part of the range, occluders nearer
            let split = lo + 0.55 * (hi - lo);
            let bg = rng.gen_range(split..hi);
            let mut layers = vec![(bg, None)];
            for _ in 1..spec.planes {
                layers.push((rng.gen_range(lo..split), Some(random_region(&mut rng, spec.width, spec.height))));
            }
            for (i, (z, region)) in layers.into_iter().enumerate() {
                let (band_lo, band_hi) = if i == 0 { (split, hi) } else { (lo, split) };
                if spec.layout == Layout::Fronto {
                    let t = texture(&mut rng, tex, z, spec.fx);
                    surfaces.push(Surface::fronto(z, region, t));
                } else {
                    let (rlo, rhi) = (1.0 / band_hi, 1.0 / band_lo);
                    let rho0 = (1.0 / z).clamp(rlo, rhi);
                    let slack = (rho0 - rlo).min(rhi - rho0);
                    // normalized image coordinates reach about ±w/(2fx)
                    let reach = spec.width.max(spec.height) as f64 / (2.0 * spec.fx);
                    let budget = slack / reach * rng.gen_range(0.5..0.95);
                    let share = rng.gen_range(0.0..1.0);
                    let gu = budget * share * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let gv = budget * (1.0 - share) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let t = texture(&mut rng, tex, band_hi, spec.fx);
                    surfaces.push(Surface::inverse_depth_plane(rho0, gu, gv, region, t));
                }
            }
        }
        Layout::HeightField => {
            let z0 = 0.5 * (lo + hi);
            let amp = rng.gen_range(0.3..0.45) * (hi - lo);
            let n = 3;
            let mut waves = Vec::with_capacity(n);
            for _ in 0..n {
                // wavelengths of a few meters keep slopes moderate
                let len = rng.gen_range(3.0..6.0) * amp;
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let f = std::f64::consts::TAU / len;
                waves.push([f * theta.cos(), f * theta.sin(), rng.gen_range(0.0..std::f64::consts::TAU), 1.0 / n as f64]);
            }
            let t = texture(&mut rng, tex, hi, spec.fx);
            surfaces.push(Surface::HeightField { z0, amp, waves, texture: t });
        }
    }
    Ok(Scene { intrinsics: k, width: spec.width, height: spec.height, surfaces })
}

/// Pixels whose 3×3 neighbourhood of channel-mean intensity has a
/// standard deviation above `min_std`; border pixels are excluded.
pub fn textured_mask(image: &Tensor, min_std: f64) -> Result<Vec<bool>> {
    let (c, h, w) = chw(image, "textured_mask")?;
    let hw = h * w;
    let gray: Vec<f64> = (0..hw).map(|i| (0..c).map(|ch| image.data()[ch * hw + i]).sum::<f64>() / c as f64).collect();
    let mut out = vec![false; hw];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let (mut s, mut s2) = (0.0, 0.0);
            for dy in 0..3 {
                for dx in 0..3 {
                    let g = gray[(y + dy - 1) * w + x + dx - 1];
                    s += g;
                    s2 += g * g;
                }
            }
            let mean = s / 9.0;
            out[y * w + x] = (s2 / 9.0 - mean * mean).max(0.0).sqrt() > min_std;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FrameSample {
    pub name: String,
    pub target: Tensor,
    pub prev: Tensor,
    pub next: Tensor,
    /// `[H,W]` meters, quantized to [`DEPTH_SCALE`].
    pub depth: Tensor,
    pub intrinsics: Intrinsics,
    pub pose_prev: RigidTransform,
    pub pose_next: RigidTransform,
    pub visible_prev: Vec<bool>,
    pub visible_next: Vec<bool>,
}

/// Rounds intensities to the 8-bit grid.
pub fn quantize_image(img: &Tensor) -> Result<Tensor> {
    Ok(Tensor::new(img.shape().to_vec(), img.data().iter().map(|&v| f64::from(pnm::quantize(v)) / 255.0).collect())?)
}

pub fn quantize_depth(depth: &Tensor) -> Result<Tensor> {
    Ok(Tensor::new(depth.shape().to_vec(), depth.data().iter().map(|&d| (d / DEPTH_SCALE).round() * DEPTH_SCALE).collect())?)
}

/// Draws the two context poses so the disparity at feature resolution
/// stays inside `disparity_px` over the depth range.
pub fn draw_motion(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> (RigidTransform, RigidTransform) {
    let (lo, hi) = spec.depth_range;
    let f = spec.fx / spec.feature_stride as f64;
    let (dlo, dhi) = spec.disparity_px;
    let b_min = dlo * hi / f;
    let b_max = dhi * lo / f;
    let (b_lo, b_hi) = if b_min < b_max { (b_min * 1.05, b_max * 0.95) } else { ((b_min * b_max).sqrt(), (b_min * b_max).sqrt() * (1.0 + 1e-9)) };
    let mut pose = |sign: f64| {
        let b = rng.gen_range(b_lo..b_hi);
        let dir = Vector3::new(1.0, rng.gen_range(-0.1..0.1), rng.gen_range(-0.05..0.05)).normalize();
        let centre = dir * (b * sign);
        let m = spec.max_rotation;
        let w = Vector3::new(rng.gen_range(-m..=m), rng.gen_range(-m..=m), rng.gen_range(-m..=m));
        let r = RigidTransform::from_axis_angle(w, Vector3::zeros());
        // X_c = R·(X − centre)
        RigidTransform { r: r.r, t: -(r.r * centre) }
    };
    let prev = pose(-1.0);
    let next = pose(1.0);
    (prev, next)
}

pub fn generate_sample(spec: &SceneSpec, name: &str) -> Result<FrameSample> {
    let scene = generate_scene(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_f5e7);
    let (pose_prev, pose_next) = draw_motion(&mut rng, spec);
    let (target, depth) = render(&scene, &RigidTransform::identity())?;
    if depth.data().iter().any(|&d| !(d > 0.0)) {
        return Err(contract("generate_sample", "target view has pixels without geometry"));
    }
    let (prev, _) = render(&scene, &pose_prev)?;
    let (next, _) = render(&scene, &pose_next)?;
    Ok(FrameSample {
        name: name.to_string(),
        target: quantize_image(&target)?,
        prev: quantize_image(&prev)?,
        next: quantize_image(&next)?,
        visible_prev: visibility(&scene, &depth, &pose_prev),
        visible_next: visibility(&scene, &depth, &pose_next),
        depth: quantize_depth(&depth)?,
        intrinsics: scene.intrinsics,
        pose_prev,
        pose_next,
    })
}

/// `count` samples whose seeds derive from `seed`, cycling through
/// `layouts`.
pub fn generate_dataset(base: &SceneSpec, layouts: &[Layout], count: usize, seed: u64) -> Result<Vec<FrameSample>> {
    if layouts.is_empty() {
        return Err(contract("generate_dataset", "no layouts"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let spec = SceneSpec { seed: rng.gen(), layout: layouts[i % layouts.len()], ..base.clone() };
            generate_sample(&spec, &format!("sample_{i:04}"))
        })
        .collect()
}

fn mask_bytes(mask: &[bool]) -> Vec<u8> {
    mask.iter().map(|&m| if m { 255 } else { 0 }).collect()
}

const FILES: [&str; 7] = ["target.ppm", "prev.ppm", "next.ppm", "depth.pgm", "camera.txt", "visible_prev.pgm", "visible_next.pgm"];

pub fn write_dataset(samples: &[FrameSample], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = format!("{MANIFEST_MAGIC} {DATASET_VERSION}\nsamples {}\n", samples.len());
    for s in samples {
        let sub = dir.join(&s.name);
        std::fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        let [_, h, w] = *s.target.shape() else { unreachable!() };
        pnm::write_bytes(&sub.join(FILES[0]), &pnm::encode_ppm(&s.target)?)?;
        pnm::write_bytes(&sub.join(FILES[1]), &pnm::encode_ppm(&s.prev)?)?;
        pnm::write_bytes(&sub.join(FILES[2]), &pnm::encode_ppm(&s.next)?)?;
        pnm::write_bytes(&sub.join(FILES[3]), &pnm::encode_pgm16(&s.depth, DEPTH_SCALE)?)?;
        CameraFile { intrinsics: s.intrinsics, poses: vec![s.pose_prev, s.pose_next] }.write(&sub.join(FILES[4]))?;
        pnm::write_bytes(&sub.join(FILES[5]), &pnm::encode_pgm8(&mask_bytes(&s.visible_prev), w, h))?;
        pnm::write_bytes(&sub.join(FILES[6]), &pnm::encode_pgm8(&mask_bytes(&s.visible_next), w, h))?;
        writeln!(manifest, "{}", s.name).expect("string write");
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(io_err(&path))
}

/// Sample names listed by the manifest of `dir`.
pub fn read_manifest(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let parse = |offset: usize, msg: String| Error::Parse { path: path.clone(), offset, msg };
    let mut lines = text.split_inclusive('\n').scan(0usize, |at, l| {
        let start = *at;
        *at += l.len();
        Some((start, l.trim()))
    });
    let (_, header) = lines.next().ok_or_else(|| parse(0, "missing section: header".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MANIFEST_MAGIC) {
        return Err(parse(0, format!("not a dataset manifest: {header:?}")));
    }
    let version = parts.next().unwrap_or("");
    if version != DATASET_VERSION.to_string() {
        return Err(Error::UnsupportedVersion { path, found: version.to_string(), expected: DATASET_VERSION.to_string() });
    }
    let (at, count_line) = lines.next().ok_or_else(|| parse(text.len(), "missing section: sample count".into()))?;
    let count: usize = count_line
        .strip_prefix("samples ")
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| parse(at, format!("bad sample count line {count_line:?}")))?;
    let names: Vec<String> = lines.filter(|(_, l)| !l.is_empty()).map(|(_, l)| l.to_string()).collect();
    if names.len() < count {
        return Err(parse(text.len(), format!("missing section: sample list ends after {} of {count} entries", names.len())));
    }
    if names.len() > count {
        return Err(parse(text.len(), format!("{} sample entries for a count of {count}", names.len())));
    }
    Ok(names)
}

fn read_mask(path: &Path, w: usize, h: usize) -> Result<Vec<bool>> {
    let (bytes, mw, mh) = pnm::read_pgm8(path)?;
    if (mw, mh) != (w, h) {
        return Err(Error::Parse { path: path.to_path_buf(), offset: 0, msg: format!("mask {mw}x{mh}, image {w}x{h}") });
    }
    Ok(bytes.iter().map(|&b| b > 127).collect())
}

pub fn read_sample(dir: &Path, name: &str) -> Result<FrameSample> {
    let sub: PathBuf = dir.join(name);
    let target = pnm::read_ppm(&sub.join(FILES[0]))?;
    let prev = pnm::read_ppm(&sub.join(FILES[1]))?;
    let next = pnm::read_ppm(&sub.join(FILES[2]))?;
    let depth = pnm::read_pgm16(&sub.join(FILES[3]))?;
    let cam_path = sub.join(FILES[4]);
    let cam = CameraFile::read(&cam_path)?;
    if cam.poses.len() != 2 {
        return Err(Error::Parse {
            path: cam_path,
            offset: 0,
            msg: format!("missing section: expected 2 poses, found {}", cam.poses.len()),
        });
    }
    let [_, h, w] = *target.shape() else { unreachable!() };
    for (img, file) in [(&prev, FILES[1]), (&next, FILES[2])] {
        if img.shape() != target.shape() {
            return Err(Error::Parse { path: sub.join(file), offset: 0, msg: "frame size differs from target".into() });
        }
    }
    if depth.shape() != [h, w] {
        return Err(Error::Parse { path: sub.join(FILES[3]), offset: 0, msg: "depth size differs from target".into() });
    }
    Ok(FrameSample {
        name: name.to_string(),
        visible_prev: read_mask(&sub.join(FILES[5]), w, h)?,
        visible_next: read_mask(&sub.join(FILES[6]), w, h)?,
        target,
        prev,
        next,
        depth,
        intrinsics: cam.intrinsics,
        pose_prev: cam.poses[0],
        pose_next: cam.poses[1],
    })
}

pub fn read_dataset(dir: &Path) -> Result<Vec<FrameSample>> {
    read_manifest(dir)?.iter().map(|n| read_sample(dir, n)).collect()
}
