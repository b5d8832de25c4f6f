//! Pinhole cameras, rigid transforms, log-spaced depth bins, epipolar
//! candidate projection and differentiable view synthesis.
//!
//! Pixel centres sit at integer coordinates with the origin at the top-left
//! pixel. A transform `T = (R, t)` maps target-frame points into the
//! context frame: `X_c = R·X_t + t`.

use std::fmt::Write as _;
use std::path::Path;

use diffcore::{concat, Tensor};
use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{contract, io_err, Error, Result};

/// Candidates whose context-frame depth does not exceed this are invalid.
pub const EPS_Z: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || ![fx, fy, cx, cy].iter().all(|v| v.is_finite()) {
            return Err(contract("intrinsics", format!("need finite fx, fy > 0, got {fx}, {fy}")));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Intrinsics of the same camera at `factor` times the resolution.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
        }
    }

    /// Back-projects pixel `(u, v)` to the point at depth `d`.
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * d, (v - self.cy) / self.fy * d, d)
    }

    /// Projects a camera-frame point to `(u, v, z)`.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        let det = r.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 || !t.iter().all(|v| v.is_finite()) {
            return Err(contract(
                "rigid transform",
                format!("rotation off by {ortho:.3e}, det {det}"),
            ));
        }
        Ok(Self { r, t })
    }

    pub fn identity() -> Self {
        Self { r: Matrix3::identity(), t: Vector3::zeros() }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self { r: Matrix3::identity(), t: Vector3::new(x, y, z) }
    }

    /// Rotation by the axis-angle vector `w` (radians) followed by `t`.
    pub fn from_axis_angle(w: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self { r: *Rotation3::from_scaled_axis(w).matrix(), t }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r * p + self.t
    }

    pub fn inverse(&self) -> Self {
        let rt = self.r.transpose();
        Self { r: rt, t: -(rt * self.t) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self { r: self.r * other.r, t: self.r * other.t + self.t }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthBins {
    pub d_min: f64,
    pub d_max: f64,
    pub values: Vec<f64>,
}

impl DepthBins {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Continuous bin coordinate of depth `d` (log-linear).
    pub fn position(&self, d: f64) -> f64 {
        (d / self.d_min).ln() / (self.d_max / self.d_min).ln() * (self.len() - 1) as f64
    }

    /// Nearest bin index to depth `d`, clamped to the range.
    pub fn nearest(&self, d: f64) -> usize {
        let p = self.position(d).round();
        p.clamp(0.0, (self.len() - 1) as f64) as usize
    }
}

/// `n` depths uniformly spaced in log depth from `d_min` to `d_max`
/// inclusive.
pub fn sid_bins(d_min: f64, d_max: f64, n: usize) -> Result<DepthBins> {
    if n < 2 {
        return Err(contract("sid_bins", format!("need at least 2 bins, got {n}")));
    }
    if !(d_min > 0.0 && d_min < d_max && d_max.is_finite()) {
        return Err(contract("sid_bins", format!("need 0 < d_min < d_max, got {d_min}, {d_max}")));
    }
    let (lo, span) = (d_min.ln(), (d_max / d_min).ln());
    let mut values: Vec<f64> = (0..n)
        .map(|i| (lo + span * i as f64 / (n - 1) as f64).exp())
        .collect();
    values[0] = d_min;
    values[n - 1] = d_max;
    Ok(DepthBins { d_min, d_max, values })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarSample {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub valid: bool,
}

/// Per-pixel projection terms: for a target pixel `p` at depth `d`,
/// `z'·(u', v', 1) = d·m + n` with `m = K R K⁻¹ p` and `n = K t`.
/// Dividing through by `d` keeps the identity transform exact.
#[derive(Debug, Clone, Copy)]
struct Ray {
    m: Vector3<f64>,
    n: Vector3<f64>,
}

impl Ray {
    fn new(u: f64, v: f64, h: &Matrix3<f64>, n: &Vector3<f64>) -> Self {
        Self { m: h * Vector3::new(u, v, 1.0), n: *n }
    }

    fn at(&self, d: f64, width: usize, height: usize) -> EpipolarSample {
        let rho = 1.0 / d;
        let den = self.m.z + self.n.z * rho;
        let z = d * den;
        let valid = z > EPS_Z && d > 0.0;
        let (u, v) = if den != 0.0 {
            ((self.m.x + self.n.x * rho) / den, (self.m.y + self.n.y * rho) / den)
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        let inside = u >= 0.0 && u <= (width - 1) as f64 && v >= 0.0 && v <= (height - 1) as f64;
        EpipolarSample { u, v, z, valid: valid && inside }
    }
}

/// `K R K⁻¹`, exactly the identity when `R` is.
fn homography(k: &Intrinsics, pose: &RigidTransform) -> Matrix3<f64> {
    Matrix3::identity() + k.matrix() * (pose.r - Matrix3::identity()) * k.inverse()
}

/// Projects target pixel `(u, v)` at depth `d` into the context view of
/// size `width × height`.
pub fn project_epipolar(
    u: f64,
    v: f64,
    d: f64,
    k: &Intrinsics,
    pose: &RigidTransform,
    width: usize,
    height: usize,
) -> EpipolarSample {
    let n = k.matrix() * pose.t;
    Ray::new(u, v, &homography(k, pose), &n).at(d, width, height)
}

/// Candidate sampling coordinates for every pixel of an `h × w` map and
/// every bin: `[h·w, D, 2]` coordinates (finite even when invalid) and the
/// row-major `[h·w, D]` validity.
pub fn candidate_grid(
    h: usize,
    w: usize,
    bins: &DepthBins,
    k: &Intrinsics,
    pose: &RigidTransform,
) -> Result<(Tensor, Vec<bool>)> {
    let hom = homography(k, pose);
    let n = k.matrix() * pose.t;
    let nb = bins.len();
    let mut coords = Vec::with_capacity(h * w * nb * 2);
    let mut valid = Vec::with_capacity(h * w * nb);
    for y in 0..h {
        for x in 0..w {
            let ray = Ray::new(x as f64, y as f64, &hom, &n);
            for &d in &bins.values {
                let s = ray.at(d, w, h);
                let (u, v) = if s.u.is_finite() && s.v.is_finite() { (s.u, s.v) } else { (0.0, 0.0) };
                coords.push(u);
                coords.push(v);
                valid.push(s.valid);
            }
        }
    }
    Ok((Tensor::new(vec![h * w, nb, 2], coords)?, valid))
}

/// Bilinear samples of `features: [C,h,w]` along the epipolar line of
/// pixel `(u, v)`: one row of `C` values per bin, zero where invalid.
pub fn sample_candidates(
    features: &Tensor,
    u: usize,
    v: usize,
    bins: &DepthBins,
    k: &Intrinsics,
    pose: &RigidTransform,
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let (c, h, w) = chw(features, "sample_candidates")?;
    let n = k.matrix() * pose.t;
    let ray = Ray::new(u as f64, v as f64, &homography(k, pose), &n);
    let samples: Vec<EpipolarSample> = bins.values.iter().map(|&d| ray.at(d, w, h)).collect();
    let coords: Vec<f64> = samples
        .iter()
        .flat_map(|s| if s.u.is_finite() && s.v.is_finite() { [s.u, s.v] } else { [0.0, 0.0] })
        .collect();
    let read = features.grid_sample(&Tensor::new(vec![bins.len(), 2], coords)?)?;
    let rows = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.valid {
                read.data()[i * c..(i + 1) * c].to_vec()
            } else {
                vec![0.0; c]
            }
        })
        .collect();
    Ok((rows, samples.iter().map(|s| s.valid).collect()))
}

pub(crate) fn chw(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(contract(op, format!("expected [C,H,W], got {:?}", t.shape()))),
    }
}

/// Synthesizes the target view from `image: [C,H,W]` of the context camera
/// given target depth `depth: [H,W]`. Returns the reconstruction and the
/// `[H,W]` in-view mask. Differentiable in `depth` and `image`.
pub fn warp_image(
    image: &Tensor,
    depth: &Tensor,
    k: &Intrinsics,
    pose: &RigidTransform,
) -> Result<(Tensor, Vec<bool>)> {
    let (c, h, w) = chw(image, "warp_image")?;
    if depth.shape() != [h, w] {
        return Err(contract(
            "warp_image",
            format!("depth {:?} does not match image {:?}", depth.shape(), image.shape()),
        ));
    }
    if let Some(i) = depth.data().iter().position(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(contract(
            "warp_image",
            format!("non-positive depth {} at pixel ({}, {})", depth.data()[i], i % w, i / w),
        ));
    }
    let hom = homography(k, pose);
    let n = k.matrix() * pose.t;
    let hw = h * w;
    let (mut mx, mut my, mut mz) = (vec![0.0; hw], vec![0.0; hw], vec![0.0; hw]);
    let mut valid = vec![false; hw];
    let mut safe = vec![0.0; hw];
    let mut keep = vec![0.0; hw];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let ray = Ray::new(x as f64, y as f64, &hom, &n);
            (mx[i], my[i], mz[i]) = (ray.m.x, ray.m.y, ray.m.z);
            let s = ray.at(depth.data()[i], w, h);
            valid[i] = s.valid;
            // denominators of invalid pixels are replaced by 1
            keep[i] = if s.z > EPS_Z { 1.0 } else { 0.0 };
            safe[i] = 1.0 - keep[i];
        }
    }
    let plane = |v: Vec<f64>| Tensor::new(vec![h, w], v);
    let rho = depth.powf(-1.0)?;
    let den = rho.scale(n.z)?.add(&plane(mz)?)?;
    let den = den.mul(&plane(keep)?)?.add(&plane(safe)?)?;
    let u = rho.scale(n.x)?.add(&plane(mx)?)?.div(&den)?;
    let v = rho.scale(n.y)?.add(&plane(my)?)?.div(&den)?;
    let coords = concat(&[&u.reshape(&[h, w, 1])?, &v.reshape(&[h, w, 1])?], 2)?;
    let out = image.grid_sample(&coords)?.permute(&[2, 0, 1])?;
    debug_assert_eq!(out.shape(), [c, h, w]);
    Ok((out, valid))
}

/// Intrinsics plus one pose per frame, as stored in camera text files.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFile {
    pub intrinsics: Intrinsics,
    pub poses: Vec<RigidTransform>,
}

impl CameraFile {
    pub fn to_text(&self) -> String {
        let k = &self.intrinsics;
        let mut s = format!("{:?} {:?} {:?} {:?}\n", k.fx, k.fy, k.cx, k.cy);
        for p in &self.poses {
            let vals: Vec<String> = (0..3)
                .flat_map(|r| (0..3).map(move |c| (r, c)))
                .map(|(r, c)| format!("{:?}", p.r[(r, c)]))
                .chain(p.t.iter().map(|v| format!("{v:?}")))
                .collect();
            writeln!(s, "{}", vals.join(" ")).expect("string write");
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |offset: usize, msg: String| Error::Parse { path: path.to_path_buf(), offset, msg };
        let mut offset = 0;
        let mut lines = Vec::new();
        for line in text.split_inclusive('\n') {
            if !line.trim().is_empty() {
                lines.push((offset, line.trim()));
            }
            offset += line.len();
        }
        let numbers = |(at, line): (usize, &str), want: usize, what: &str| -> Result<Vec<f64>> {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(at, format!("{what}: bad number {t:?}"))))
                .collect::<Result<_>>()?;
            if vals.len() != want {
                return Err(err(at, format!("{what}: expected {want} values, got {}", vals.len())));
            }
            Ok(vals)
        };
        let first = *lines.first().ok_or_else(|| err(0, "missing intrinsics line".into()))?;
        let k = numbers(first, 4, "intrinsics")?;
        let intrinsics = Intrinsics::new(k[0], k[1], k[2], k[3]).map_err(|e| err(first.0, e.to_string()))?;
        let mut poses = Vec::new();
        for &line in &lines[1..] {
            let v = numbers(line, 12, "pose")?;
            let r = Matrix3::from_row_slice(&v[..9]);
            let pose = RigidTransform::new(r, Vector3::new(v[9], v[10], v[11])).map_err(|e| err(line.0, e.to_string()))?;
            poses.push(pose);
        }
        Ok(Self { intrinsics, poses })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }
}
