//! Central-difference gradient oracle.
//!
//! Coordinates where the forward and backward one-sided differences
//! disagree sharply sit on a kink (argmax switch, ReLU hinge, mask flip)
//! and are excluded from the pass/fail tally rather than reported as
//! failures.

use crate::error::{DiffError, Result};
use crate::record::Record;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so gradients at the
    /// level of numerical noise are compared absolutely.
    pub denom_floor: f64,
    /// One-sided slopes disagreeing by more than this fraction of their
    /// magnitude mark a non-differentiable coordinate.
    pub kink_ratio: f64,
    /// Coordinates to probe; all of them when `None`.
    pub coords: Option<Vec<usize>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-3,
            denom_floor: 1e-6,
            kink_ratio: 0.1,
            coords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub passed: bool,
    pub excluded: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords: Vec<CoordinateCheck>,
    /// Largest relative error among non-excluded coordinates.
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn excluded(&self) -> Vec<usize> {
        self.coords.iter().filter(|c| c.excluded).map(|c| c.index).collect()
    }

    pub fn checked(&self) -> usize {
        self.coords.iter().filter(|c| !c.excluded).count()
    }

    /// Fraction of non-excluded coordinates within tolerance.
    pub fn pass_fraction(&self) -> f64 {
        let checked = self.checked();
        if checked == 0 {
            return 1.0;
        }
        self.coords.iter().filter(|c| !c.excluded && c.passed).count() as f64 / checked as f64
    }

    pub fn all_passed(&self) -> bool {
        self.coords.iter().all(|c| c.excluded || c.passed)
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares the backward gradient of scalar `f` at `x` with central
/// differences using the given step and tolerance.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let opts = GradCheckOptions {
        step,
        tolerance,
        ..GradCheckOptions::default()
    };
    finite_diff_check_with(f, x, &opts)
}

pub fn finite_diff_check_with<F>(f: F, x: &Tensor, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(opts.step > 0.0) {
        return Err(DiffError::Oracle(format!("step must be positive, got {}", opts.step)));
    }
    let base = x.detach();
    let eval = |v: &Tensor| -> Result<f64> { f(v)?.item() };

    let f0 = eval(&base)?;
    if eval(&base)?.to_bits() != f0.to_bits() {
        return Err(DiffError::Oracle("function is not deterministic".into()));
    }

    let record = Record::new();
    let leaf = base.tracked(&record);
    let y = f(&leaf)?;
    if y.len() != 1 {
        return Err(DiffError::NonScalarLoss(y.shape().to_vec()));
    }
    if y.item()?.to_bits() != f0.to_bits() {
        return Err(DiffError::Oracle("tracked and untracked evaluations differ".into()));
    }
    let grads = y.backward()?;
    let analytic = grads.get(&leaf).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; base.len()]);

    let indices: Vec<usize> = match &opts.coords {
        Some(c) => c.clone(),
        None => (0..base.len()).collect(),
    };
    let h = opts.step;
    let mut coords = Vec::with_capacity(indices.len());
    let mut max_rel: f64 = 0.0;
    for &i in &indices {
        if i >= base.len() {
            return Err(DiffError::Oracle(format!("coordinate {i} out of range {}", base.len())));
        }
        let probe = |delta: f64| -> Result<f64> {
            let mut v = base.to_vec();
            v[i] += delta;
            eval(&Tensor::new(base.shape().to_vec(), v)?)
        };
        let (fp, fm) = (probe(h)?, probe(-h)?);
        let numeric = (fp - fm) / (2.0 * h);
        let spread = ((fp - f0) - (f0 - fm)).abs() / h;
        let scale = ((fp - f0) / h).abs().max(((f0 - fm) / h).abs()).max(opts.denom_floor);
        // a smooth coordinate halves its slope spread when the step halves
        let excluded = spread > opts.kink_ratio * scale && {
            let (fph, fmh) = (probe(h / 2.0)?, probe(-h / 2.0)?);
            let half = ((fph - f0) - (f0 - fmh)).abs() / (h / 2.0);
            (half - spread / 2.0).abs() > 0.25 * spread
        };
        let rel_error = relative_error(analytic[i], numeric, opts.denom_floor);
        let passed = rel_error <= opts.tolerance;
        if !excluded {
            max_rel = max_rel.max(rel_error);
        }
        coords.push(CoordinateCheck {
            index: i,
            analytic: analytic[i],
            numeric,
            rel_error,
            passed,
            excluded,
        });
    }
    Ok(GradCheckReport {
        coords,
        max_rel_error: max_rel,
    })
}
