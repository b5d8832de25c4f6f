//! Named, ordered parameter groups.

use diffcore::{Record, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};

/// An ordered list of named tensors. Order is part of the identity of a
/// group: it fixes the serialized layout and the optimizer state layout.
#[derive(Debug, Clone, Default)]
pub struct ParamGroup {
    entries: Vec<(String, Tensor)>,
}

impl ParamGroup {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| contract("parameters", format!("missing tensor {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Same names, each tensor passed through `f`.
    pub fn map(&self, mut f: impl FnMut(&str, &Tensor) -> Result<Tensor>) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| Ok((n.clone(), f(n, t)?)))
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn tracked(&self, record: &Record) -> Self {
        Self { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.tracked(record))).collect() }
    }

    pub fn detached(&self) -> Self {
        Self { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.detach())).collect() }
    }

    /// Rebuilds the group from consecutive slices of the flat vector
    /// `flat`, starting at `offset`; returns the group and the next offset.
    pub fn from_flat(&self, flat: &Tensor, offset: usize) -> Result<(Self, usize)> {
        let mut at = offset;
        let group = self.map(|_, t| {
            let part = flat.slice(0, at, t.len())?.reshape(t.shape())?;
            at += t.len();
            Ok(part)
        })?;
        Ok((group, at))
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
    }

    /// Checks that `other` has the same names and shapes in order.
    pub fn check_layout(&self, other: &ParamGroup, group: &str) -> Result<()> {
        if self.len() != other.len() {
            return Err(contract(
                "parameters",
                format!("group {group}: {} tensors vs {}", self.len(), other.len()),
            ));
        }
        for ((na, ta), (nb, tb)) in self.iter().zip(other.iter()) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(contract(
                    "parameters",
                    format!("group {group}: tensor {na:?} {:?} vs {nb:?} {:?}", ta.shape(), tb.shape()),
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Conv weight `[cout,cin,k,k]` with fan-in uniform bounds, zero bias.
pub(crate) fn conv(group: &mut ParamGroup, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, k: usize) {
    let bound = (6.0 / (cin * k * k) as f64).sqrt();
    group.push(format!("{name}.w"), uniform(rng, &[cout, cin, k, k], bound));
    group.push(format!("{name}.b"), Tensor::zeros(&[cout]));
}

/// Applies the convolution `name` of `group` with `k = 3`, padding 1.
pub(crate) fn apply_conv(group: &ParamGroup, name: &str, x: &Tensor, stride: usize) -> Result<Tensor> {
    let w = group.get(&format!("{name}.w"))?;
    let b = group.get(&format!("{name}.b"))?;
    let pad = w.shape()[2] / 2;
    Ok(x.conv2d(w, b, stride, pad)?)
}
