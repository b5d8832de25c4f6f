//! Versioned checkpoint container: the training config as JSON plus the
//! four parameter groups, each tensor in the diffcore tensor format.
//!
//! Layout (little endian):
//! `"MFCK" | u32 version | u64 epoch | u64 step | u64 json_len | json |
//! u32 groups | { u32 name_len | name | u32 tensors | { u32 name_len |
//! name | tensor } }`.

use std::path::Path;

use diffcore::io as tio;

use crate::error::{contract, io_err, Error, Result};
use crate::model::{Model, GROUP_NAMES};
use crate::params::ParamGroup;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"MFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: u64,
    pub step: u64,
    pub model: Model,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.config)?;
        let mut out = Vec::with_capacity(64 + json.len() + 8 * self.model.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(GROUP_NAMES.len() as u32).to_le_bytes());
        for (name, group) in GROUP_NAMES.iter().zip(self.model.groups()) {
            put_str(&mut out, name);
            out.extend_from_slice(&(group.len() as u32).to_le_bytes());
            for (tname, t) in group.iter() {
                put_str(&mut out, tname);
                out.extend_from_slice(&tio::encode(t)?);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, path };
        let header = r.parse_header()?;
        let count = r.u32("group count")? as usize;
        if count != GROUP_NAMES.len() {
            return Err(r.error(format!("{count} groups, expected {}", GROUP_NAMES.len())));
        }
        let mut groups = Vec::with_capacity(GROUP_NAMES.len());
        for expected in GROUP_NAMES {
            let (name, group) = r.group()?;
            if name != expected {
                return Err(r.error(format!("group {name:?} where {expected:?} was expected")));
            }
            groups.push(group);
        }
        if r.at != bytes.len() {
            return Err(r.error(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self { config: header.config, epoch: header.epoch, step: header.step, model: Model::from_groups(groups)? })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Reads one named group without decoding the others.
pub fn load_group(bytes: &[u8], path: &Path, name: &str) -> Result<ParamGroup> {
    let mut r = Reader { bytes, at: 0, path };
    r.parse_header()?;
    let count = r.u32("group count")?;
    for _ in 0..count {
        let (gname, group) = r.group()?;
        if gname == name {
            return Ok(group);
        }
    }
    Err(contract("load_group", format!("{}: no group {name:?}", path.display())))
}

/// Checkpoint `a` with the attention group of `b`.
pub fn swap_attention(a: &Checkpoint, b: &Checkpoint) -> Result<Checkpoint> {
    a.model.attention.check_layout(&b.model.attention, "attention")?;
    let mut out = a.clone();
    out.model.attention = b.model.attention.clone();
    Ok(out)
}

struct Header {
    config: TrainConfig,
    epoch: u64,
    step: u64,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn error(&self, msg: String) -> Error {
        Error::Parse { path: self.path.to_path_buf(), offset: self.at, msg }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(self.error(format!("truncated {what}")));
        }
        let bytes: &'a [u8] = self.bytes;
        let out = &bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?.to_vec();
        String::from_utf8(raw).map_err(|_| self.error(format!("{what} is not UTF-8")))
    }

    fn parse_header(&mut self) -> Result<Header> {
        if self.take(4, "magic")? != MAGIC {
            return Err(Error::Parse { path: self.path.to_path_buf(), offset: 0, msg: "bad magic".into() });
        }
        let version = self.u32("version")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                path: self.path.to_path_buf(),
                found: version.to_string(),
                expected: VERSION.to_string(),
            });
        }
        let epoch = self.u64("epoch")?;
        let step = self.u64("step")?;
        let n = self.u64("config length")? as usize;
        let json = self.take(n, "config")?;
        let config = serde_json::from_slice(json).map_err(|e| self.error(format!("config: {e}")))?;
        Ok(Header { config, epoch, step })
    }

    fn group(&mut self) -> Result<(String, ParamGroup)> {
        let name = self.string("group name")?;
        let count = self.u32("tensor count")?;
        let mut group = ParamGroup::new();
        for _ in 0..count {
            let tname = self.string("tensor name")?;
            let (t, used) = tio::decode(&self.bytes[self.at..]).map_err(|e| self.error(format!("tensor {tname:?}: {e}")))?;
            self.at += used;
            group.push(tname, t);
        }
        Ok((name, group))
    }
}
