//! Trainable parameters, normalization buffers, and checkpoint files.

use std::fmt::Write as _;
use std::path::Path;

use super::snapshot;
use super::{RunningStats, Shape4, Tensor4};
use crate::error::{Error, Result};

/// A trainable tensor with its adaptive-moment optimizer state.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub value: Tensor4,
    pub moment1: Vec<f64>,
    pub moment2: Vec<f64>,
    pub step_count: u64,
}

impl ParamTensor {
    pub fn new(value: Tensor4) -> Self {
        let n = value.numel();
        ParamTensor {
            value,
            moment1: vec![0.0; n],
            moment2: vec![0.0; n],
            step_count: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct NamedParam {
    pub name: String,
    pub param: ParamTensor,
    /// Whether decoupled weight decay applies (convolution weights only).
    pub decay: bool,
}

#[derive(Clone, Debug)]
pub struct NamedBuffer {
    pub name: String,
    pub stats: RunningStats,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<NamedParam>,
    buffers: Vec<NamedBuffer>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor4, decay: bool) -> ParamId {
        self.params.push(NamedParam {
            name: name.into(),
            param: ParamTensor::new(value),
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, channels: usize) -> BufferId {
        self.buffers.push(NamedBuffer {
            name: name.into(),
            stats: RunningStats::new(channels),
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0].param
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0].param
    }

    pub fn value(&self, id: ParamId) -> &Tensor4 {
        &self.params[id.0].param.value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor4 {
        &mut self.params[id.0].param.value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn buffer(&self, id: BufferId) -> &RunningStats {
        &self.buffers[id.0].stats
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut RunningStats {
        &mut self.buffers[id.0].stats
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedParam] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.params.iter().map(|p| p.param.value.numel()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Named tensors in a fixed order: parameters, then buffers, then
    /// (optionally) optimizer moments.
    pub fn to_checkpoint(&self, with_optimizer: bool) -> Checkpoint {
        let mut entries = Vec::new();
        for p in &self.params {
            entries.push((p.name.clone(), p.param.value.clone()));
        }
        for b in &self.buffers {
            let s = Shape4::new(1, b.stats.channels(), 1, 1);
            entries.push((
                format!("{}.running_mean", b.name),
                Tensor4::from_vec(s, b.stats.mean.clone()).expect("shape matches"),
            ));
            entries.push((
                format!("{}.running_var", b.name),
                Tensor4::from_vec(s, b.stats.var.clone()).expect("shape matches"),
            ));
        }
        if with_optimizer {
            for p in &self.params {
                let s = p.param.value.shape();
                entries.push((
                    format!("{}.moment1", p.name),
                    Tensor4::from_vec(s, p.param.moment1.clone()).expect("shape matches"),
                ));
                entries.push((
                    format!("{}.moment2", p.name),
                    Tensor4::from_vec(s, p.param.moment2.clone()).expect("shape matches"),
                ));
            }
        }
        Checkpoint { entries }
    }

    /// Restores every parameter and buffer from `ckpt`; optimizer moments are
    /// restored when present.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let lookup = |name: &str| ckpt.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        for p in &mut self.params {
            let t = lookup(&p.name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter {}", p.name)))?;
            if t.shape() != p.param.value.shape() {
                return Err(Error::Dimension(format!(
                    "checkpoint parameter {} has shape {}, model expects {}",
                    p.name,
                    t.shape(),
                    p.param.value.shape()
                )));
            }
            p.param.value = t.clone();
            if let (Some(m1), Some(m2)) = (
                lookup(&format!("{}.moment1", p.name)),
                lookup(&format!("{}.moment2", p.name)),
            ) {
                p.param.moment1 = m1.data().to_vec();
                p.param.moment2 = m2.data().to_vec();
            }
        }
        for b in &mut self.buffers {
            for (suffix, dst) in [("running_mean", &mut b.stats.mean), ("running_var", &mut b.stats.var)] {
                let name = format!("{}.{suffix}", b.name);
                let t = lookup(&name)
                    .ok_or_else(|| Error::Data(format!("checkpoint lacks buffer {name}")))?;
                if t.numel() != dst.len() {
                    return Err(Error::Dimension(format!("buffer {name} has wrong length")));
                }
                *dst = t.data().to_vec();
            }
        }
        Ok(())
    }
}

/// Ordered named tensors stored as back-to-back snapshots plus a text
/// manifest of `name n c h w byte_offset` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor4)>,
}

impl Checkpoint {
    pub fn encode(&self) -> (Vec<u8>, String) {
        let mut bin = Vec::new();
        let mut manifest = String::new();
        for (name, t) in &self.entries {
            let s = t.shape();
            let _ = writeln!(manifest, "{name} {} {} {} {} {}", s.n, s.c, s.h, s.w, bin.len());
            bin.extend_from_slice(&snapshot::encode(t));
        }
        (bin, manifest)
    }

    pub fn decode(bin: &[u8], manifest: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in manifest.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected 6 manifest fields, got {}", f.len()),
                });
            }
            let nums: Vec<usize> = f[1..]
                .iter()
                .map(|v| v.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            let offset = nums[4];
            let t = bin
                .get(offset..)
                .ok_or_else(|| Error::Format(format!("offset {offset} beyond checkpoint end")))
                .and_then(snapshot::decode)?;
            if t.shape().dims() != [nums[0], nums[1], nums[2], nums[3]] {
                return Err(Error::Format(format!(
                    "manifest shape for {} disagrees with snapshot header",
                    f[0]
                )));
            }
            entries.push((f[0].to_string(), t));
        }
        Ok(Checkpoint { entries })
    }

    /// Writes `<stem>.bin` and `<stem>.manifest`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (bin, manifest) = self.encode();
        let bin_path = stem.with_extension("bin");
        let man_path = stem.with_extension("manifest");
        std::fs::write(&bin_path, bin).map_err(|e| Error::io(&bin_path, e))?;
        std::fs::write(&man_path, manifest).map_err(|e| Error::io(&man_path, e))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let bin_path = stem.with_extension("bin");
        let man_path = stem.with_extension("manifest");
        let bin = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let manifest = std::fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?;
        Checkpoint::decode(&bin, &manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_restores_params_and_buffers() {
        let mut store = ParamStore::new();
        let w = store.add(
            "conv.weight",
            Tensor4::from_vec(Shape4::new(2, 1, 1, 1), vec![0.5, -1.25]).unwrap(),
            true,
        );
        let b = store.add_buffer("bn", 2);
        store.buffer_mut(b).mean = vec![0.25, 0.75];
        let (bin, manifest) = store.to_checkpoint(false).encode();
        assert!(manifest.starts_with("conv.weight 2 1 1 1 0\n"));

        let mut fresh = ParamStore::new();
        let w2 = fresh.add("conv.weight", Tensor4::zeros(Shape4::new(2, 1, 1, 1)), true);
        let b2 = fresh.add_buffer("bn", 2);
        fresh
            .load_checkpoint(&Checkpoint::decode(&bin, &manifest).unwrap())
            .unwrap();
        assert_eq!(fresh.value(w2), store.value(w));
        assert_eq!(fresh.buffer(b2).mean, vec![0.25, 0.75]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut store = ParamStore::new();
        store.add("p", Tensor4::zeros(Shape4::new(1, 1, 1, 2)), false);
        let ckpt = store.to_checkpoint(false);
        let mut other = ParamStore::new();
        other.add("p", Tensor4::zeros(Shape4::new(1, 1, 1, 3)), false);
        assert!(matches!(other.load_checkpoint(&ckpt), Err(Error::Dimension(_))));
    }
}
