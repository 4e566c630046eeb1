//! Binary checkpoints.
//!
//! Layout (little-endian): `"VFCK"`, version `u32`, kind `u8`, config JSON
//! (`u32` length + bytes), tensor count `u32`, then per tensor: name
//! (`u32` length + UTF-8), rank `u32`, dims `u32 * rank`, `f32` data. A
//! SHA-256 of everything before it closes the file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{Embedder, EmbedderConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, VoiceFilter};
use crate::nn::Tensor;
use crate::optim::{Adam, AdamConfig};

pub const MAGIC: &[u8; 4] = b"VFCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Embedder = 1,
    Background = 2,
    SpeakerDependent = 3,
}

impl ModelKind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(ModelKind::Embedder),
            2 => Ok(ModelKind::Background),
            3 => Ok(ModelKind::SpeakerDependent),
            _ => Err(Error::CorruptCheckpoint(format!("unknown model kind {v}"))),
        }
    }
}

/// Configuration block stored with every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: serde_json::Value,
    pub steps: u64,
    /// How batch norm behaves when this model is fine-tuned.
    pub finetune_batch_norm: String,
    pub adam: Option<AdamConfig>,
    pub adam_step: u64,
    pub speaker: Option<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptCheckpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        let cfg = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let hash = Sha256::digest(&out);
        out.extend_from_slice(&hash);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 + 32 || &bytes[..4] != MAGIC {
            return Err(Error::CorruptCheckpoint("missing VFCK header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }
        let (body, hash) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != hash {
            return Err(Error::CorruptCheckpoint("content hash mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let kind = ModelKind::from_u8(r.take(1)?[0])?;
        let n = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(n)?)
            .map_err(|e| Error::CorruptCheckpoint(format!("config block: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let data = r
                .take(numel.checked_mul(4).ok_or_else(|| Error::CorruptCheckpoint("tensor too large".into()))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor { shape, data }));
        }
        if r.pos != body.len() {
            return Err(Error::CorruptCheckpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            kind,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    fn tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))
    }

    fn fill(&self, name: &str, dst: &mut Tensor<f32>) -> Result<()> {
        let src = self.tensor(name)?;
        if src.shape != dst.shape {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                src.shape, dst.shape
            )));
        }
        dst.data.clone_from(&src.data);
        Ok(())
    }

    fn restore_adam(&self, names: &[String], params: &[&Tensor<f32>]) -> Result<Option<Adam<f32>>> {
        let Some(cfg) = self.meta.adam.clone() else {
            return Ok(None);
        };
        let mut adam = Adam::new(cfg, params)?;
        adam.step = self.meta.adam_step;
        for (i, n) in names.iter().enumerate() {
            self.fill(&format!("adam.m.{n}"), &mut adam.m[i])?;
            self.fill(&format!("adam.v.{n}"), &mut adam.v[i])?;
        }
        Ok(Some(adam))
    }
}

fn push_adam(tensors: &mut Vec<(String, Tensor<f32>)>, names: &[String], adam: Option<&Adam<f32>>) {
    if let Some(a) = adam {
        for (n, (m, v)) in names.iter().zip(a.m.iter().zip(&a.v)) {
            tensors.push((format!("adam.m.{n}"), m.clone()));
            tensors.push((format!("adam.v.{n}"), v.clone()));
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SaveInfo<'a> {
    pub steps: u64,
    pub seed: u64,
    pub speaker: Option<String>,
    pub adam: Option<&'a Adam<f32>>,
}

pub fn vf_checkpoint(model: &VoiceFilter<f32>, kind: ModelKind, info: SaveInfo<'_>) -> Result<Checkpoint> {
    if kind == ModelKind::Embedder {
        return Err(Error::Invalid("voice filter cannot be saved as an embedder".into()));
    }
    let mut tensors: Vec<(String, Tensor<f32>)> = model
        .state()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    push_adam(&mut tensors, &model.param_names(), info.adam);
    Ok(Checkpoint {
        kind,
        meta: CheckpointMeta {
            model: serde_json::to_value(&model.cfg)?,
            steps: info.steps,
            finetune_batch_norm: "running-statistics-frozen".into(),
            adam: info.adam.map(|a| a.cfg.clone()),
            adam_step: info.adam.map_or(0, |a| a.step),
            speaker: info.speaker,
            seed: info.seed,
        },
        tensors,
    })
}

pub fn vf_from_checkpoint(ck: &Checkpoint) -> Result<(VoiceFilter<f32>, Option<Adam<f32>>)> {
    if ck.kind == ModelKind::Embedder {
        return Err(Error::Invalid("checkpoint holds an embedder, not a voice filter".into()));
    }
    let cfg: ModelConfig = serde_json::from_value(ck.meta.model.clone())
        .map_err(|e| Error::CorruptCheckpoint(format!("model config: {e}")))?;
    let mut model = VoiceFilter::<f32>::new(&cfg, 0)?;
    for (name, t) in model.state_mut() {
        ck.fill(&name, t)?;
    }
    let adam = ck.restore_adam(&model.param_names(), &model.params())?;
    Ok((model, adam))
}

pub fn embedder_checkpoint(model: &Embedder<f32>, info: SaveInfo<'_>) -> Result<Checkpoint> {
    let mut tensors: Vec<(String, Tensor<f32>)> = model
        .param_names()
        .into_iter()
        .zip(model.params())
        .map(|(n, t)| (n, t.clone()))
        .collect();
    push_adam(&mut tensors, &model.param_names(), info.adam);
    Ok(Checkpoint {
        kind: ModelKind::Embedder,
        meta: CheckpointMeta {
            model: serde_json::to_value(&model.cfg)?,
            steps: info.steps,
            finetune_batch_norm: "none".into(),
            adam: info.adam.map(|a| a.cfg.clone()),
            adam_step: info.adam.map_or(0, |a| a.step),
            speaker: None,
            seed: info.seed,
        },
        tensors,
    })
}

pub fn embedder_from_checkpoint(ck: &Checkpoint) -> Result<Embedder<f32>> {
    if ck.kind != ModelKind::Embedder {
        return Err(Error::Invalid("checkpoint does not hold an embedder".into()));
    }
    let cfg: EmbedderConfig = serde_json::from_value(ck.meta.model.clone())
        .map_err(|e| Error::CorruptCheckpoint(format!("embedder config: {e}")))?;
    let mut model = Embedder::<f32>::new(&cfg, 0)?;
    let names = model.param_names();
    for (name, t) in names.iter().zip(model.params_mut()) {
        ck.fill(name, t)?;
    }
    Ok(model)
}

pub fn save_embedder(path: impl AsRef<Path>, model: &Embedder<f32>, info: SaveInfo<'_>) -> Result<()> {
    embedder_checkpoint(model, info)?.save(path)
}

pub fn load_embedder(path: impl AsRef<Path>) -> Result<Embedder<f32>> {
    embedder_from_checkpoint(&Checkpoint::load(path)?)
}

pub fn save_vf(path: impl AsRef<Path>, model: &VoiceFilter<f32>, kind: ModelKind, info: SaveInfo<'_>) -> Result<()> {
    vf_checkpoint(model, kind, info)?.save(path)
}

pub fn load_vf(path: impl AsRef<Path>) -> Result<(VoiceFilter<f32>, ModelKind)> {
    let ck = Checkpoint::load(path)?;
    let (m, _) = vf_from_checkpoint(&ck)?;
    Ok((m, ck.kind))
}

/// SHA-256 over the names and bit patterns of every state tensor.
pub fn param_hash(model: &VoiceFilter<f32>) -> String {
    let mut h = Sha256::new();
    for (name, t) in model.state() {
        h.update(name.as_bytes());
        for v in &t.data {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VoiceFilter<f32> {
        let cfg = ModelConfig {
            channels: 4,
            speaker_dim: 3,
            lstm_hidden: 4,
            dense: 5,
            ..Default::default()
        };
        VoiceFilter::new(&cfg, 9).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = small();
        let adam = Adam::new(AdamConfig::default(), &m.params()).unwrap();
        let ck = vf_checkpoint(&m, ModelKind::Background, SaveInfo { steps: 3, adam: Some(&adam), ..Default::default() }).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let (m2, a2) = vf_from_checkpoint(&back).unwrap();
        assert_eq!(m2, m);
        assert_eq!(a2.unwrap(), adam);
        assert_eq!(param_hash(&m2), param_hash(&m));
    }

    #[test]
    fn truncation_and_bit_flips_are_corrupt() {
        let bytes = vf_checkpoint(&small(), ModelKind::Background, SaveInfo::default())
            .unwrap()
            .to_bytes()
            .unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 10]),
            Err(Error::CorruptCheckpoint(_))
        ));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn old_version_is_rejected_explicitly() {
        let mut bytes = vf_checkpoint(&small(), ModelKind::Background, SaveInfo::default())
            .unwrap()
            .to_bytes()
            .unwrap();
        bytes[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::UnsupportedVersion { found: 0, expected: 1 })
        ));
    }

    #[test]
    fn serialization_is_stable() {
        let m = small();
        let a = vf_checkpoint(&m, ModelKind::Background, SaveInfo::default()).unwrap().to_bytes().unwrap();
        let b = vf_checkpoint(&m, ModelKind::Background, SaveInfo::default()).unwrap().to_bytes().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embedder_round_trip() {
        let e = Embedder::<f32>::new(&EmbedderConfig { dim: 4, channels: 6, ..Default::default() }, 2).unwrap();
        let ck = embedder_checkpoint(&e, SaveInfo::default()).unwrap();
        let back = embedder_from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, e);
        assert!(vf_from_checkpoint(&ck).is_err());
    }
}
