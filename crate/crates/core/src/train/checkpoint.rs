//! Binary checkpoints.
//!
//! ```text
//! b"WSTYCKPT" | u32 LE version | u64 LE header length | JSON header | f32 LE blob
//! ```
//!
//! The header's `params` table names every tensor with its offset and
//! length in elements; the entries tile the blob in order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trainer::{EpochRecord, TrainConfig};
use crate::autodiff::layer::{Module, ParamKind};
use crate::error::{Error, Result};
use crate::loss::ClassWeights;
use crate::model::{build_model, Model, ModelConfig};

pub const MAGIC: &[u8; 8] = b"WSTYCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
    pub buffer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub class_weights: Vec<ClassWeights>,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    /// Heads enabled at save time, by task order.
    pub enabled: Vec<bool>,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub blob: Vec<f32>,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, train: Option<&TrainConfig>, class_weights: &[ClassWeights], history: &[EpochRecord]) -> Self {
        let mut params = Vec::new();
        let mut blob = Vec::new();
        model.visit("", &mut |name, t, kind| {
            params.push(ParamEntry { name: name.to_string(), offset: blob.len(), len: t.len(), shape: t.shape().to_vec(), buffer: kind == ParamKind::Buffer });
            blob.extend_from_slice(t.data());
        });
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            train: train.cloned(),
            class_weights: class_weights.to_vec(),
            seed: train.map_or(model.config.seed, |t| t.seed),
            history: history.to_vec(),
            enabled: model.heads.iter().map(|h| h.enabled).collect(),
            params,
        };
        Self { header, blob }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + 4 * self.blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE || &bytes[..8] != MAGIC {
            return Err(Error::Load("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Load(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[PREAMBLE..];
        if hlen > body.len() {
            return Err(Error::Load("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Load(format!("corrupt header: {e}")))?;
        if header.format_version != version {
            return Err(Error::Load("header version disagrees with preamble".into()));
        }
        let raw = &body[hlen..];
        if !raw.len().is_multiple_of(4) {
            return Err(Error::Load("blob is not a whole number of f32 values".into()));
        }
        let blob: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let mut next = 0;
        for p in &header.params {
            if p.offset != next || p.shape.iter().product::<usize>() != p.len {
                return Err(Error::Load(format!("offset table corrupt at `{}`", p.name)));
            }
            next += p.len;
        }
        if next != blob.len() {
            return Err(Error::Load(format!("offset table covers {next} values, blob has {}", blob.len())));
        }
        Ok(Self { header, blob })
    }

    /// Rebuilds the model; every parameter must be present with its shape.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let mut model = build_model::<f32>(&self.header.model)?;
        let mut used = 0usize;
        let mut err = None;
        model.visit_mut("", &mut |name, t, _| {
            if err.is_some() {
                return;
            }
            match self.header.params.iter().find(|p| p.name == name) {
                Some(p) if p.shape == t.shape() => {
                    t.data_mut().copy_from_slice(&self.blob[p.offset..p.offset + p.len]);
                    used += 1;
                }
                Some(p) => err = Some(Error::Load(format!("`{name}` has shape {:?}, model expects {:?}", p.shape, t.shape()))),
                None => err = Some(Error::Load(format!("checkpoint lacks `{name}`"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if used != self.header.params.len() {
            return Err(Error::Load(format!("checkpoint has {} tensors, model uses {used}", self.header.params.len())));
        }
        if self.header.enabled.len() == model.heads.len() {
            for (h, &on) in model.heads.iter_mut().zip(&self.header.enabled) {
                h.enabled = on;
            }
        }
        Ok(model)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::Taxonomy;

    fn sample() -> (Model<f32>, Checkpoint) {
        let model = build_model::<f32>(&ModelConfig::pmg_mini(Taxonomy::synthetic())).unwrap();
        let ck = Checkpoint::from_model(&model, Some(&TrainConfig::default()), &[], &[]);
        (model, ck)
    }

    #[test]
    fn round_trip_is_byte_and_bit_exact() {
        let (model, ck) = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let loaded = back.to_model().unwrap();
        let x = Tensor::from_fn(&[2, 3, 64, 64], |i| ((i * 7919) % 255) as f32 / 255.0);
        let (a, b) = (model.infer(&x).unwrap(), loaded.infer(&x).unwrap());
        for (a, b) in a.iter().zip(&b) {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn rejects_damage() {
        let (_, ck) = sample();
        let bytes = ck.to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Load(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]), Err(Error::Load(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..30]), Err(Error::Load(_))));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::Load(_))));
        let mut bad = ck.clone();
        bad.header.params[1].offset += 1;
        assert!(matches!(Checkpoint::from_bytes(&bad.to_bytes()), Err(Error::Load(_))));
        let mut missing = ck.clone();
        let gone = missing.header.params.pop().unwrap();
        missing.blob.truncate(gone.offset);
        assert!(matches!(missing.to_model(), Err(Error::Load(_))));
    }
}
