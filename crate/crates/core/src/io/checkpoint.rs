//! Single-file checkpoint: magic, version, JSON header, little-endian f32
//! blocks and a trailing SHA-256 over everything before it.

use std::collections::BTreeMap;
use std::path::Path;

use dropnoise_tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_file, write_file, IoError};
use crate::models::{restore_discriminator, restore_generator, Architecture, ModelError, DISCRIMINATOR_PREFIX, GENERATOR_PREFIX};
use crate::nn::{LayerStack, NnError};
use crate::training::{TrainConfig, TrainOutcome};

pub const MAGIC: &[u8; 8] = b"DNCKPT\r\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub train_config: Option<TrainConfig>,
    pub log_digest: Option<String>,
    /// Generator and discriminator parameters and running statistics.
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    train_config: Option<TrainConfig>,
    log_digest: Option<String>,
    tensors: Vec<TensorEntry>,
}

fn split_err(e: ModelError) -> IoError {
    match e {
        ModelError::Nn(NnError::UnknownParam(name)) => IoError::UnknownParam(name),
        other => IoError::Model(other),
    }
}

impl Checkpoint {
    pub fn from_stacks(
        architecture: Architecture,
        generator: &LayerStack<f32>,
        discriminator: &LayerStack<f32>,
        train_config: Option<TrainConfig>,
        log_digest: Option<String>,
    ) -> Self {
        let mut tensors = generator.tensors();
        tensors.extend(discriminator.tensors());
        Self { architecture, train_config, log_digest, tensors }
    }

    pub fn from_outcome(o: &TrainOutcome) -> Self {
        Self::from_stacks(o.architecture.clone(), &o.generator, &o.discriminator, Some(o.config.clone()), Some(o.log.digest()))
    }

    fn with_prefix(&self, prefix: &str) -> BTreeMap<String, Tensor<f32>> {
        let p = format!("{prefix}.");
        self.tensors.iter().filter(|(k, _)| k.starts_with(&p)).map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn generator(&self) -> Result<LayerStack<f32>, IoError> {
        restore_generator(&self.architecture.generator, self.with_prefix(GENERATOR_PREFIX)).map_err(split_err)
    }

    pub fn discriminator(&self) -> Result<LayerStack<f32>, IoError> {
        restore_discriminator(&self.architecture.discriminator, self.with_prefix(DISCRIMINATOR_PREFIX)).map_err(split_err)
    }

    /// Training dropout probability, when the checkpoint records its config.
    pub fn p_train(&self) -> Option<f64> {
        self.train_config.as_ref().map(|c| c.p_train.get())
    }

    /// Every tensor must belong to exactly one of the two networks.
    fn validate(&self) -> Result<(), IoError> {
        let known = |k: &str| k.starts_with(&format!("{GENERATOR_PREFIX}.")) || k.starts_with(&format!("{DISCRIMINATOR_PREFIX}."));
        if let Some(k) = self.tensors.keys().find(|k| !known(k)) {
            return Err(IoError::UnknownParam(k.clone()));
        }
        self.generator()?;
        self.discriminator()?;
        Ok(())
    }
}

pub fn encode_checkpoint(c: &Checkpoint) -> Result<Vec<u8>, IoError> {
    c.validate()?;
    let header = Header {
        architecture: c.architecture.clone(),
        train_config: c.train_config.clone(),
        log_digest: c.log_digest.clone(),
        tensors: c.tensors.iter().map(|(k, t)| TensorEntry { name: k.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| IoError::Header(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in c.tensors.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, IoError> {
    const PREFIX: usize = 16;
    const DIGEST: usize = 32;
    if bytes.len() < PREFIX + DIGEST || &bytes[..8] != MAGIC {
        return Err(IoError::NotCheckpoint);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes"));
    if version != FORMAT_VERSION {
        return Err(IoError::Version { expected: FORMAT_VERSION, found: version });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
    if Sha256::digest(body).as_slice() != digest {
        return Err(IoError::Digest);
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("four bytes")) as usize;
    let json = body.get(PREFIX..PREFIX + header_len).ok_or_else(|| IoError::Header("length past end of file".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| IoError::Header(e.to_string()))?;
    let mut offset = PREFIX + header_len;
    let mut tensors = BTreeMap::new();
    for entry in header.tensors {
        let len: usize = entry.shape.iter().product();
        let block = body
            .get(offset..offset + 4 * len)
            .ok_or_else(|| IoError::Header(format!("tensor `{}` runs past end of file", entry.name)))?;
        let data = block.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect();
        offset += 4 * len;
        if tensors.insert(entry.name.clone(), Tensor::new(entry.shape, data)?).is_some() {
            return Err(IoError::Header(format!("tensor `{}` appears twice", entry.name)));
        }
    }
    if offset != body.len() {
        return Err(IoError::Header(format!("{} unread bytes after the last tensor", body.len() - offset)));
    }
    let c = Checkpoint {
        architecture: header.architecture,
        train_config: header.train_config,
        log_digest: header.log_digest,
        tensors,
    };
    c.validate()?;
    Ok(c)
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<(), IoError> {
    write_file(path, &encode_checkpoint(c)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    decode_checkpoint(&read_file(path)?)
}
