use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use dropnoise_core::io::{decode_checkpoint, read_file, Checkpoint, FileDigest, IoError};
use dropnoise_core::LayerStack;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_EXTENSION: &str = "ckpt";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("{path}: {source}")]
    Checkpoint { path: String, source: IoError },

    #[error("{0}: cannot list directory: {1}")]
    Dir(String, std::io::Error),

    #[error("duplicate model id `{0}`")]
    Duplicate(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub id: String,
    pub p_train: Option<f64>,
    pub epochs: Option<usize>,
    pub dataset_size: Option<usize>,
    pub seed: Option<u64>,
    pub latent_dim: usize,
    pub checkpoint_sha256: String,
    pub log_digest: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ModelEntry {
    pub meta: ModelMeta,
    pub generator: Arc<LayerStack<f32>>,
}

/// Loaded generators, ordered by training p then id. Read-only once built.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    entries: Vec<ModelEntry>,
}

impl Registry {
    pub fn new(mut entries: Vec<ModelEntry>) -> Result<Self, RegistryError> {
        entries.sort_by(|a, b| {
            let key = |m: &ModelMeta| m.p_train.unwrap_or(f64::INFINITY);
            key(&a.meta).total_cmp(&key(&b.meta)).then_with(|| a.meta.id.cmp(&b.meta.id))
        });
        let mut ids: Vec<&str> = entries.iter().map(|e| e.meta.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(RegistryError::Duplicate(w[0].to_owned()));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ModelEntry> {
        self.entries.iter().find(|e| e.meta.id == id)
    }

    pub fn metas(&self) -> Vec<ModelMeta> {
        self.entries.iter().map(|e| e.meta.clone()).collect()
    }
}

/// Builds an entry from checkpoint bytes.
pub fn entry_from_bytes(id: &str, bytes: &[u8]) -> Result<ModelEntry, IoError> {
    let c: Checkpoint = decode_checkpoint(bytes)?;
    let generator = c.generator()?;
    let cfg = c.train_config.as_ref();
    let meta = ModelMeta {
        id: id.to_owned(),
        p_train: c.p_train(),
        epochs: cfg.map(|c| c.epochs),
        dataset_size: cfg.and_then(|c| c.dataset_size),
        seed: cfg.map(|c| c.seed),
        latent_dim: generator.input_shape()[0],
        checkpoint_sha256: FileDigest::of(id, bytes).sha256,
        log_digest: c.log_digest.clone(),
    };
    Ok(ModelEntry { meta, generator: Arc::new(generator) })
}

/// Checkpoint files of `dir`, sorted by name.
pub fn checkpoint_files(dir: &Path) -> Result<Vec<PathBuf>, RegistryError> {
    let list = std::fs::read_dir(dir).map_err(|e| RegistryError::Dir(dir.display().to_string(), e))?;
    let mut files: Vec<PathBuf> = list
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == CHECKPOINT_EXTENSION))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every checkpoint in `dir`; the file stem is the model id.
/// `loaded` counts finished files for progress reporting.
pub fn load_dir(dir: &Path, loaded: &AtomicUsize) -> Result<Registry, RegistryError> {
    let mut entries = Vec::new();
    for path in checkpoint_files(dir)? {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let err = |source| RegistryError::Checkpoint { path: path.display().to_string(), source };
        let bytes = read_file(&path).map_err(err)?;
        entries.push(entry_from_bytes(&id, &bytes).map_err(err)?);
        loaded.fetch_add(1, Ordering::SeqCst);
    }
    Registry::new(entries)
}
