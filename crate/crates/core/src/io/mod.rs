//! Dataset loading, checkpoints, image grids and result tables.

mod checkpoint;
mod idx;
mod image;
mod table;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use idx::{
    encode_images, encode_labels, load_mnist_idx, normalize_pixel, parse_images, parse_labels, Dataset, FileDigest,
    IMAGES_MAGIC, LABELS_MAGIC,
};
pub use image::{decode_png, encode_pgm, encode_png, quantize, render_grid, save_image_grid, GrayImage, GridFormat};
pub use table::{format_cell, parse_table, read_csv_table, table_bytes, write_csv_table, Table, CORNER};

use dropnoise_tensor::TensorError;
use thiserror::Error;

use crate::models::ModelError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },

    #[error("{file}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { file: String, expected: u32, found: u32 },

    #[error("{file}: truncated, expected {expected} bytes but found {actual}")]
    Truncated { file: String, expected: u64, actual: u64 },

    #[error("{file}: {actual} bytes where the header implies {expected}")]
    TrailingBytes { file: String, expected: u64, actual: u64 },

    #[error("{file}: header declares an empty dimension")]
    EmptyDimension { file: String },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("not a checkpoint file")]
    NotCheckpoint,

    #[error("checkpoint format version {found}, this build reads {expected}")]
    Version { expected: u32, found: u32 },

    #[error("checkpoint digest mismatch")]
    Digest,

    #[error("checkpoint header: {0}")]
    Header(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("{count} images do not fit a {rows}x{cols} grid")]
    GridOverflow { count: usize, rows: usize, cols: usize },

    #[error("expected images shaped [K, 1, H, W], got {0:?}")]
    ImageShape(Vec<usize>),

    #[error("png: {0}")]
    Png(String),

    #[error("table: {0}")]
    Table(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| IoError::File { path: dir.display().to_string(), source })?;
    }
    std::fs::write(path, bytes).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::File { path: path.display().to_string(), source })
}
