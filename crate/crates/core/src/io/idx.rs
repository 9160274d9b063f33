//! MNIST IDX container: big-endian magic, counts, then unsigned bytes.

use std::path::Path;

use dropnoise_tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::IoError;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// SHA-256 of a source file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(file: impl Into<String>, bytes: &[u8]) -> Self {
        Self { file: file.into(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() as u64 }
    }
}

/// Images in `[−1, 1]` as `[N, 1, H, W]`, with optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Option<Vec<u8>>,
    pub provenance: Vec<FileDigest>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-image shape `[1, H, W]`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// The images at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Tensor<f32> {
        let per: usize = self.image_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.image_shape());
        Tensor::new(shape, data).expect("gathered length matches shape")
    }
}

/// Maps a byte in `[0, 255]` to `[−1, 1]`.
pub fn normalize_pixel(b: u8) -> f32 {
    (f64::from(b) / 127.5 - 1.0) as f32
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().expect("four bytes"))
}

fn check_magic(file: &str, bytes: &[u8], expected: u32, header: usize) -> Result<(), IoError> {
    if bytes.len() < header {
        return Err(IoError::Truncated { file: file.to_owned(), expected: header as u64, actual: bytes.len() as u64 });
    }
    let found = read_u32(bytes, 0);
    if found != expected {
        return Err(IoError::BadMagic { file: file.to_owned(), expected, found });
    }
    Ok(())
}

fn check_payload(file: &str, bytes: &[u8], header: usize, count: usize) -> Result<(), IoError> {
    let expected = header + count;
    if bytes.len() < expected {
        return Err(IoError::Truncated { file: file.to_owned(), expected: expected as u64, actual: bytes.len() as u64 });
    }
    if bytes.len() > expected {
        return Err(IoError::TrailingBytes { file: file.to_owned(), expected: expected as u64, actual: bytes.len() as u64 });
    }
    Ok(())
}

/// Decodes an image file held in memory.
pub fn parse_images(file: &str, bytes: &[u8]) -> Result<Tensor<f32>, IoError> {
    check_magic(file, bytes, IMAGES_MAGIC, 16)?;
    let (n, rows, cols) = (read_u32(bytes, 4) as usize, read_u32(bytes, 8) as usize, read_u32(bytes, 12) as usize);
    if n == 0 || rows == 0 || cols == 0 {
        return Err(IoError::EmptyDimension { file: file.to_owned() });
    }
    let count = n.checked_mul(rows).and_then(|v| v.checked_mul(cols)).ok_or(IoError::EmptyDimension { file: file.to_owned() })?;
    check_payload(file, bytes, 16, count)?;
    let data = bytes[16..].iter().map(|&b| normalize_pixel(b)).collect();
    Ok(Tensor::new(vec![n, 1, rows, cols], data)?)
}

/// Decodes a label file held in memory.
pub fn parse_labels(file: &str, bytes: &[u8]) -> Result<Vec<u8>, IoError> {
    check_magic(file, bytes, LABELS_MAGIC, 8)?;
    let n = read_u32(bytes, 4) as usize;
    check_payload(file, bytes, 8, n)?;
    Ok(bytes[8..].to_vec())
}

fn read(path: &Path) -> Result<(String, Vec<u8>), IoError> {
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| IoError::File { path: name.clone(), source })?;
    Ok((name, bytes))
}

pub fn load_mnist_idx(images: &Path, labels: Option<&Path>) -> Result<Dataset, IoError> {
    let (name, bytes) = read(images)?;
    let tensor = parse_images(&name, &bytes)?;
    let mut provenance = vec![FileDigest::of(file_name(images), &bytes)];
    let labels = match labels {
        Some(path) => {
            let (lname, lbytes) = read(path)?;
            let l = parse_labels(&lname, &lbytes)?;
            if l.len() != tensor.shape()[0] {
                return Err(IoError::CountMismatch { images: tensor.shape()[0], labels: l.len() });
            }
            provenance.push(FileDigest::of(file_name(path), &lbytes));
            Some(l)
        }
        None => None,
    };
    Ok(Dataset { images: tensor, labels, provenance })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

/// Encodes `[N, 1, H, W]` bytes as an IDX image file.
pub fn encode_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_map_to_unit_interval() {
        assert_eq!(normalize_pixel(0), -1.0);
        assert_eq!(normalize_pixel(255), 1.0);
        let mut prev = -2.0;
        for b in 0..=255u8 {
            let v = normalize_pixel(b);
            assert!(v > prev && (-1.0..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn malformed_headers_are_reported() {
        let good = encode_images(1, 2, 2, &[0, 1, 2, 3]);
        let mut bad = good.clone();
        bad[3] = 0x01;
        assert!(matches!(parse_images("x", &bad), Err(IoError::BadMagic { found: 0x801, .. })));
        assert!(matches!(
            parse_images("x", &good[..18]),
            Err(IoError::Truncated { expected: 20, actual: 18, .. })
        ));
        assert!(matches!(parse_images("x", &good[..10]), Err(IoError::Truncated { expected: 16, .. })));
        let mut long = good.clone();
        long.push(9);
        assert!(matches!(parse_images("x", &long), Err(IoError::TrailingBytes { .. })));
        assert!(matches!(parse_images("x", &encode_images(0, 2, 2, &[])), Err(IoError::EmptyDimension { .. })));
        assert!(matches!(parse_labels("y", &good), Err(IoError::BadMagic { expected: 0x801, .. })));
    }
}
