//! Grayscale image grids.

use std::path::Path;

use dropnoise_tensor::Tensor;

use super::{write_file, IoError};

/// Maps `[−1, 1]` to `[0, 255]`, clamping outside values.
pub fn quantize(x: f32) -> u8 {
    ((f64::from(x) + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridFormat {
    Png,
    /// Binary `P5` graymap.
    Pgm,
}

/// Tiles `[K, 1, H, W]` images row-major into a `rows × cols` grid without
/// spacing; unused cells are black.
pub fn render_grid(images: &Tensor<f32>, rows: usize, cols: usize) -> Result<GrayImage, IoError> {
    let shape = images.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(IoError::ImageShape(shape.to_vec()));
    }
    let (k, h, w) = (shape[0], shape[2], shape[3]);
    if k > rows * cols {
        return Err(IoError::GridOverflow { count: k, rows, cols });
    }
    let width = cols * w;
    let mut pixels = vec![0u8; rows * h * width];
    for (i, img) in images.data().chunks(h * w).enumerate() {
        let (r, c) = (i / cols, i % cols);
        for y in 0..h {
            let dst = (r * h + y) * width + c * w;
            for (d, &v) in pixels[dst..dst + w].iter_mut().zip(&img[y * w..(y + 1) * w]) {
                *d = quantize(v);
            }
        }
    }
    Ok(GrayImage { width, height: rows * h, pixels })
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>, IoError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| IoError::Png(e.to_string()))?;
        writer.write_image_data(&img.pixels).map_err(|e| IoError::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<GrayImage, IoError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| IoError::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| IoError::Png("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| IoError::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(IoError::Png(format!("expected 8-bit grayscale, got {:?}/{:?}", info.color_type, info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok(GrayImage { width: info.width as usize, height: info.height as usize, pixels: buf })
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn save_image_grid(images: &Tensor<f32>, rows: usize, cols: usize, path: &Path, format: GridFormat) -> Result<(), IoError> {
    let img = render_grid(images, rows, cols)?;
    let bytes = match format {
        GridFormat::Png => encode_png(&img)?,
        GridFormat::Pgm => encode_pgm(&img),
    };
    write_file(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_endpoints_and_monotonicity() {
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 128);
        let mut prev = 0;
        for i in 0..=2000 {
            let q = quantize(-1.0 + i as f32 / 1000.0);
            assert!(q >= prev);
            prev = q;
        }
    }

    #[test]
    fn black_image_is_all_zero() {
        let img = render_grid(&Tensor::full(vec![1, 1, 28, 28], -1.0).unwrap(), 1, 1).unwrap();
        assert_eq!((img.width, img.height), (28, 28));
        assert!(img.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn tiles_are_placed_row_major() {
        // Six 1×2 images in a 2×3 grid; image i is filled with value i.
        let t = Tensor::from_fn(vec![6, 1, 1, 2], |j| (j / 2) as f32 / 127.5 - 1.0).unwrap();
        let img = render_grid(&t, 2, 3).unwrap();
        assert_eq!((img.width, img.height), (6, 2));
        assert_eq!(img.pixels, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);
        assert!(matches!(render_grid(&t, 2, 2), Err(IoError::GridOverflow { count: 6, .. })));
    }

    #[test]
    fn pgm_header() {
        let img = GrayImage { width: 2, height: 1, pixels: vec![7, 9] };
        assert_eq!(encode_pgm(&img), b"P5\n2 1\n255\n\x07\x09".to_vec());
    }
}
