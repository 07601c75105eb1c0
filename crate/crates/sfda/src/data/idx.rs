//! IDX binary format, the classic digit-dataset layout: a big-endian magic
//! word (0x00000803 for images, 0x00000801 for labels), big-endian 32-bit
//! dimension sizes, then an unsigned-byte payload.

use crate::data::Dataset;
use crate::error::SfdaError;
use crate::numerics::Tensor2D;
use crate::Result;
use std::fs;
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(SfdaError::IdxTruncated {
            needed: end,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| SfdaError::io(path.display().to_string(), e))
}

struct IdxImages {
    n: usize,
    h: usize,
    w: usize,
    pixels: Vec<u8>,
}

fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(SfdaError::IdxWrongMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let h = read_u32_be(bytes, 8)? as usize;
    let w = read_u32_be(bytes, 12)? as usize;
    let needed = 16 + n * h * w;
    if bytes.len() < needed {
        return Err(SfdaError::IdxTruncated {
            needed,
            found: bytes.len(),
        });
    }
    Ok(IdxImages {
        n,
        h,
        w,
        pixels: bytes[16..needed].to_vec(),
    })
}

fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(SfdaError::IdxWrongMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let needed = 8 + n;
    if bytes.len() < needed {
        return Err(SfdaError::IdxTruncated {
            needed,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

/// Load an image/label IDX pair into a dataset: images flattened row-major
/// to `h*w` columns and scaled to [0, 1], labels paired by index. The class
/// count is `max(label) + 1` unless a larger `c` is supplied downstream.
pub fn load_idx(path_images: &Path, path_labels: &Path) -> Result<Dataset> {
    let images = parse_images(&read_file(path_images)?)?;
    let labels = parse_labels(&read_file(path_labels)?)?;
    if images.n != labels.len() {
        return Err(SfdaError::IdxCountMismatch {
            images: images.n,
            labels: labels.len(),
        });
    }
    let d = images.h * images.w;
    let data: Vec<f64> = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let x = Tensor2D::from_vec(images.n, d, data)?;
    let y: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let c = y.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(x, Some(y), c.max(2), path_images.display().to_string())
}

/// Write images in IDX format: `n` images of `h*w` bytes each.
pub fn write_idx_images(path: &Path, pixels: &[u8], n: usize, h: usize, w: usize) -> Result<()> {
    assert_eq!(pixels.len(), n * h * w, "pixel buffer size mismatch");
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(n as u32).to_be_bytes());
    bytes.extend_from_slice(&(h as u32).to_be_bytes());
    bytes.extend_from_slice(&(w as u32).to_be_bytes());
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(|e| SfdaError::io(path.display().to_string(), e))
}

/// Write labels in IDX format.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fs::write(path, bytes).map_err(|e| SfdaError::io(path.display().to_string(), e))
}
