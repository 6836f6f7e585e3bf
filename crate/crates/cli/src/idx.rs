//! IDX dataset files: big-endian headers, magic 0x00000803 for u8 image
//! cubes and 0x00000801 for u8 label vectors.

use std::io::Read;
use std::path::Path;

use watertox_core::data::{Dataset, Split};
use watertox_core::tensor::Tensor;

use crate::{Result, ToolError};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| ToolError::io(path, e))?;
    Ok(buf)
}

fn be32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| ToolError::format(path, format!("truncated header at byte {at}")))
}

/// Parse an image file into raw bytes plus (n, h, w).
pub fn read_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let bytes = read_all(path)?;
    let magic = be32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(ToolError::format(
            path,
            format!("bad magic 0x{magic:08x}, want 0x{IMAGES_MAGIC:08x}"),
        ));
    }
    let n = be32(&bytes, 4, path)? as usize;
    let h = be32(&bytes, 8, path)? as usize;
    let w = be32(&bytes, 12, path)? as usize;
    let want = 16 + n * h * w;
    if bytes.len() < want {
        return Err(ToolError::format(
            path,
            format!("truncated: {} bytes, header promises {want}", bytes.len()),
        ));
    }
    Ok((bytes[16..want].to_vec(), n, h, w))
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    let magic = be32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(ToolError::format(
            path,
            format!("bad magic 0x{magic:08x}, want 0x{LABELS_MAGIC:08x}"),
        ));
    }
    let n = be32(&bytes, 4, path)? as usize;
    let want = 8 + n;
    if bytes.len() < want {
        return Err(ToolError::format(
            path,
            format!("truncated: {} bytes, header promises {want}", bytes.len()),
        ));
    }
    Ok(bytes[8..want].to_vec())
}

/// Load an image/label pair as a dataset with pixels scaled to [0,1].
pub fn load_idx(images_path: &Path, labels_path: &Path, classes: usize, split: Split) -> Result<Dataset> {
    let (pixels, n, h, w) = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != n {
        return Err(ToolError::format(
            images_path,
            format!("{n} images but {} labels in {}", labels.len(), labels_path.display()),
        ));
    }
    let data: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let images = Tensor::new(vec![n, 1, h, w], data).map_err(ToolError::Core)?;
    let labels = labels.into_iter().map(|b| b as usize).collect();
    Dataset::new(images, labels, classes, split).map_err(ToolError::Core)
}

pub fn write_images(path: &Path, pixels: &[u8], n: usize, h: usize, w: usize) -> Result<()> {
    assert_eq!(pixels.len(), n * h * w);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| ToolError::io(path, e))
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out).map_err(|e| ToolError::io(path, e))
}

/// Quantize a [0,1] dataset back to IDX bytes: round(v·255), clamped.
pub fn dataset_to_bytes(ds: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let pixels = ds
        .images
        .data()
        .iter()
        .map(|&v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect();
    let labels = ds.labels.iter().map(|&l| l as u8).collect();
    (pixels, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn full_byte_scales_to_one() {
        let dir = tempdir().unwrap();
        let img = dir.path().join("i.idx");
        let lab = dir.path().join("l.idx");
        write_images(&img, &[255u8; 4], 1, 2, 2).unwrap();
        write_labels(&lab, &[3]).unwrap();
        let ds = load_idx(&img, &lab, 10, Split::Train).unwrap();
        assert_eq!(ds.images.data(), &[1.0; 4]);
        assert_eq!(ds.labels, vec![3]);
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let img = dir.path().join("i.idx");
        let lab = dir.path().join("l.idx");
        write_images(&img, &[0u8; 8], 2, 2, 2).unwrap();
        write_labels(&lab, &[1]).unwrap();
        let err = load_idx(&img, &lab, 10, Split::Train).unwrap_err();
        assert!(err.to_string().contains("2 images but 1 labels"), "{err}");
    }

    #[test]
    fn wrong_magic_and_truncation_are_distinct() {
        let dir = tempdir().unwrap();
        let bad = dir.path().join("bad.idx");
        std::fs::write(&bad, 0x0000_0801u32.to_be_bytes()).unwrap();
        let err = read_images(&bad).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");

        let trunc = dir.path().join("trunc.idx");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&10u32.to_be_bytes());
        bytes.extend_from_slice(&28u32.to_be_bytes());
        bytes.extend_from_slice(&28u32.to_be_bytes());
        bytes.extend_from_slice(&[0u8; 100]); // far short of 10*28*28
        std::fs::write(&trunc, bytes).unwrap();
        let err = read_images(&trunc).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn canonical_sized_file_parses() {
        // a 10k-image file with the canonical 28x28 geometry
        let dir = tempdir().unwrap();
        let img = dir.path().join("big.idx");
        write_images(&img, &vec![7u8; 10_000 * 28 * 28], 10_000, 28, 28).unwrap();
        let (_, n, h, w) = read_images(&img).unwrap();
        assert_eq!((n, h, w), (10_000, 28, 28));
    }
}
