//! CIFAR binary batches: 3073-byte records (1 label byte + 3×1024 plane
//! bytes, R then G then B, 32×32 row-major).

use std::io::Read;
use std::path::{Path, PathBuf};

use watertox_core::data::{Dataset, Split};
use watertox_core::tensor::Tensor;

use crate::{Result, ToolError};

pub const RECORD_LEN: usize = 3073;

/// Load one or more batch files into a single (N,3,32,32) dataset.
pub fn load_cifar_binary(paths: &[PathBuf], classes: usize, split: Split) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(ToolError::Usage("no CIFAR batch files given".into()));
    }
    let mut data: Vec<f32> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for path in paths {
        let (d, l) = load_file(path)?;
        data.extend(d);
        labels.extend(l);
    }
    let n = labels.len();
    let images = Tensor::new(vec![n, 3, 32, 32], data).map_err(ToolError::Core)?;
    Dataset::new(images, labels, classes, split).map_err(ToolError::Core)
}

fn load_file(path: &Path) -> Result<(Vec<f32>, Vec<usize>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| ToolError::io(path, e))?;
    if bytes.is_empty() || bytes.len() % RECORD_LEN != 0 {
        return Err(ToolError::format(
            path,
            format!("length {} is not a positive multiple of {RECORD_LEN}", bytes.len()),
        ));
    }
    let n = bytes.len() / RECORD_LEN;
    let mut data = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(RECORD_LEN) {
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((data, labels))
}
