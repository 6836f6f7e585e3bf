//! The WTXW tensor archive.
//!
//! Layout: magic "WTXW", version u16 LE, name (u16 LE length + UTF-8),
//! tensor count u32 LE, then per tensor: name (u16 LE + UTF-8), rank u8,
//! dims u32 LE each, raw f32 LE values row-major.
//!
//! Networks serialize their parameter list in declaration order; adversarial
//! batches reuse the same container with tensors "clean", "adversarial",
//! "mask", "labels".

use std::path::Path;

use watertox_core::attack::{AdversarialBatch, ConfigSnapshot};
use watertox_core::nn::Network;
use watertox_core::tensor::Tensor;
use watertox_core::zoo::{self, ArchTag};

use crate::kv::KvFile;
use crate::{Result, ToolError};

pub const MAGIC: &[u8; 4] = b"WTXW";
pub const VERSION: u16 = 1;

pub fn write_archive(path: &Path, name: &str, tensors: &[(&str, &Tensor)]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_str(&mut out, name);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (tname, t) in tensors {
        push_str(&mut out, tname);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| ToolError::io(path, e))
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self.bytes.get(self.at..self.at + n).ok_or_else(|| {
            ToolError::format(self.path, format!("truncated at byte {}", self.at))
        })?;
        self.at += n;
        Ok(slice)
    }

    fn u16le(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32le(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16le()? as usize;
        let b = self.take(len)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| ToolError::format(self.path, "invalid UTF-8 in name"))
    }
}

pub fn read_archive(path: &Path) -> Result<(String, Vec<(String, Tensor)>)> {
    let bytes = std::fs::read(path).map_err(|e| ToolError::io(path, e))?;
    let mut r = Reader { bytes: &bytes, at: 0, path };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(ToolError::format(path, format!("bad magic {magic:02x?}, want {MAGIC:02x?}")));
    }
    let version = r.u16le()?;
    if version != VERSION {
        return Err(ToolError::format(path, format!("unsupported version {version}, want {VERSION}")));
    }
    let name = r.string()?;
    let count = r.u32le()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let tname = r.string()?;
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32le()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| ToolError::format(path, format!("tensor {tname}: {e}")))?;
        tensors.push((tname, t));
    }
    Ok((name, tensors))
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    let tensors: Vec<(&str, &Tensor)> =
        net.params().iter().map(|(n, t)| (n.as_str(), t)).collect();
    write_archive(path, &net.name, &tensors)
}

/// Rebuild a network from its architecture tag, then load weights from the
/// archive, validating every tensor shape by name.
pub fn load_network(
    path: &Path,
    name: &str,
    tag: ArchTag,
    input_shape: (usize, usize, usize),
    classes: usize,
) -> Result<Network> {
    let (_, tensors) = read_archive(path)?;
    let mut net = zoo::build_named(name, tag, input_shape, classes, 0).map_err(ToolError::Core)?;
    let expected: Vec<String> = net.params().iter().map(|(n, _)| n.clone()).collect();
    if tensors.len() != expected.len() {
        return Err(ToolError::format(
            path,
            format!("{} tensors in file, architecture {} wants {}", tensors.len(), tag.as_str(), expected.len()),
        ));
    }
    for (tname, t) in tensors {
        let Some(current) = net.param(&tname) else {
            return Err(ToolError::format(
                path,
                format!("tensor {tname} not part of architecture {}", tag.as_str()),
            ));
        };
        if current.shape() != t.shape() {
            return Err(ToolError::format(
                path,
                format!(
                    "tensor {tname}: shape {:?} does not match architecture {} ({:?})",
                    t.shape(),
                    tag.as_str(),
                    current.shape()
                ),
            ));
        }
        net.set_param(&tname, t).map_err(ToolError::Core)?;
    }
    Ok(net)
}

pub fn save_batch(batch: &AdversarialBatch, path: &Path) -> Result<()> {
    let mask = Tensor::new(
        batch.clean.shape().to_vec(),
        batch.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )
    .map_err(ToolError::Core)?;
    let labels = Tensor::new(
        vec![batch.labels.len()],
        batch.labels.iter().map(|&l| l as f32).collect(),
    )
    .map_err(ToolError::Core)?;
    write_archive(
        path,
        &format!("batch:{}", batch.snapshot.method),
        &[
            ("clean", &batch.clean),
            ("adversarial", &batch.adversarial),
            ("mask", &mask),
            ("labels", &labels),
        ],
    )
}

/// Sidecar: the effective config plus per-image distortions.
pub fn save_sidecar(batch: &AdversarialBatch, path: &Path) -> Result<()> {
    let mut kv = KvFile::new();
    for (k, v) in &batch.snapshot.entries {
        kv.push("", k, v);
    }
    kv.push("", "budget", batch.snapshot.budget);
    kv.push("", "ensemble", batch.snapshot.ensemble.join(","));
    for (i, d) in batch.linf.iter().enumerate() {
        kv.push("distortion", &format!("linf.{i}"), d);
    }
    for i in 0..batch.len() {
        kv.push("distortion", &format!("mask_fraction.{i}"), batch.mask_fraction(i));
    }
    kv.save(path)
}

pub fn load_batch(archive: &Path, sidecar: &Path) -> Result<AdversarialBatch> {
    let (name, tensors) = read_archive(archive)?;
    let find = |key: &str| -> Result<&Tensor> {
        tensors
            .iter()
            .find(|(n, _)| n == key)
            .map(|(_, t)| t)
            .ok_or_else(|| ToolError::format(archive, format!("missing tensor {key}")))
    };
    let clean = find("clean")?.clone();
    let adversarial = find("adversarial")?.clone();
    let mask_t = find("mask")?;
    let labels_t = find("labels")?;
    if clean.shape() != adversarial.shape() || clean.shape() != mask_t.shape() {
        return Err(ToolError::format(archive, "clean/adversarial/mask shapes differ"));
    }
    let mask: Vec<bool> = mask_t.data().iter().map(|&v| v != 0.0).collect();
    let labels: Vec<usize> = labels_t.data().iter().map(|&v| v as usize).collect();

    let kv = KvFile::load(sidecar)?;
    let method = name.strip_prefix("batch:").unwrap_or(&name).to_string();
    let budget: f32 = kv
        .get("", "budget")
        .ok_or_else(|| ToolError::format(sidecar, "missing budget"))?
        .parse()
        .map_err(|_| ToolError::format(sidecar, "budget is not a number"))?;
    let ensemble: Vec<String> = kv
        .get("", "ensemble")
        .map(|s| s.split(',').map(str::to_string).collect())
        .unwrap_or_default();
    let entries: Vec<(String, String)> = kv
        .section("")
        .map(|e| {
            e.iter()
                .filter(|(k, _)| k != "budget" && k != "ensemble")
                .cloned()
                .collect()
        })
        .unwrap_or_default();
    let linf = clean.linf_per_row(&adversarial).map_err(ToolError::Core)?;
    Ok(AdversarialBatch {
        clean,
        adversarial,
        labels,
        mask,
        linf,
        snapshot: ConfigSnapshot { method, budget, ensemble, entries },
    })
}
