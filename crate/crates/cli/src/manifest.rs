//! The zoo manifest: role, architecture tag, seed, and weight path per
//! network, plus the shared input geometry.

use std::path::{Path, PathBuf};

use watertox_core::zoo::{ArchTag, Role};

use crate::kv::KvFile;
use crate::{Result, ToolError};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub role: Role,
    pub tag: ArchTag,
    pub seed: u64,
    /// Weight file path, relative to the manifest location.
    pub weights: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZooManifest {
    pub input_shape: (usize, usize, usize),
    pub classes: usize,
    pub entries: Vec<ManifestEntry>,
}

impl ZooManifest {
    pub fn surrogates(&self) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.role == Role::Surrogate).collect()
    }

    pub fn zero_shot_targets(&self) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.role == Role::ZeroShotTarget).collect()
    }

    /// Surrogate and zero-shot tags must not overlap.
    pub fn validate(&self) -> Result<()> {
        let surrogate_tags: Vec<ArchTag> = self.surrogates().iter().map(|e| e.tag).collect();
        for t in self.zero_shot_targets() {
            if surrogate_tags.contains(&t.tag) {
                return Err(ToolError::Usage(format!(
                    "zero-shot target {} shares architecture tag {} with a surrogate",
                    t.name,
                    t.tag.as_str()
                )));
            }
        }
        let mut names: Vec<&str> = self.entries.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.entries.len() {
            return Err(ToolError::Usage("duplicate network names in manifest".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut kv = KvFile::new();
        kv.push(
            "zoo",
            "input",
            format!("{}x{}x{}", self.input_shape.0, self.input_shape.1, self.input_shape.2),
        );
        kv.push("zoo", "classes", self.classes);
        for e in &self.entries {
            kv.push(&e.name, "role", e.role.as_str());
            kv.push(&e.name, "tag", e.tag.as_str());
            kv.push(&e.name, "seed", e.seed);
            kv.push(&e.name, "weights", &e.weights);
        }
        kv.save(path)
    }

    pub fn load(path: &Path) -> Result<ZooManifest> {
        let kv = KvFile::load(path)?;
        let input = kv
            .get("zoo", "input")
            .ok_or_else(|| ToolError::format(path, "missing [zoo] input"))?;
        let dims: Vec<usize> = input
            .split('x')
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| ToolError::format(path, format!("bad input geometry {input:?}")))?;
        if dims.len() != 3 {
            return Err(ToolError::format(path, format!("bad input geometry {input:?}")));
        }
        let classes: usize = kv
            .get("zoo", "classes")
            .ok_or_else(|| ToolError::format(path, "missing [zoo] classes"))?
            .parse()
            .map_err(|_| ToolError::format(path, "classes is not a number"))?;
        let mut entries = Vec::new();
        for name in kv.section_names() {
            if name.is_empty() || name == "zoo" {
                continue;
            }
            let field = |key: &str| -> Result<&str> {
                kv.get(name, key)
                    .ok_or_else(|| ToolError::format(path, format!("[{name}] missing {key}")))
            };
            let role = Role::parse(field("role")?)
                .ok_or_else(|| ToolError::format(path, format!("[{name}] bad role")))?;
            let tag = ArchTag::parse(field("tag")?).map_err(ToolError::Core)?;
            let seed: u64 = field("seed")?
                .parse()
                .map_err(|_| ToolError::format(path, format!("[{name}] seed is not a number")))?;
            entries.push(ManifestEntry {
                name: name.to_string(),
                role,
                tag,
                seed,
                weights: field("weights")?.to_string(),
            });
        }
        if entries.is_empty() {
            return Err(ToolError::format(path, "manifest lists no networks"));
        }
        let manifest =
            ZooManifest { input_shape: (dims[0], dims[1], dims[2]), classes, entries };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn weight_path(&self, manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&entry.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample() -> ZooManifest {
        ZooManifest {
            input_shape: (1, 28, 28),
            classes: 10,
            entries: vec![
                ManifestEntry {
                    name: "vgg-mini".into(),
                    role: Role::Surrogate,
                    tag: ArchTag::VggMini,
                    seed: 1001,
                    weights: "vgg-mini.wtxw".into(),
                },
                ManifestEntry {
                    name: "res-mini".into(),
                    role: Role::ZeroShotTarget,
                    tag: ArchTag::ResMini,
                    seed: 5001,
                    weights: "res-mini.wtxw".into(),
                },
            ],
        }
    }

    #[test]
    fn roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("zoo.manifest");
        let m = sample();
        m.save(&p).unwrap();
        assert_eq!(ZooManifest::load(&p).unwrap(), m);
    }

    #[test]
    fn overlapping_tags_rejected() {
        let mut m = sample();
        m.entries[1].tag = ArchTag::VggMini;
        assert!(m.validate().is_err());
    }
}
