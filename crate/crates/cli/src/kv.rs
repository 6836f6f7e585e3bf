//! The human-readable key-value format shared by manifests, config files,
//! sidecars, and machine-readable reports.
//!
//! Grammar: `# comment` lines, `[section]` headers, `key = value` entries.
//! Entries before any header live in the unnamed section "". Writing
//! preserves insertion order, so output is byte-deterministic.

use std::path::Path;

use crate::{Result, ToolError};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvFile {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl KvFile {
    pub fn new() -> Self {
        KvFile::default()
    }

    pub fn push(&mut self, section: &str, key: &str, value: impl ToString) {
        let entry = (key.to_string(), value.to_string());
        if let Some((_, entries)) = self.sections.iter_mut().find(|(name, _)| name == section) {
            entries.push(entry);
        } else {
            self.sections.push((section.to_string(), vec![entry]));
        }
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(name, _)| name == section)?
            .1
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn section(&self, section: &str) -> Option<&[(String, String)]> {
        self.sections.iter().find(|(name, _)| name == section).map(|(_, e)| e.as_slice())
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(name, _)| name.as_str())
    }

    pub fn parse(text: &str, origin: &Path) -> Result<KvFile> {
        let mut file = KvFile::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return Err(ToolError::format(
                        origin,
                        format!("line {}: unterminated section header", lineno + 1),
                    ));
                };
                current = name.trim().to_string();
                // materialize the section even if it stays empty
                if !file.sections.iter().any(|(n, _)| *n == current) {
                    file.sections.push((current.clone(), Vec::new()));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ToolError::format(
                    origin,
                    format!("line {}: expected `key = value`", lineno + 1),
                ));
            };
            file.push(&current, key.trim(), value.trim());
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<KvFile> {
        let text = std::fs::read_to_string(path).map_err(|e| ToolError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            if !name.is_empty() {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push('[');
                out.push_str(name);
                out.push_str("]\n");
            }
            for (k, v) in entries {
                out.push_str(k);
                out.push_str(" = ");
                out.push_str(v);
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| ToolError::io(path, e))
    }
}
