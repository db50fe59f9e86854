//! Plain-text dataset manifest: `key = value` lines, one record per block
//! separated by blank lines, `#` starts a comment.
//!
//! ```text
//! name = usps
//! images = usps-images-idx3-ubyte
//! labels = usps-labels-idx1-ubyte
//! checksum = <sha256 of images bytes followed by labels bytes>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub images: PathBuf,
    pub labels: PathBuf,
    pub checksum: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn sha256_hex(chunks: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for c in chunks {
        hasher.update(c);
    }
    hasher.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut current: Vec<(String, String)> = Vec::new();
        let flush = |fields: &mut Vec<(String, String)>, entries: &mut Vec<ManifestEntry>| -> Result<()> {
            if fields.is_empty() {
                return Ok(());
            }
            let get = |key: &str| fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
            let require = |key: &str| {
                get(key).ok_or_else(|| Error::Config(format!("manifest record missing `{key}`")))
            };
            entries.push(ManifestEntry {
                name: require("name")?,
                images: require("images")?.into(),
                labels: require("labels")?.into(),
                checksum: get("checksum"),
            });
            fields.clear();
            Ok(())
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                flush(&mut current, &mut entries)?;
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("manifest line {}: expected key = value", lineno + 1)))?;
            current.push((k.trim().to_string(), v.trim().to_string()));
        }
        flush(&mut current, &mut entries)?;
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "name = {}", e.name);
            let _ = writeln!(out, "images = {}", e.images.display());
            let _ = writeln!(out, "labels = {}", e.labels.display());
            if let Some(c) = &e.checksum {
                let _ = writeln!(out, "checksum = {c}");
            }
        }
        out
    }

    pub fn get(&self, name: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Config(format!("dataset `{name}` not in manifest")))
    }
}

impl ManifestEntry {
    /// Resolves relative paths against `root` and verifies the checksum
    /// when one is recorded.
    pub fn resolve(&self, root: &Path) -> Result<(PathBuf, PathBuf)> {
        let images = root.join(&self.images);
        let labels = root.join(&self.labels);
        if let Some(expected) = &self.checksum {
            let actual = sha256_hex(&[&fs::read(&images)?, &fs::read(&labels)?]);
            if &actual != expected {
                return Err(Error::Config(format!(
                    "checksum mismatch for `{}`: manifest {expected}, files {actual}",
                    self.name
                )));
            }
        }
        Ok((images, labels))
    }
}
