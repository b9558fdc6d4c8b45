use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub started: String,
    pub finished: String,
    pub files: Vec<FileDigest>,
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn digest(name: &str, bytes: &[u8]) -> FileDigest {
    FileDigest {
        path: name.to_string(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(bytes)),
    }
}

/// Collects files written into one run directory.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileDigest>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `name` once; a second write to the same name is refused.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if self.files.iter().any(|f| f.path == name) {
            return Err(Error::InvalidArgument(format!("{name} written twice")));
        }
        fs::write(self.root.join(name), bytes)?;
        self.files.push(digest(name, bytes));
        Ok(())
    }

    /// Writes `manifest.json` and re-reads every listed file against it.
    pub fn finish(self, command: &str, seed: u64, config: serde_json::Value, started: String) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: version_string(),
            seed,
            config,
            started,
            finished: timestamp(),
            files: self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST_FILE), text)?;
        verify_manifest(&self.root)
    }
}

/// Loads the manifest in `dir` and checks every digest against the file on disk.
pub fn verify_manifest(dir: &Path) -> Result<RunManifest> {
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    for f in &manifest.files {
        let actual = digest(&f.path, &fs::read(dir.join(&f.path))?);
        if actual != *f {
            return Err(Error::InvalidArgument(format!("digest mismatch for {}", f.path)));
        }
    }
    Ok(manifest)
}

/// Comma-separated table with a header row.
pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            text: header.join(",") + "\n",
            width: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.width);
        self.text += &cells.join(",");
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

pub fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
