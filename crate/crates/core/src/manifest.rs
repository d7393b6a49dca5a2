//! Run manifest: what each stage read and wrote, with content digests.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "muontag-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Path as given to the stage.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<FileDigest> {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(hasher.finalize()),
            bytes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: String,
    pub seed: u64,
    pub config_digest: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_time_s: f64,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub stages: Vec<StageEntry>,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            tool_version: crate::TOOL_VERSION.into(),
            stages: Vec::new(),
        }
    }
}

impl RunManifest {
    /// Loads `dir/manifest.json`, or an empty manifest when absent.
    pub fn load_or_default(dir: &Path) -> Result<RunManifest> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(RunManifest::default());
        }
        let m: RunManifest = crate::io::read_json(&path)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Schema(format!("{}: unknown manifest format {}", path.display(), m.format)));
        }
        Ok(m)
    }

    /// Replaces any previous entry for the same stage.
    pub fn record(&mut self, entry: StageEntry) {
        self.stages.retain(|s| s.stage != entry.stage);
        self.stages.push(entry);
        self.tool_version = crate::TOOL_VERSION.into();
    }

    pub fn stage(&self, name: &str) -> Option<&StageEntry> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::io::write_json(&dir.join(MANIFEST_FILE), self)
    }
}
