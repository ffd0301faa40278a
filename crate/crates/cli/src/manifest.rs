//! Run manifest: every emitted file with its SHA-256, the stage that wrote
//! it, and the inputs key used for idempotence checks.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub sha256: String,
    pub stage: String,
    pub seed: Option<u64>,
    pub inputs: String,
    pub written_unix: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub created_unix: u64,
    pub updated_unix: u64,
    /// Keyed by path relative to the output directory.
    pub files: BTreeMap<String, Entry>,
}

impl RunManifest {
    pub fn load_or_new(out: &Path, config_hash: &str) -> io::Result<Self> {
        let path = out.join(MANIFEST_FILE);
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            let mut m: RunManifest =
                serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            m.config_hash = config_hash.to_string();
            Ok(m)
        } else {
            let t = now();
            Ok(Self {
                config_hash: config_hash.to_string(),
                created_unix: t,
                updated_unix: t,
                files: BTreeMap::new(),
            })
        }
    }

    pub fn save(&mut self, out: &Path) -> io::Result<()> {
        self.updated_unix = now();
        fs::create_dir_all(out)?;
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        fs::write(out.join(MANIFEST_FILE), text)
    }

    fn rel(out: &Path, path: &Path) -> String {
        path.strip_prefix(out).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    pub fn record(&mut self, out: &Path, path: &Path, stage: &str, seed: Option<u64>, inputs: &str) -> io::Result<()> {
        let entry = Entry {
            sha256: hash_file(path)?,
            stage: stage.to_string(),
            seed,
            inputs: inputs.to_string(),
            written_unix: now(),
        };
        self.files.insert(Self::rel(out, path), entry);
        Ok(())
    }

    /// True when every path is recorded with `inputs` and still hashes to
    /// the recorded digest.
    pub fn up_to_date(&self, out: &Path, paths: &[PathBuf], inputs: &str) -> bool {
        paths.iter().all(|p| match self.files.get(&Self::rel(out, p)) {
            Some(e) => e.inputs == inputs && hash_file(p).map(|h| h == e.sha256).unwrap_or(false),
            None => false,
        })
    }

    pub fn hash_of(&self, out: &Path, path: &Path) -> Option<&str> {
        self.files.get(&Self::rel(out, path)).map(|e| e.sha256.as_str())
    }
}
