//! Run manifests: which config, seed and input files produced a directory,
//! and digests of everything written into it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use attrgen::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    Ok(digest_bytes(&bytes))
}

pub fn config_digest(cfg: &ExperimentConfig) -> Result<String> {
    Ok(digest_bytes(&serde_json::to_vec(cfg)?))
}

/// `parent/file`, so keys do not depend on where a run directory lives.
fn short_name(path: &Path) -> String {
    let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    match path.parent().and_then(|p| p.file_name()) {
        Some(dir) => format!("{}/{file}", dir.to_string_lossy()),
        None => file,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            seed: cfg.seed,
            config_digest: config_digest(cfg)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(short_name(path), digest_file(path)?);
        Ok(())
    }

    /// Records every regular file in `dir` (except the manifest) and writes
    /// the manifest there.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.outputs = digest_dir(dir)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::InvalidArgument(format!("missing manifest {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Reads `dir`'s manifest and checks that every recorded output is
    /// present with the recorded digest.
    pub fn verify(dir: &Path) -> Result<Self> {
        let m = Self::read(dir)?;
        for (name, want) in &m.outputs {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::InvalidArgument(format!(
                    "{} lists {name}, which is missing",
                    dir.join(MANIFEST_FILE).display()
                )));
            }
            let got = digest_file(&path)?;
            if &got != want {
                return Err(Error::InvalidArgument(format!(
                    "digest mismatch for {}: manifest has {want}, file has {got}",
                    path.display()
                )));
            }
        }
        Ok(m)
    }
}

fn digest_dir(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack: Vec<PathBuf> = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).expect("walked from dir").to_string_lossy().replace('\\', "/");
            if rel != MANIFEST_FILE {
                out.insert(rel, digest_file(&path)?);
            }
        }
    }
    Ok(out)
}
