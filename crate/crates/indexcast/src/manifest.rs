//! Per-workdir record of which stage wrote which file, under which
//! configuration and from which inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::store::{load_json, save_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seed: u64,
    /// Artifact key to hex SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION,
            stages: BTreeMap::new(),
        }
    }
}

/// A file some stage reads or writes.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub key: String,
    pub path: PathBuf,
    /// Command that writes it.
    pub stage: &'static str,
    /// Manifest entry of that command's run.
    pub record: String,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl Manifest {
    pub fn load(workdir: &Path) -> Result<Self> {
        let path = workdir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let m: Manifest = load_json(&path)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(
                &path,
                format!("manifest version {} does not match {MANIFEST_VERSION}", m.version),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, workdir: &Path) -> Result<()> {
        save_json(&workdir.join(MANIFEST_FILE), self)
    }

    /// Fails unless `a` exists and is what its stage last wrote under `config_hash`,
    /// from inputs that are themselves unchanged. Files with no record are accepted
    /// only when `external` (user-supplied data).
    pub fn check(&self, a: &Artifact, config_hash: &str, external: bool) -> Result<()> {
        if !a.path.exists() {
            return Err(Error::MissingUpstream {
                artifact: format!("{} ({})", a.key, a.path.display()),
                stage: a.stage.into(),
            });
        }
        let Some(rec) = self.stages.get(&a.record) else {
            if external {
                return Ok(());
            }
            return Err(Error::Stale(format!(
                "{} has no manifest record; rerun `indexcast {}`",
                a.key, a.stage
            )));
        };
        let rerun = format!("rerun `indexcast {}`", a.stage);
        if rec.config_hash != config_hash {
            return Err(Error::Stale(format!(
                "{} was written under a different configuration; {rerun}",
                a.key
            )));
        }
        if rec.outputs.get(&a.key) != Some(&hash_file(&a.path)?) {
            return Err(Error::Stale(format!("{} changed after `{}` wrote it; {rerun}", a.key, a.stage)));
        }
        for (key, hash) in &rec.inputs {
            if let Some(producer) = self.stages.values().find(|r| r.outputs.contains_key(key)) {
                if producer.outputs[key] != *hash {
                    return Err(Error::Stale(format!("{} was built from an older {key}; {rerun}", a.key)));
                }
            }
        }
        Ok(())
    }

    pub fn record(&mut self, name: &str, config_hash: &str, seed: u64, inputs: &[Artifact], outputs: &[Artifact]) -> Result<()> {
        let hashes =
            |xs: &[Artifact]| -> Result<BTreeMap<String, String>> { xs.iter().map(|a| Ok((a.key.clone(), hash_file(&a.path)?))).collect() };
        let rec = StageRecord {
            config_hash: config_hash.into(),
            seed,
            inputs: hashes(inputs)?,
            outputs: hashes(outputs)?,
        };
        self.stages.insert(name.into(), rec);
        Ok(())
    }
}
