use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Digests of one stage's inputs and outputs, keyed by path relative to
/// the output directory when possible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub versions: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn new(config: serde_json::Value) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("paraumt".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert(
            "checkpoint-format".into(),
            crate::nn::checkpoint::CHECKPOINT_VERSION.to_string(),
        );
        Manifest {
            versions,
            config,
            stages: BTreeMap::new(),
        }
    }

    /// Existing manifest in `out`, or a fresh one. The config snapshot is
    /// always replaced with `config`.
    pub fn open(out: &Path, config: serde_json::Value) -> Result<Self> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::new(config));
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: Manifest = serde_json::from_slice(&bytes)?;
        m.config = config;
        Ok(m)
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        util::write_atomic(&out.join(MANIFEST_FILE), &bytes)
    }

    /// Every output digest across stages.
    pub fn artifacts(&self) -> BTreeMap<String, String> {
        self.stages
            .values()
            .flat_map(|s| s.outputs.iter().map(|(k, v)| (k.clone(), v.clone())))
            .collect()
    }
}

pub fn digest_map(out: &Path, paths: &[std::path::PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for p in paths {
        let key = p
            .strip_prefix(out)
            .map(|r| r.to_string_lossy().into_owned())
            .unwrap_or_else(|_| p.to_string_lossy().into_owned());
        map.insert(key, util::file_digest(p)?);
    }
    Ok(map)
}
