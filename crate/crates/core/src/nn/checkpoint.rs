use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::params::ParamStore;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::corpus::{TokenizerConfig, Vocab};
use crate::error::{Error, Result};
use crate::util;

pub const CHECKPOINT_FORMAT: &str = "paraumt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Parameter blob with shape manifest, vocabulary and RNG seed, shared by
/// UMT and surrogate models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub config: Value,
    pub vocab: Vocab,
    pub tokenizer: TokenizerConfig,
    pub rng_seed: u64,
    pub meta: Value,
    pub params: Vec<SavedParam>,
}

impl Checkpoint {
    pub fn from_store<S: Scalar>(
        kind: &str,
        config: Value,
        vocab: &Vocab,
        tokenizer: TokenizerConfig,
        rng_seed: u64,
        store: &ParamStore<S>,
    ) -> Self {
        let params = store
            .iter()
            .map(|p| SavedParam {
                name: p.name.clone(),
                shape: p.value.shape(),
                values: p.value.data().iter().map(|x| x.as_f64()).collect(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            config,
            vocab: vocab.clone(),
            tokenizer,
            rng_seed,
            meta: Value::Null,
            params,
        }
    }

    /// Copy saved values into a store laid out by the same model
    /// constructor. Names and shapes must agree position by position.
    pub fn restore_into<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} parameters, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, saved) in ids.into_iter().zip(&self.params) {
            if store.name(id) != saved.name || store.get(id).shape() != saved.shape {
                return Err(Error::invalid(format!(
                    "checkpoint parameter `{}` {:?} does not match model parameter `{}` {:?}",
                    saved.name,
                    saved.shape,
                    store.name(id),
                    store.get(id).shape()
                )));
            }
            let values = saved.values.iter().map(|&v| S::of(v)).collect();
            *store.get_mut(id) = Tensor::new(saved.shape[0], saved.shape[1], values)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!("{} is not a checkpoint", path.display())));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::invalid(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }
}
