use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::Rng;

/// Corruption process: independent word drops, then a local shuffle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub drop_prob: f64,
    pub swap_window: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            drop_prob: 0.1,
            swap_window: 3,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            drop_prob: 0.0,
            swap_window: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(Error::invalid(format!("drop probability {} outside [0, 1)", self.drop_prob)));
        }
        Ok(())
    }
}

/// Drop each token with probability `drop_prob` (keeping one uniformly
/// chosen token if all would go), then sort survivors by `i + U(0, k + 1)`
/// so no token moves more than `k` places.
pub fn noise_apply<T: Clone>(tokens: &[T], config: &NoiseConfig, rng: &mut Rng) -> Vec<T> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let mut kept: Vec<T> = if config.drop_prob > 0.0 {
        tokens
            .iter()
            .filter(|_| rng.gen::<f64>() >= config.drop_prob)
            .cloned()
            .collect()
    } else {
        tokens.to_vec()
    };
    if kept.is_empty() {
        kept.push(tokens[rng.gen_range(0..tokens.len())].clone());
    }
    if config.swap_window == 0 || kept.len() < 2 {
        return kept;
    }
    let span = (config.swap_window + 1) as f64;
    let mut keyed: Vec<(f64, T)> = kept
        .into_iter()
        .enumerate()
        .map(|(i, t)| (i as f64 + rng.gen::<f64>() * span, t))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, t)| t).collect()
}
