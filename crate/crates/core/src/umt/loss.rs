use serde::{Deserialize, Serialize};

use super::model::{Lang, UmtNet};
use super::noise::{noise_apply, NoiseConfig};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Scalar, Tape, Var};
use crate::util::Rng;

/// Coefficients of the denoising, back-translation and adversarial terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub dae: f64,
    pub bt: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            dae: 1.0,
            bt: 1.0,
            adv: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dae", self.dae), ("bt", self.bt), ("adv", self.adv)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("loss weight {name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

fn batch_mean<S: Scalar>(t: &mut Tape<S>, terms: Vec<Var>) -> Result<Var> {
    let w = 1.0 / terms.len() as f64;
    let weighted: Vec<(Var, f64)> = terms.into_iter().map(|v| (v, w)).collect();
    t.weighted_sum(&weighted)
}

fn nonempty(batch: &[Vec<u32>], what: &str) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyInput(format!("{what}: empty batch")));
    }
    if batch.iter().any(|x| x.is_empty()) {
        return Err(Error::EmptyInput(format!("{what}: empty sentence in batch")));
    }
    Ok(())
}

/// Mean cross-entropy of reconstructing each `x` from `e(N(x), lang)`.
pub fn dae_loss<S: Scalar>(
    t: &mut Tape<S>,
    net: &UmtNet,
    s: &ParamStore<S>,
    batch: &[Vec<u32>],
    lang: Lang,
    noise: &NoiseConfig,
    rng: &mut Rng,
) -> Result<Var> {
    nonempty(batch, "dae_loss")?;
    let l = Some(lang.index());
    let mut terms = Vec::with_capacity(batch.len());
    for x in batch {
        let nx = noise_apply(x, noise, rng);
        terms.push(net.seq.teacher_forced_loss(t, s, &nx, l, x, l)?);
    }
    batch_mean(t, terms)
}

/// Back-translation with a caller-supplied translator for `x -> y`.
#[allow(clippy::too_many_arguments)]
pub fn bt_loss_with<S: Scalar, F>(
    t: &mut Tape<S>,
    net: &UmtNet,
    s: &ParamStore<S>,
    batch: &[Vec<u32>],
    from: Lang,
    noise: &NoiseConfig,
    rng: &mut Rng,
    mut translate: F,
) -> Result<Var>
where
    F: FnMut(&[u32]) -> Result<Vec<u32>>,
{
    nonempty(batch, "bt_loss")?;
    let to = from.other();
    let mut terms = Vec::with_capacity(batch.len());
    for x in batch {
        let mut y = translate(x)?;
        if y.is_empty() {
            y = x.clone();
        }
        let ny = noise_apply(&y, noise, rng);
        terms.push(net.seq.teacher_forced_loss(t, s, &ny, Some(to.index()), x, Some(from.index()))?);
    }
    batch_mean(t, terms)
}

/// Mean cross-entropy of reconstructing `x` from `N(M(x))`, where the
/// greedy translation `M(x)` carries no gradient.
pub fn bt_loss<S: Scalar>(
    t: &mut Tape<S>,
    net: &UmtNet,
    s: &ParamStore<S>,
    batch: &[Vec<u32>],
    from: Lang,
    noise: &NoiseConfig,
    rng: &mut Rng,
) -> Result<Var> {
    bt_loss_with(t, net, s, batch, from, noise, rng, |x| net.translate(s, x, from))
}

/// Discriminator loss over stacked pooled latents with labels 0 (src) or 1 (tgt).
pub fn disc_loss<S: Scalar>(
    t: &mut Tape<S>,
    net: &UmtNet,
    s: &ParamStore<S>,
    pooled: Var,
    labels: &[usize],
) -> Result<Var> {
    if labels.len() != t.shape(pooled)[0] {
        return Err(Error::shape(
            "disc_loss",
            format!("{} labels for {} latents", labels.len(), t.shape(pooled)[0]),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("language label {bad} is neither src (0) nor tgt (1)")));
    }
    let logits = net.disc.logits(t, s, pooled, false)?;
    let targets: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    t.cross_entropy(logits, &targets)
}

/// Loss for one discriminator update: latents of both batches, with the
/// encoder held fixed.
pub fn disc_step_loss<S: Scalar>(
    t: &mut Tape<S>,
    net: &UmtNet,
    s: &ParamStore<S>,
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
) -> Result<Var> {
    nonempty(src, "disc_loss")?;
    nonempty(tgt, "disc_loss")?;
    t.freeze(net.seq.param_ids().iter().copied());
    let a = net.pooled_latents(t, s, src, Lang::Src)?;
    let b = net.pooled_latents(t, s, tgt, Lang::Tgt)?;
    let pooled = t.concat_rows(&[a, b])?;
    let mut labels = vec![0; src.len()];
    labels.extend(std::iter::repeat(1).take(tgt.len()));
    disc_loss(t, net, s, pooled, &labels)
}

/// Mean of `-log p(other | e(x, from))` under a frozen discriminator.
pub fn adv_loss<S: Scalar>(
    t: &mut Tape<S>,
    net: &UmtNet,
    s: &ParamStore<S>,
    batch: &[Vec<u32>],
    from: Lang,
) -> Result<Var> {
    nonempty(batch, "adv_loss")?;
    let pooled = net.pooled_latents(t, s, batch, from)?;
    let logits = net.disc.logits(t, s, pooled, true)?;
    let targets = vec![from.other().index() as u32; batch.len()];
    t.cross_entropy(logits, &targets)
}

/// The three two-direction components and their weighted total.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub dae: Var,
    pub bt: Var,
    pub adv: Var,
    pub total: Var,
}

/// Weighted sum of both directions of each objective.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<S: Scalar>(
    t: &mut Tape<S>,
    net: &UmtNet,
    s: &ParamStore<S>,
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
    weights: &LossWeights,
    noise: &NoiseConfig,
    rng: &mut Rng,
) -> Result<LossParts> {
    weights.validate()?;
    let d1 = dae_loss(t, net, s, src, Lang::Src, noise, rng)?;
    let d2 = dae_loss(t, net, s, tgt, Lang::Tgt, noise, rng)?;
    let b1 = bt_loss(t, net, s, src, Lang::Src, noise, rng)?;
    let b2 = bt_loss(t, net, s, tgt, Lang::Tgt, noise, rng)?;
    let a1 = adv_loss(t, net, s, src, Lang::Src)?;
    let a2 = adv_loss(t, net, s, tgt, Lang::Tgt)?;
    let dae = t.add(d1, d2)?;
    let bt = t.add(b1, b2)?;
    let adv = t.add(a1, a2)?;
    let total = t.weighted_sum(&[(dae, weights.dae), (bt, weights.bt), (adv, weights.adv)])?;
    Ok(LossParts { dae, bt, adv, total })
}
