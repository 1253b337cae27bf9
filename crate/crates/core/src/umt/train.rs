use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::loss::{disc_step_loss, total_loss, LossWeights};
use super::model::{Lang, UmtArch, UmtModel};
use super::noise::NoiseConfig;
use crate::corpus::{TokenizerConfig, Vocab};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Tape};
use crate::util::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    WordByWord,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UmtTrainConfig {
    pub arch: UmtArch,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub noise: NoiseConfig,
    pub weights: LossWeights,
    pub init: InitMode,
    pub init_steps: usize,
    pub seed: u64,
}

impl Default for UmtTrainConfig {
    fn default() -> Self {
        UmtTrainConfig {
            arch: UmtArch::default(),
            steps: 300,
            batch_size: 16,
            lr: 0.00025,
            beta1: 0.5,
            beta2: 0.999,
            noise: NoiseConfig::default(),
            weights: LossWeights::default(),
            init: InitMode::WordByWord,
            init_steps: 1000,
            seed: 0,
        }
    }
}

impl UmtTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("UMT batch size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("UMT learning rate {} must be positive", self.lr)));
        }
        self.arch.transformer.validate()?;
        self.noise.validate()?;
        self.weights.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UmtLogRow {
    pub step: usize,
    pub dae: f64,
    pub bt: f64,
    pub adv: f64,
    pub disc: f64,
    pub total: f64,
}

pub fn history_csv(rows: &[UmtLogRow]) -> String {
    let mut out = String::from("step,dae,bt,adv,disc,total\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{}\n", r.step, r.dae, r.bt, r.adv, r.disc, r.total));
    }
    out
}

pub fn write_history(path: &Path, rows: &[UmtLogRow]) -> Result<()> {
    util::write_atomic(path, history_csv(rows).as_bytes())
}

fn sample_batch(data: &[Vec<u32>], n: usize, rng: &mut Rng) -> Vec<Vec<u32>> {
    (0..n).map(|_| data[rng.gen_range(0..data.len())].clone()).collect()
}

fn check_side(data: &[Vec<u32>], name: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyInput(format!("{name} cluster has no sentences")));
    }
    if data.iter().any(|x| x.is_empty()) {
        return Err(Error::EmptyInput(format!("{name} cluster contains an empty sentence")));
    }
    Ok(())
}

/// Identity-copy pretraining: each sentence is reproduced unchanged under
/// the opposite language tag. Returns the per-step loss.
pub fn init_word_by_word(
    model: &mut UmtModel,
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
    config: &UmtTrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if config.init_steps == 0 {
        return Ok(Vec::new());
    }
    check_side(src, "source")?;
    check_side(tgt, "target")?;
    let mut rng = util::rng(util::derive_seed(config.seed, "umt-word-by-word"));
    let mut adam = Adam::new(config.adam());
    let seq = &model.net.seq;
    let mut history = Vec::with_capacity(config.init_steps);
    for step in 0..config.init_steps {
        let a = sample_batch(src, config.batch_size, &mut rng);
        let b = sample_batch(tgt, config.batch_size, &mut rng);
        let mut t = Tape::new();
        let mut terms = Vec::with_capacity(2 * config.batch_size);
        for (batch, lang) in [(&a, Lang::Src), (&b, Lang::Tgt)] {
            for x in batch {
                let l = seq.teacher_forced_loss(
                    &mut t,
                    &model.store,
                    x,
                    Some(lang.index()),
                    x,
                    Some(lang.other().index()),
                )?;
                terms.push((l, 1.0 / config.batch_size as f64));
            }
        }
        let loss = t.weighted_sum(&terms)?;
        let v = t.value(loss).item() as f64;
        if !v.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "word-by-word loss".into(),
            });
        }
        history.push(v);
        let grads = t.backward(loss)?;
        adam.step(&mut model.store, &grads).map_err(|_| Error::Diverged {
            step,
            what: "word-by-word gradient".into(),
        })?;
    }
    Ok(history)
}

/// Evaluate each loss component on fixed batches without updating anything.
pub fn evaluate_losses(
    model: &UmtModel,
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
    config: &UmtTrainConfig,
    seed: u64,
) -> Result<UmtLogRow> {
    let mut rng = util::rng(seed);
    let mut t = Tape::new();
    let parts = total_loss(&mut t, &model.net, &model.store, src, tgt, &config.weights, &config.noise, &mut rng)?;
    let mut td = Tape::new();
    let disc = disc_step_loss(&mut td, &model.net, &model.store, src, tgt)?;
    Ok(UmtLogRow {
        step: 0,
        dae: t.value(parts.dae).item() as f64,
        bt: t.value(parts.bt).item() as f64,
        adv: t.value(parts.adv).item() as f64,
        disc: td.value(disc).item() as f64,
        total: t.value(parts.total).item() as f64,
    })
}

fn train_steps(
    model: &mut UmtModel,
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
    config: &UmtTrainConfig,
) -> Result<Vec<UmtLogRow>> {
    let mut rng = util::rng(util::derive_seed(config.seed, "umt-train"));
    let mut noise_rng = util::rng(util::derive_seed(config.seed ^ config.noise.seed, "umt-noise"));
    let mut adam_ed = Adam::new(config.adam());
    let mut adam_disc = Adam::new(config.adam());
    let disc_ids = model.net.disc.param_ids();
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let a = sample_batch(src, config.batch_size, &mut rng);
        let b = sample_batch(tgt, config.batch_size, &mut rng);

        let mut t = Tape::new();
        t.freeze(disc_ids);
        let parts = total_loss(
            &mut t,
            &model.net,
            &model.store,
            &a,
            &b,
            &config.weights,
            &config.noise,
            &mut noise_rng,
        )?;
        let total = t.value(parts.total).item() as f64;
        if !total.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "total loss".into(),
            });
        }
        let row = (
            t.value(parts.dae).item() as f64,
            t.value(parts.bt).item() as f64,
            t.value(parts.adv).item() as f64,
        );
        let grads = t.backward(parts.total)?;
        drop(t);
        adam_ed.step(&mut model.store, &grads).map_err(|_| Error::Diverged {
            step,
            what: "encoder-decoder gradient".into(),
        })?;

        let mut td = Tape::new();
        let disc = disc_step_loss(&mut td, &model.net, &model.store, &a, &b)?;
        let disc_v = td.value(disc).item() as f64;
        if !disc_v.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "discriminator loss".into(),
            });
        }
        let grads = td.backward(disc)?;
        adam_disc.step(&mut model.store, &grads).map_err(|_| Error::Diverged {
            step,
            what: "discriminator gradient".into(),
        })?;

        history.push(UmtLogRow {
            step,
            dae: row.0,
            bt: row.1,
            adv: row.2,
            disc: disc_v,
            total,
        });
    }
    Ok(history)
}

/// Output of [`train_umt`].
#[derive(Debug, Clone)]
pub struct UmtTraining {
    pub model: UmtModel,
    pub init_history: Vec<f64>,
    pub history: Vec<UmtLogRow>,
}

/// Optional identity-copy init, then alternating encoder-decoder and
/// discriminator updates for `steps` iterations.
pub fn train_umt(
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
    vocab: &Vocab,
    tokenizer: TokenizerConfig,
    config: &UmtTrainConfig,
) -> Result<UmtTraining> {
    config.validate()?;
    check_side(src, "source")?;
    check_side(tgt, "target")?;
    let mut model = UmtModel::new(config.arch, vocab.clone(), tokenizer, config.seed)?;
    let init_history = match config.init {
        InitMode::WordByWord => init_word_by_word(&mut model, src, tgt, config)?,
        InitMode::None => Vec::new(),
    };
    let history = train_steps(&mut model, src, tgt, config)?;
    Ok(UmtTraining {
        model,
        init_history,
        history,
    })
}

