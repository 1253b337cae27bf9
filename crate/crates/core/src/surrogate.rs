//! The single distilled paraphraser: training, finetuning and beam search.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{decode, detokenize, encode, tokenize, TokenizerConfig, Vocab, EOS};
use crate::error::{Error, Result};
use crate::nn::transformer::{allowed_token, length_cap};
use crate::nn::{Adam, AdamConfig, Checkpoint, ParamStore, Seq2Seq, Tape, TransformerConfig};
use crate::util;

pub const SURROGATE_KIND: &str = "surrogate";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateTrainConfig {
    pub arch: TransformerConfig,
    pub steps: usize,
    /// When set, overrides `steps` with this many full passes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        SurrogateTrainConfig {
            arch: TransformerConfig::desk(),
            steps: 1000,
            epochs: None,
            batch_size: 256,
            optimizer: AdamConfig {
                lr: 1e-4,
                beta1: 0.9,
                beta2: 0.999,
                warmup_steps: 4000,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

impl SurrogateTrainConfig {
    /// Defaults for supervised finetuning (second-moment decay 0.98).
    pub fn finetune() -> Self {
        let mut c = SurrogateTrainConfig::default();
        c.optimizer.beta2 = 0.98;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("surrogate batch size must be at least 1"));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::invalid("surrogate learning rate must be positive"));
        }
        self.arch.validate()
    }
}

/// Source/target id pairs together with the vocabulary that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPairs {
    pub vocab: Vocab,
    pub pairs: Vec<(Vec<u32>, Vec<u32>)>,
}

impl EncodedPairs {
    pub fn encode<S: AsRef<str>>(raw: &[(Vec<S>, Vec<S>)], vocab: &Vocab) -> Self {
        EncodedPairs {
            vocab: vocab.clone(),
            pairs: raw
                .iter()
                .map(|(s, t)| (encode(s, vocab), encode(t, vocab)))
                .filter(|(s, t)| !s.is_empty() && !t.is_empty())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Deserialize)]
struct LabeledLine {
    source: String,
    reference: String,
}

/// Read labeled pairs from `source \t reference` TSV, or from JSONL objects
/// with `source` and `reference` fields when the file ends in `.jsonl`.
/// Rows that tokenize to nothing on either side are skipped.
pub fn load_labeled_pairs(path: &Path, tokenizer: &TokenizerConfig) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (src, tgt) = if jsonl {
            let l: LabeledLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            (l.source, l.reference)
        } else {
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `source<TAB>reference`".into()))?;
            (a.to_string(), b.to_string())
        };
        let (src, tgt) = (tokenize(&src, tokenizer), tokenize(&tgt, tokenizer));
        if !src.is_empty() && !tgt.is_empty() {
            out.push((src, tgt));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub seq: Seq2Seq,
    pub store: ParamStore<f32>,
    pub arch: TransformerConfig,
    pub vocab: Vocab,
    pub tokenizer: TokenizerConfig,
    pub seed: u64,
}

impl SurrogateModel {
    pub fn new(arch: TransformerConfig, vocab: Vocab, tokenizer: TokenizerConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = util::rng(util::derive_seed(seed, "surrogate-init"));
        let seq = Seq2Seq::init(&mut store, arch, vocab.len(), 0, "", &mut rng)?;
        Ok(SurrogateModel {
            seq,
            store,
            arch,
            vocab,
            tokenizer,
            seed,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::from_store(
            SURROGATE_KIND,
            serde_json::to_value(self.arch)?,
            &self.vocab,
            self.tokenizer,
            self.seed,
            &self.store,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(SURROGATE_KIND)?;
        let arch: TransformerConfig = serde_json::from_value(ck.config.clone())?;
        let mut m = SurrogateModel::new(arch, ck.vocab.clone(), ck.tokenizer, ck.rng_seed)?;
        ck.restore_into(&mut m.store)?;
        Ok(m)
    }

    /// Mean teacher-forced cross-entropy over `pairs`.
    pub fn mean_loss(&self, pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("no pairs to score".into()));
        }
        let mut total = 0.0;
        let mut t = Tape::new();
        t.freeze(self.seq.param_ids().iter().copied());
        for (s, y) in pairs {
            let mark = t.mark();
            let l = self.seq.teacher_forced_loss(&mut t, &self.store, s, None, y, None)?;
            total += t.value(l).item() as f64;
            t.rewind(mark);
        }
        Ok(total / pairs.len() as f64)
    }

    pub fn greedy(&self, src: &[u32]) -> Result<Vec<u32>> {
        self.seq.greedy(&self.store, src, None, None, length_cap(src.len()))
    }
}

/// Mean training loss over one pass through the pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct SurrogateTraining {
    pub model: SurrogateModel,
    pub history: Vec<f64>,
    pub epochs: Vec<EpochLog>,
}

fn check_pairs(model: &SurrogateModel, data: &EncodedPairs) -> Result<()> {
    if data.vocab.tokens() != model.vocab.tokens() {
        return Err(Error::VocabMismatch(format!(
            "pairs use a vocabulary of {} entries, model has {}",
            data.vocab.len(),
            model.vocab.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("no training pairs".into()));
    }
    let v = model.vocab.len() as u32;
    if data.pairs.iter().any(|(s, t)| s.is_empty() || t.is_empty() || s.iter().chain(t).any(|&x| x >= v)) {
        return Err(Error::VocabMismatch("pair ids outside the model vocabulary".into()));
    }
    Ok(())
}

/// Shuffled passes of teacher-forced updates, `steps` in total.
fn fit(mut model: SurrogateModel, data: &EncodedPairs, config: &SurrogateTrainConfig, tag: &str) -> Result<SurrogateTraining> {
    config.validate()?;
    check_pairs(&model, data)?;
    let mut rng = util::rng(util::derive_seed(config.seed, tag));
    let mut adam = Adam::new(config.optimizer);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let steps = match config.epochs {
        Some(e) => e * data.len().div_ceil(config.batch_size),
        None => config.steps,
    };
    let mut history = Vec::with_capacity(steps);
    let mut epochs = Vec::new();
    let (mut epoch_sum, mut epoch_steps) = (0.0, 0usize);
    for step in 0..steps {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;

        let mut t = Tape::new();
        let w = 1.0 / batch.len() as f64;
        let mut terms = Vec::with_capacity(batch.len());
        for &i in batch {
            let (s, y) = &data.pairs[i];
            terms.push((model.seq.teacher_forced_loss(&mut t, &model.store, s, None, y, None)?, w));
        }
        let loss = t.weighted_sum(&terms)?;
        let v = t.value(loss).item() as f64;
        if !v.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "surrogate loss".into(),
            });
        }
        let grads = t.backward(loss)?;
        adam.step(&mut model.store, &grads).map_err(|_| Error::Diverged {
            step,
            what: "surrogate gradient".into(),
        })?;
        history.push(v);
        epoch_sum += v;
        epoch_steps += 1;
        if cursor >= order.len() {
            epochs.push(EpochLog {
                epoch: epochs.len(),
                steps: epoch_steps,
                mean_loss: epoch_sum / epoch_steps as f64,
                complete: true,
            });
            epoch_sum = 0.0;
            epoch_steps = 0;
        }
    }
    if epoch_steps > 0 {
        epochs.push(EpochLog {
            epoch: epochs.len(),
            steps: epoch_steps,
            mean_loss: epoch_sum / epoch_steps as f64,
            complete: false,
        });
    }
    Ok(SurrogateTraining { model, history, epochs })
}

/// Train a fresh model on (source, pseudo-target) pairs.
pub fn train_surrogate(
    data: &EncodedPairs,
    tokenizer: TokenizerConfig,
    config: &SurrogateTrainConfig,
) -> Result<SurrogateTraining> {
    config.validate()?;
    let model = SurrogateModel::new(config.arch, data.vocab.clone(), tokenizer, config.seed)?;
    fit(model, data, config, "surrogate-train")
}

/// Continue training `model` on labeled pairs. The architecture in
/// `config` is ignored; the model's own is kept.
pub fn finetune(model: &SurrogateModel, data: &EncodedPairs, config: &SurrogateTrainConfig) -> Result<SurrogateTraining> {
    let config = SurrogateTrainConfig {
        arch: model.arch,
        ..*config
    };
    fit(model.clone(), data, &config, "surrogate-finetune")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub width: usize,
    /// Defaults to twice the input length plus five.
    pub max_len: Option<usize>,
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            width: 4,
            max_len: None,
            length_penalty: 0.6,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::invalid("beam width must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// `log_prob / len^alpha`, with the end token counted in `len`.
    pub score: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    pub best: Hypothesis,
    pub completed: Vec<Hypothesis>,
}

fn normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(alpha)
}

/// Length-capped beam search. Each step keeps the top `width - done`
/// expansions; those ending in EOS are set aside as completed. Live
/// hypotheses that reach the cap count as completed too.
pub fn beam_search(model: &SurrogateModel, src: &[u32], beam: &BeamConfig) -> Result<BeamOutput> {
    beam.validate()?;
    if src.is_empty() {
        return Err(Error::EmptyInput("cannot decode an empty input".into()));
    }
    let cap = beam.max_len.unwrap_or_else(|| length_cap(src.len()));
    let alpha = beam.length_penalty;
    let mut t = Tape::new();
    t.freeze(model.seq.param_ids().iter().copied());
    let memory = model.seq.encode(&mut t, &model.store, src, None)?;
    let mark = t.mark();

    let mut live: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut completed: Vec<Hypothesis> = Vec::new();
    let mut step = 0;
    while !live.is_empty() && step < cap {
        // (total log-prob, hypothesis, step log-prob, token)
        let mut cands: Vec<(f64, usize, f64, u32)> = Vec::new();
        for (h, (prefix, lp)) in live.iter().enumerate() {
            let next = model.seq.next_token_log_probs(&mut t, &model.store, memory, prefix, None)?;
            t.rewind(mark);
            for (tok, &p) in next.iter().enumerate() {
                if allowed_token(tok as u32, step == 0) {
                    cands.push((lp + p, h, p, tok as u32));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(b.2.total_cmp(&a.2))
                .then(a.3.cmp(&b.3))
        });
        let keep = beam.width.saturating_sub(completed.len());
        let mut next_live = Vec::new();
        for &(lp, h, _, tok) in cands.iter().take(keep) {
            let mut tokens = live[h].0.clone();
            if tok == EOS {
                let score = normalized(lp, tokens.len() + 1, alpha);
                completed.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    score,
                    finished: true,
                });
            } else {
                tokens.push(tok);
                next_live.push((tokens, lp));
            }
        }
        live = next_live;
        step += 1;
    }
    for (tokens, lp) in live {
        let score = normalized(lp, tokens.len(), alpha);
        completed.push(Hypothesis {
            tokens,
            log_prob: lp,
            score,
            finished: false,
        });
    }
    let best = completed
        .iter()
        .fold(None::<&Hypothesis>, |best, h| match best {
            Some(b) if b.score >= h.score => Some(b),
            _ => Some(h),
        })
        .cloned()
        .ok_or_else(|| Error::invalid("beam search produced no hypothesis"))?;
    Ok(BeamOutput { best, completed })
}

pub fn beam_decode(model: &SurrogateModel, src: &[u32], beam: &BeamConfig) -> Result<Vec<u32>> {
    Ok(beam_search(model, src, beam)?.best.tokens)
}

/// Tokenize, beam-decode and detokenize one sentence.
pub fn paraphrase(model: &SurrogateModel, text: &str, beam: &BeamConfig) -> Result<String> {
    let tokens = tokenize(text, &model.tokenizer);
    if tokens.is_empty() {
        return Err(Error::EmptyInput("cannot paraphrase an empty sentence".into()));
    }
    let ids = encode(&tokens, &model.vocab);
    let out = beam_decode(model, &ids, beam)?;
    Ok(detokenize(&decode(&out, &model.vocab)))
}
