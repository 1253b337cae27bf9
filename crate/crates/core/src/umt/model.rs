use serde::{Deserialize, Serialize};

use crate::corpus::{TokenizerConfig, Vocab};
use crate::error::{Error, Result};
use crate::nn::transformer::length_cap;
use crate::nn::{Checkpoint, ParamId, ParamStore, Scalar, Seq2Seq, Tape, TransformerConfig, Var};
use crate::util::{self, Rng};

/// One side of a cluster pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    Src,
    Tgt,
}

impl Lang {
    pub fn index(self) -> usize {
        match self {
            Lang::Src => 0,
            Lang::Tgt => 1,
        }
    }

    pub fn other(self) -> Lang {
        match self {
            Lang::Src => Lang::Tgt,
            Lang::Tgt => Lang::Src,
        }
    }
}

/// Language classifier over mean-pooled encoder latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Discriminator {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, d_model: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::invalid("discriminator hidden width must be positive"));
        }
        Ok(Discriminator {
            w1: store.add_glorot("disc.w1", d_model, hidden, rng),
            b1: store.add_const("disc.b1", 1, hidden, 0.0),
            w2: store.add_glorot("disc.w2", hidden, 2, rng),
            b2: store.add_const("disc.b2", 1, 2, 0.0),
        })
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// Two-way logits, one row per row of `pooled`. With `frozen` the
    /// weights enter the tape as constants.
    pub fn logits<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, pooled: Var, frozen: bool) -> Result<Var> {
        let mut load = |id: ParamId| {
            if frozen {
                t.constant(s.get(id).clone())
            } else {
                t.param(s, id)
            }
        };
        let (w1, b1, w2, b2) = (load(self.w1), load(self.b1), load(self.w2), load(self.b2));
        let h = t.matmul(pooled, w1)?;
        let h = t.add_row(h, b1)?;
        let h = t.relu(h);
        let o = t.matmul(h, w2)?;
        t.add_row(o, b2)
    }
}

/// Architecture of a UMT model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UmtArch {
    pub transformer: TransformerConfig,
    pub disc_hidden: usize,
}

impl Default for UmtArch {
    fn default() -> Self {
        UmtArch {
            transformer: TransformerConfig::desk(),
            disc_hidden: 64,
        }
    }
}

/// Parameter layout: shared encoder-decoder with two language tags plus
/// the discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct UmtNet {
    pub seq: Seq2Seq,
    pub disc: Discriminator,
}

impl UmtNet {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, arch: &UmtArch, vocab_size: usize, rng: &mut Rng) -> Result<Self> {
        let seq = Seq2Seq::init(store, arch.transformer, vocab_size, 2, "", rng)?;
        let disc = Discriminator::init(store, arch.transformer.d_model, arch.disc_hidden, rng)?;
        Ok(UmtNet { seq, disc })
    }

    /// Mean-pooled encoder latents of each sentence, stacked as rows.
    pub fn pooled_latents<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        s: &ParamStore<S>,
        batch: &[Vec<u32>],
        lang: Lang,
    ) -> Result<Var> {
        let mut rows = Vec::with_capacity(batch.len());
        for x in batch {
            let h = self.seq.encode(t, s, x, Some(lang.index()))?;
            rows.push(t.mean_rows(h));
        }
        t.concat_rows(&rows)
    }

    /// Greedy translation into `to`, capped at twice the input length plus five.
    pub fn translate<S: Scalar>(&self, s: &ParamStore<S>, tokens: &[u32], from: Lang) -> Result<Vec<u32>> {
        self.seq
            .greedy(s, tokens, Some(from.index()), Some(from.other().index()), length_cap(tokens.len()))
    }
}

/// A trained (or initialized) UMT model with its vocabulary.
#[derive(Debug, Clone)]
pub struct UmtModel {
    pub net: UmtNet,
    pub store: ParamStore<f32>,
    pub arch: UmtArch,
    pub vocab: Vocab,
    pub tokenizer: TokenizerConfig,
    pub seed: u64,
}

pub const UMT_KIND: &str = "umt";

impl UmtModel {
    pub fn new(arch: UmtArch, vocab: Vocab, tokenizer: TokenizerConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = util::rng(util::derive_seed(seed, "umt-init"));
        let net = UmtNet::init(&mut store, &arch, vocab.len(), &mut rng)?;
        Ok(UmtModel {
            net,
            store,
            arch,
            vocab,
            tokenizer,
            seed,
        })
    }

    pub fn translate(&self, tokens: &[u32], from: Lang) -> Result<Vec<u32>> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("cannot translate an empty sentence".into()));
        }
        self.net.translate(&self.store, tokens, from)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::from_store(
            UMT_KIND,
            serde_json::to_value(self.arch)?,
            &self.vocab,
            self.tokenizer,
            self.seed,
            &self.store,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(UMT_KIND)?;
        let arch: UmtArch = serde_json::from_value(ck.config.clone())?;
        let mut model = UmtModel::new(arch, ck.vocab.clone(), ck.tokenizer, ck.rng_seed)?;
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }
}
