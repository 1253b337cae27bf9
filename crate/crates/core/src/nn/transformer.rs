//! Pre-norm Transformer encoder-decoder built on the tape primitives.

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::util::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TransformerConfig {
    /// Miniature default: 2/2 blocks, 2 heads, width 64, feed-forward 256.
    pub fn desk() -> Self {
        TransformerConfig {
            d_model: 64,
            d_ff: 256,
            heads: 2,
            enc_layers: 2,
            dec_layers: 2,
        }
    }

    /// 6/6 blocks, 8 heads, width 512, feed-forward 2048.
    pub fn paper() -> Self {
        TransformerConfig {
            d_model: 512,
            d_ff: 2048,
            heads: 8,
            enc_layers: 6,
            dec_layers: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_ff == 0 || self.heads == 0 {
            return Err(Error::invalid("transformer widths and head count must be positive"));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Attention {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderBlock {
    norm1: Norm,
    attn: Attention,
    norm2: Norm,
    ffn: FeedForward,
}

#[derive(Debug, Clone, PartialEq)]
struct DecoderBlock {
    norm1: Norm,
    self_attn: Attention,
    norm2: Norm,
    cross_attn: Attention,
    norm3: Norm,
    ffn: FeedForward,
}

/// Parameter layout of an encoder-decoder. Values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub config: TransformerConfig,
    pub vocab_size: usize,
    pub num_langs: usize,
    tok_emb: ParamId,
    lang_emb: Option<ParamId>,
    enc: Vec<EncoderBlock>,
    dec: Vec<DecoderBlock>,
    enc_norm: Norm,
    dec_norm: Norm,
    out_w: ParamId,
    out_b: ParamId,
    params: Vec<ParamId>,
    encoder_params: Vec<ParamId>,
}

struct Builder<'a, S> {
    store: &'a mut ParamStore<S>,
    rng: &'a mut Rng,
    added: Vec<ParamId>,
}

impl<S: Scalar> Builder<'_, S> {
    fn track(&mut self, id: ParamId) -> ParamId {
        self.added.push(id);
        id
    }

    fn weight(&mut self, name: String, r: usize, c: usize) -> ParamId {
        let id = self.store.add_glorot(name, r, c, self.rng);
        self.track(id)
    }

    fn fill(&mut self, name: String, c: usize, v: f64) -> ParamId {
        let id = self.store.add_const(name, 1, c, v);
        self.track(id)
    }

    fn norm(&mut self, p: &str, d: usize) -> Norm {
        Norm {
            gain: self.fill(format!("{p}.gain"), d, 1.0),
            bias: self.fill(format!("{p}.bias"), d, 0.0),
        }
    }

    fn attention(&mut self, p: &str, d: usize) -> Attention {
        Attention {
            wq: self.weight(format!("{p}.wq"), d, d),
            wk: self.weight(format!("{p}.wk"), d, d),
            wv: self.weight(format!("{p}.wv"), d, d),
            wo: self.weight(format!("{p}.wo"), d, d),
            bo: self.fill(format!("{p}.bo"), d, 0.0),
        }
    }

    fn ffn(&mut self, p: &str, d: usize, ff: usize) -> FeedForward {
        FeedForward {
            w1: self.weight(format!("{p}.w1"), d, ff),
            b1: self.fill(format!("{p}.b1"), ff, 0.0),
            w2: self.weight(format!("{p}.w2"), ff, d),
            b2: self.fill(format!("{p}.b2"), d, 0.0),
        }
    }
}

pub fn positional_encoding<S: Scalar>(len: usize, d: usize) -> Tensor<S> {
    Tensor::from_fn(len, d, |pos, i| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let a = pos as f64 * rate;
        S::of(if i % 2 == 0 { a.sin() } else { a.cos() })
    })
}

pub fn causal_mask<S: Scalar>(len: usize) -> Tensor<S> {
    Tensor::from_fn(len, len, |r, c| if c > r { S::neg_infinity() } else { S::zero() })
}

impl Seq2Seq {
    /// Register freshly initialized parameters in `store`. Registration
    /// order is fixed, so a checkpoint can be restored by position.
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        config: TransformerConfig,
        vocab_size: usize,
        num_langs: usize,
        prefix: &str,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::invalid("vocabulary is empty"));
        }
        let d = config.d_model;
        let mut b = Builder {
            store,
            rng,
            added: Vec::new(),
        };
        let emb_std = 1.0 / (d as f64).sqrt();
        let tok_emb = b.store.add_normal(format!("{prefix}tok_emb"), vocab_size, d, emb_std, b.rng);
        b.track(tok_emb);
        let lang_emb = (num_langs > 0).then(|| {
            let id = b.store.add_normal(format!("{prefix}lang_emb"), num_langs, d, 0.5, b.rng);
            b.track(id)
        });
        let enc: Vec<EncoderBlock> = (0..config.enc_layers)
            .map(|i| {
                let p = format!("{prefix}enc.{i}");
                EncoderBlock {
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    attn: b.attention(&format!("{p}.attn"), d),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, config.d_ff),
                }
            })
            .collect();
        let enc_norm = b.norm(&format!("{prefix}enc.norm"), d);
        let encoder_params = b.added.clone();
        let dec = (0..config.dec_layers)
            .map(|i| {
                let p = format!("{prefix}dec.{i}");
                DecoderBlock {
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    self_attn: b.attention(&format!("{p}.self_attn"), d),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                    cross_attn: b.attention(&format!("{p}.cross_attn"), d),
                    norm3: b.norm(&format!("{p}.norm3"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, config.d_ff),
                }
            })
            .collect();
        let dec_norm = b.norm(&format!("{prefix}dec.norm"), d);
        let out_w = b.weight(format!("{prefix}out.w"), d, vocab_size);
        let out_b = b.fill(format!("{prefix}out.b"), vocab_size, 0.0);
        Ok(Seq2Seq {
            config,
            vocab_size,
            num_langs,
            tok_emb,
            lang_emb,
            enc,
            dec,
            enc_norm,
            dec_norm,
            out_w,
            out_b,
            params: b.added,
            encoder_params,
        })
    }

    /// All parameter ids owned by this model.
    pub fn param_ids(&self) -> &[ParamId] {
        &self.params
    }

    /// Token embeddings, language tags and encoder blocks.
    pub fn encoder_param_ids(&self) -> &[ParamId] {
        &self.encoder_params
    }

    pub fn lang_embedding_id(&self) -> Option<ParamId> {
        self.lang_emb
    }

    fn norm<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, n: &Norm, x: Var) -> Result<Var> {
        let g = t.param(s, n.gain);
        let b = t.param(s, n.bias);
        t.layer_norm(x, g, b)
    }

    fn attention<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        s: &ParamStore<S>,
        a: &Attention,
        xq: Var,
        xkv: Var,
        mask: Option<Var>,
    ) -> Result<Var> {
        let (wq, wk, wv) = (t.param(s, a.wq), t.param(s, a.wk), t.param(s, a.wv));
        let q = t.matmul(xq, wq)?;
        let k = t.matmul(xkv, wk)?;
        let v = t.matmul(xkv, wv)?;
        let h = self.config.heads;
        let dh = self.config.d_model / h;
        let mut outs = Vec::with_capacity(h);
        for i in 0..h {
            let (qh, kh, vh) = if h == 1 {
                (q, k, v)
            } else {
                (t.slice_cols(q, i * dh, dh)?, t.slice_cols(k, i * dh, dh)?, t.slice_cols(v, i * dh, dh)?)
            };
            outs.push(t.attention(qh, kh, vh, mask)?);
        }
        let o = if h == 1 { outs[0] } else { t.concat_cols(&outs)? };
        let wo = t.param(s, a.wo);
        let bo = t.param(s, a.bo);
        let proj = t.matmul(o, wo)?;
        t.add_row(proj, bo)
    }

    fn ffn<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, f: &FeedForward, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (t.param(s, f.w1), t.param(s, f.b1), t.param(s, f.w2), t.param(s, f.b2));
        let h = t.matmul(x, w1)?;
        let h = t.add_row(h, b1)?;
        let h = t.relu(h);
        let o = t.matmul(h, w2)?;
        t.add_row(o, b2)
    }

    fn embed<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, ids: &[u32], lang: Option<usize>) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot embed an empty sequence"));
        }
        let d = self.config.d_model;
        let table = t.param(s, self.tok_emb);
        let e = t.embedding(table, ids)?;
        let e = t.scale(e, (d as f64).sqrt());
        let pe = t.constant(positional_encoding(ids.len(), d));
        let mut x = t.add(e, pe)?;
        match (lang, self.lang_emb) {
            (Some(l), Some(id)) => {
                if l >= self.num_langs {
                    return Err(Error::invalid(format!("language tag {l} outside {} tags", self.num_langs)));
                }
                let tags = t.param(s, id);
                let row = t.slice_rows(tags, l, 1)?;
                x = t.add_row(x, row)?;
            }
            (Some(_), None) => return Err(Error::invalid("model has no language tags")),
            _ => {}
        }
        Ok(x)
    }

    /// Encoder latents, one row per input position.
    pub fn encode<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, ids: &[u32], lang: Option<usize>) -> Result<Var> {
        let mut x = self.embed(t, s, ids, lang)?;
        for b in &self.enc {
            let h = self.norm(t, s, &b.norm1, x)?;
            let h = self.attention(t, s, &b.attn, h, h, None)?;
            x = t.add(x, h)?;
            let h = self.norm(t, s, &b.norm2, x)?;
            let h = self.ffn(t, s, &b.ffn, h)?;
            x = t.add(x, h)?;
        }
        self.norm(t, s, &self.enc_norm, x)
    }

    fn decoder_hidden<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        s: &ParamStore<S>,
        memory: Var,
        dec_in: &[u32],
        lang: Option<usize>,
    ) -> Result<Var> {
        let mut x = self.embed(t, s, dec_in, lang)?;
        let mask = (dec_in.len() > 1).then(|| t.constant(causal_mask(dec_in.len())));
        for b in &self.dec {
            let h = self.norm(t, s, &b.norm1, x)?;
            let h = self.attention(t, s, &b.self_attn, h, h, mask)?;
            x = t.add(x, h)?;
            let h = self.norm(t, s, &b.norm2, x)?;
            let h = self.attention(t, s, &b.cross_attn, h, memory, None)?;
            x = t.add(x, h)?;
            let h = self.norm(t, s, &b.norm3, x)?;
            let h = self.ffn(t, s, &b.ffn, h)?;
            x = t.add(x, h)?;
        }
        self.norm(t, s, &self.dec_norm, x)
    }

    fn project<S: Scalar>(&self, t: &mut Tape<S>, s: &ParamStore<S>, h: Var) -> Result<Var> {
        let w = t.param(s, self.out_w);
        let b = t.param(s, self.out_b);
        let logits = t.matmul(h, w)?;
        t.add_row(logits, b)
    }

    /// Output logits for every decoder input position.
    pub fn decode<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        s: &ParamStore<S>,
        memory: Var,
        dec_in: &[u32],
        lang: Option<usize>,
    ) -> Result<Var> {
        let h = self.decoder_hidden(t, s, memory, dec_in, lang)?;
        self.project(t, s, h)
    }

    /// Log-probabilities of the next token after `prefix` (BOS is prepended).
    pub fn next_token_log_probs<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        s: &ParamStore<S>,
        memory: Var,
        prefix: &[u32],
        lang: Option<usize>,
    ) -> Result<Vec<f64>> {
        let mut dec_in = Vec::with_capacity(prefix.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(prefix);
        let h = self.decoder_hidden(t, s, memory, &dec_in, lang)?;
        let last = t.slice_rows(h, dec_in.len() - 1, 1)?;
        let logits = self.project(t, s, last)?;
        let lp = t.log_softmax(logits);
        Ok(t.value(lp).data().iter().map(|x| x.as_f64()).collect())
    }

    /// Teacher-forced token-level cross-entropy of producing `tgt` (then EOS)
    /// from `src`.
    #[allow(clippy::too_many_arguments)]
    pub fn teacher_forced_loss<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        s: &ParamStore<S>,
        src: &[u32],
        src_lang: Option<usize>,
        tgt: &[u32],
        tgt_lang: Option<usize>,
    ) -> Result<Var> {
        let memory = self.encode(t, s, src, src_lang)?;
        self.loss_from_memory(t, s, memory, tgt, tgt_lang)
    }

    pub fn loss_from_memory<S: Scalar>(
        &self,
        t: &mut Tape<S>,
        s: &ParamStore<S>,
        memory: Var,
        tgt: &[u32],
        tgt_lang: Option<usize>,
    ) -> Result<Var> {
        let mut dec_in = Vec::with_capacity(tgt.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(tgt);
        let mut targets = tgt.to_vec();
        targets.push(EOS);
        let logits = self.decode(t, s, memory, &dec_in, tgt_lang)?;
        t.cross_entropy(logits, &targets)
    }

    /// Greedy decoding capped at `cap` tokens. PAD and BOS are never
    /// emitted and the first token cannot be EOS. Ties go to the lowest id.
    pub fn greedy<S: Scalar>(
        &self,
        s: &ParamStore<S>,
        src: &[u32],
        src_lang: Option<usize>,
        tgt_lang: Option<usize>,
        cap: usize,
    ) -> Result<Vec<u32>> {
        let mut t = Tape::new();
        let memory = self.encode(&mut t, s, src, src_lang)?;
        let mark = t.mark();
        let mut out = Vec::new();
        while out.len() < cap {
            let lp = self.next_token_log_probs(&mut t, s, memory, &out, tgt_lang)?;
            t.rewind(mark);
            let next = best_token(&lp, out.is_empty());
            if next == EOS {
                break;
            }
            out.push(next);
        }
        Ok(out)
    }
}

/// Whether `token` may be emitted at this step.
pub fn allowed_token(token: u32, first_step: bool) -> bool {
    !(token == PAD || token == BOS || (first_step && token == EOS))
}

fn best_token(lp: &[f64], first_step: bool) -> u32 {
    let mut best = (EOS, f64::NEG_INFINITY);
    let mut found = false;
    for (i, &v) in lp.iter().enumerate() {
        let tok = i as u32;
        if !allowed_token(tok, first_step) {
            continue;
        }
        if !found || v > best.1 {
            best = (tok, v);
            found = true;
        }
    }
    best.0
}

/// Default decoding cap for an input of `len` tokens.
pub fn length_cap(len: usize) -> usize {
    2 * len + 5
}
