#![allow(dead_code)]

use paraumt_core::corpus::{build_vocab, encode, tokenize, TokenizerConfig, Vocab};
use paraumt_core::fixtures::{gen_dialect_corpus, DialectCorpus, DialectSpec};
use paraumt_core::nn::TransformerConfig;
use paraumt_core::umt::UmtArch;

/// Smallest architecture used for finite-difference checks.
pub fn grad_arch() -> UmtArch {
    UmtArch {
        transformer: TransformerConfig {
            d_model: 4,
            d_ff: 8,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
        },
        disc_hidden: 4,
    }
}

/// Miniature architecture for training runs.
pub fn smoke_arch() -> UmtArch {
    UmtArch {
        transformer: TransformerConfig {
            d_model: 32,
            d_ff: 64,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
        },
        disc_hidden: 32,
    }
}

pub struct Dialects {
    pub corpus: DialectCorpus,
    pub vocab: Vocab,
    pub tokenizer: TokenizerConfig,
    pub encoded: Vec<Vec<Vec<u32>>>,
}

pub fn dialects(sentences: usize, seed: u64) -> Dialects {
    let spec = DialectSpec {
        sentences,
        seed,
        ..DialectSpec::default()
    };
    let corpus = gen_dialect_corpus(&spec).unwrap();
    let tokenizer = TokenizerConfig::default();
    let tokens: Vec<Vec<Vec<String>>> = corpus
        .dialects
        .iter()
        .map(|d| d.iter().map(|s| tokenize(s, &tokenizer)).collect())
        .collect();
    let vocab = build_vocab(tokens.iter().flatten(), 1, 10_000).unwrap();
    let encoded = tokens
        .iter()
        .map(|d| d.iter().map(|t| encode(t, &vocab)).collect())
        .collect();
    Dialects {
        corpus,
        vocab,
        tokenizer,
        encoded,
    }
}

/// The planted three-topic corpus encoded for LDA, with its topic labels.
pub fn planted_docs(seed: u64) -> (Vec<Vec<u32>>, usize, Vec<usize>) {
    let spec = paraumt_core::fixtures::PlantedCorpusSpec {
        seed,
        ..Default::default()
    };
    let c = paraumt_core::fixtures::gen_topic_corpus(&spec).unwrap();
    let tk = TokenizerConfig::default();
    let toks: Vec<Vec<String>> = c.sentences.iter().map(|s| tokenize(s, &tk)).collect();
    let vocab = build_vocab(&toks, 1, 10_000).unwrap();
    let docs = toks.iter().map(|t| encode(t, &vocab)).collect();
    (docs, vocab.len(), c.labels)
}

/// Independent KL(p||q) + KL(q||p) written out term by term.
pub fn sym_kl_oracle(p: &[f64], q: &[f64]) -> f64 {
    let mut a = 0.0;
    let mut b = 0.0;
    for i in 0..p.len() {
        a += p[i] * (p[i].ln() - q[i].ln());
        b += q[i] * (q[i].ln() - p[i].ln());
    }
    a + b
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn pseudo_pair(id: usize, src: &str, tgt: &str) -> paraumt_core::pseudo::ParaphrasePair {
    paraumt_core::pseudo::ParaphrasePair {
        id,
        src: words(src),
        tgt: words(tgt),
        cluster: 0,
        model: 0,
    }
}

/// Ten pairs counted by hand: ids 0-2 identical, 3-4 over twice the source
/// length, 5-9 clean (one of them exactly at the 2x boundary).
pub fn ten_pair_fixture() -> Vec<paraumt_core::pseudo::ParaphrasePair> {
    [
        ("a b c", "a b c"),
        ("x", "x"),
        ("one two three four", "one two three four"),
        ("a b", "a b c d e"),
        ("p q r s", "1 2 3 4 5 6 7 8 9"),
        ("a b", "b a"),
        ("the cat sat", "a cat sat"),
        ("p q r s", "1 2 3 4 5 6 7 8"),
        ("long source sentence here", "short"),
        ("m n", "n o p"),
    ]
    .iter()
    .enumerate()
    .map(|(i, (s, t))| pseudo_pair(i, s, t))
    .collect()
}

/// Least squares through the normal equations with Gauss-Jordan elimination.
pub fn normal_equations_fit(samples: &[(f64, f64)], degree: usize) -> Vec<f64> {
    let p = degree + 1;
    let mut m = vec![vec![0.0; p + 1]; p];
    for &(d, y) in samples {
        for i in 0..p {
            for j in 0..p {
                m[i][j] += d.powi((i + j) as i32);
            }
            m[i][p] += d.powi(i as i32) * y;
        }
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        m.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=p {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    (0..p).map(|i| m[i][p] / m[i][i]).collect()
}
