//! Seeded synthetic corpora, embeddings and scoring oracles for tests.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clustering::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::{EvalTriple, MetricConfig, RougeMode, Smoothing};
use crate::util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedCorpusSpec {
    pub topics: usize,
    pub words_per_topic: usize,
    pub sentences_per_topic: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// When false each token is drawn from a shared pool with probability `shared_prob`.
    pub disjoint: bool,
    pub shared_words: usize,
    pub shared_prob: f64,
    pub seed: u64,
}

impl Default for PlantedCorpusSpec {
    fn default() -> Self {
        PlantedCorpusSpec {
            topics: 3,
            words_per_topic: 20,
            sentences_per_topic: 200,
            min_len: 5,
            max_len: 10,
            disjoint: true,
            shared_words: 10,
            shared_prob: 0.3,
            seed: 0,
        }
    }
}

fn check_lengths(min_len: usize, max_len: usize) -> Result<()> {
    if min_len == 0 || min_len > max_len {
        return Err(Error::invalid(format!("sentence length range [{min_len}, {max_len}] is empty")));
    }
    Ok(())
}

/// Sentences with the topic that generated each one.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub sentences: Vec<String>,
    pub labels: Vec<usize>,
}

impl LabeledCorpus {
    pub fn write(&self, corpus: &Path, labels: &Path) -> Result<()> {
        write_lines(corpus, &self.sentences)?;
        let rows: Vec<String> = self.labels.iter().enumerate().map(|(i, l)| format!("{i}\t{l}")).collect();
        write_lines(labels, &rows)
    }
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l.as_ref());
        out.push('\n');
    }
    util::write_atomic(path, out.as_bytes())
}

pub fn topic_word(topic: usize, i: usize) -> String {
    format!("t{topic}w{i}")
}

/// Sentences drawn from planted per-topic vocabularies, shuffled together.
pub fn gen_topic_corpus(spec: &PlantedCorpusSpec) -> Result<LabeledCorpus> {
    check_lengths(spec.min_len, spec.max_len)?;
    if spec.topics == 0 || spec.words_per_topic == 0 {
        return Err(Error::invalid("topic corpus needs at least one topic and one word"));
    }
    let mut rng = util::rng(util::derive_seed(spec.seed, "topic-corpus"));
    let mut rows = Vec::with_capacity(spec.topics * spec.sentences_per_topic);
    for topic in 0..spec.topics {
        for _ in 0..spec.sentences_per_topic {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    if !spec.disjoint && spec.shared_words > 0 && rng.gen::<f64>() < spec.shared_prob {
                        format!("s{}", rng.gen_range(0..spec.shared_words))
                    } else {
                        topic_word(topic, rng.gen_range(0..spec.words_per_topic))
                    }
                })
                .collect();
            rows.push((words.join(" "), topic));
        }
    }
    rows.shuffle(&mut rng);
    let (sentences, labels) = rows.into_iter().unzip();
    Ok(LabeledCorpus { sentences, labels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialectSpec {
    pub dialects: usize,
    pub content_words: usize,
    pub markers: usize,
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub markers_per_sentence: usize,
    pub seed: u64,
}

impl Default for DialectSpec {
    fn default() -> Self {
        DialectSpec {
            dialects: 2,
            content_words: 5,
            markers: 6,
            sentences: 500,
            min_len: 4,
            max_len: 8,
            markers_per_sentence: 1,
            seed: 0,
        }
    }
}

pub fn marker_word(dialect: usize, j: usize) -> String {
    let name = (b'a' + (dialect % 26) as u8) as char;
    format!("{name}{j}x")
}

/// Parallel realizations of the same underlying sentences in several
/// dialects. Dialects share content words and differ only in markers:
/// marker slot `j` is written `marker_word(d, j)` in dialect `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DialectCorpus {
    /// `dialects[d][i]` realizes base sentence `order[d][i]`.
    pub dialects: Vec<Vec<String>>,
    pub order: Vec<Vec<usize>>,
    pub dictionary: Vec<Vec<String>>,
}

impl DialectCorpus {
    /// Line in dialect `to` holding the meaning of line `line` in dialect `from`.
    pub fn aligned(&self, from: usize, line: usize, to: usize) -> usize {
        let base = self.order[from][line];
        self.order[to].iter().position(|&b| b == base).expect("permutation")
    }

    /// Rewrite a token sequence from dialect `from` into dialect `to`.
    pub fn convert(&self, tokens: &[String], from: usize, to: usize) -> Vec<String> {
        let map: HashMap<&str, &str> = self.dictionary[from]
            .iter()
            .map(String::as_str)
            .zip(self.dictionary[to].iter().map(String::as_str))
            .collect();
        tokens.iter().map(|t| map.get(t.as_str()).map_or_else(|| t.clone(), |m| m.to_string())).collect()
    }

    /// Writes one file per dialect plus `alignment.tsv` with one row per
    /// base sentence: the line index of that sentence in each dialect.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (d, lines) in self.dialects.iter().enumerate() {
            write_lines(&dir.join(format!("dialect_{d}.txt")), lines)?;
        }
        let n = self.order.first().map_or(0, Vec::len);
        let mut inverse = vec![vec![0usize; n]; self.order.len()];
        for (d, ord) in self.order.iter().enumerate() {
            for (line, &base) in ord.iter().enumerate() {
                inverse[d][base] = line;
            }
        }
        let rows: Vec<String> = (0..n)
            .map(|b| {
                let cols: Vec<String> = inverse.iter().map(|inv| inv[b].to_string()).collect();
                format!("{b}\t{}", cols.join("\t"))
            })
            .collect();
        write_lines(&dir.join("alignment.tsv"), &rows)
    }

    /// All dialects concatenated, with the dialect of each line.
    pub fn flatten(&self) -> LabeledCorpus {
        let mut sentences = Vec::new();
        let mut labels = Vec::new();
        for (d, lines) in self.dialects.iter().enumerate() {
            sentences.extend(lines.iter().cloned());
            labels.extend(std::iter::repeat(d).take(lines.len()));
        }
        LabeledCorpus { sentences, labels }
    }
}

/// Content word `j` of the pool for sentence position `pos`.
pub fn content_word(pos: usize, j: usize) -> String {
    format!("p{pos}w{j}")
}

/// Each position draws content from its own pool, so word order can be
/// recovered from the words alone; `markers_per_sentence` positions carry a
/// dialect marker instead.
pub fn gen_dialect_corpus(spec: &DialectSpec) -> Result<DialectCorpus> {
    check_lengths(spec.min_len, spec.max_len)?;
    if spec.dialects < 2 || spec.markers == 0 || spec.content_words == 0 {
        return Err(Error::invalid("dialect corpus needs two dialects, markers and content words"));
    }
    if spec.markers_per_sentence > spec.min_len {
        return Err(Error::invalid("more markers per sentence than the minimum length"));
    }
    let mut rng = util::rng(util::derive_seed(spec.seed, "dialect-corpus"));
    // A base sentence is a sequence of slots: Ok(content word) or Err(marker id).
    let mut base: Vec<Vec<std::result::Result<String, usize>>> = Vec::with_capacity(spec.sentences);
    for _ in 0..spec.sentences {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let mut slots: Vec<std::result::Result<String, usize>> =
            (0..len).map(|p| Ok(content_word(p, rng.gen_range(0..spec.content_words)))).collect();
        let mut positions: Vec<usize> = (0..len).collect();
        positions.shuffle(&mut rng);
        for &p in positions.iter().take(spec.markers_per_sentence) {
            slots[p] = Err(rng.gen_range(0..spec.markers));
        }
        base.push(slots);
    }
    let dictionary: Vec<Vec<String>> = (0..spec.dialects)
        .map(|d| (0..spec.markers).map(|j| marker_word(d, j)).collect())
        .collect();
    let mut dialects = Vec::with_capacity(spec.dialects);
    let mut order = Vec::with_capacity(spec.dialects);
    for dict in dictionary.iter() {
        let mut ord: Vec<usize> = (0..spec.sentences).collect();
        ord.shuffle(&mut rng);
        let lines = ord
            .iter()
            .map(|&b| {
                base[b]
                    .iter()
                    .map(|slot| match slot {
                        Ok(w) => w.clone(),
                        Err(m) => dict[*m].clone(),
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        dialects.push(lines);
        order.push(ord);
    }
    Ok(DialectCorpus {
        dialects,
        order,
        dictionary,
    })
}

/// Dialect settings for the end-to-end pipeline fixture: three markers
/// per sentence so topic models can tell the dialects apart.
pub fn pipeline_dialect_spec(seed: u64) -> DialectSpec {
    DialectSpec {
        dialects: 4,
        content_words: 5,
        markers: 6,
        sentences: 525,
        min_len: 5,
        max_len: 9,
        markers_per_sentence: 3,
        seed,
    }
}

/// Files written by [`write_pipeline_fixture`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineFixture {
    pub corpus: std::path::PathBuf,
    pub labels: std::path::PathBuf,
    pub test: std::path::PathBuf,
    pub test_sources: std::path::PathBuf,
    pub labeled: std::path::PathBuf,
    pub config: std::path::PathBuf,
}

pub const PIPELINE_TRAIN_PER_DIALECT: usize = 500;

/// A four-dialect corpus of 2000 sentences, interleaved so any prefix
/// mixes all dialects; 100 held-out `source \t reference` rows whose
/// reference is the next dialect's rendering; 200 labeled training pairs;
/// and a desk-profile config pointing at them.
pub fn write_pipeline_fixture(dir: &Path, seed: u64) -> Result<PipelineFixture> {
    let spec = pipeline_dialect_spec(seed);
    let c = gen_dialect_corpus(&spec)?;
    let n = PIPELINE_TRAIN_PER_DIALECT;
    let mut corpus = Vec::with_capacity(n * spec.dialects);
    let mut labels = Vec::with_capacity(n * spec.dialects);
    for i in 0..n {
        for d in 0..spec.dialects {
            corpus.push(c.dialects[d][i].clone());
            labels.push(d.to_string());
        }
    }
    let pair = |d: usize, line: usize| {
        let to = (d + 1) % spec.dialects;
        format!("{}\t{}", c.dialects[d][line], c.dialects[to][c.aligned(d, line, to)])
    };
    let mut test = Vec::new();
    let mut sources = Vec::new();
    for line in n..spec.sentences {
        for d in 0..spec.dialects {
            test.push(pair(d, line));
            sources.push(c.dialects[d][line].clone());
        }
    }
    let labeled: Vec<String> = (0..50).flat_map(|line| (0..spec.dialects).map(move |d| (d, line))).map(|(d, l)| pair(d, l)).collect();
    let out = PipelineFixture {
        corpus: dir.join("corpus.txt"),
        labels: dir.join("labels.txt"),
        test: dir.join("test.tsv"),
        test_sources: dir.join("test_sources.txt"),
        labeled: dir.join("labeled.tsv"),
        config: dir.join("paraumt.toml"),
    };
    write_lines(&out.corpus, &corpus)?;
    write_lines(&out.labels, &labels)?;
    write_lines(&out.test, &test)?;
    write_lines(&out.test_sources, &sources)?;
    write_lines(&out.labeled, &labeled)?;
    let config = format!(
        "profile = \"desk\"\nseed = {seed}\noutput_dir = \"out\"\n\n\
         [corpus]\npath = \"corpus.txt\"\n\n\
         [finetune]\ndata = \"labeled.tsv\"\n\n\
         [paraphrase]\ninput = \"test_sources.txt\"\n\n\
         [eval]\ndata = \"test.tsv\"\n"
    );
    util::write_atomic(&out.config, config.as_bytes())?;
    Ok(out)
}

/// Points scattered around `k` well-separated centers.
pub fn gen_blobs(k: usize, per_blob: usize, dim: usize, spread: f64, seed: u64) -> (EmbeddingTable, Vec<usize>) {
    let mut rng = util::rng(util::derive_seed(seed, "blobs"));
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|c| (0..dim).map(|j| if j == c % dim { 10.0 * (1 + c / dim) as f64 } else { 0.0 }).collect())
        .collect();
    let mut rows = Vec::with_capacity(k * per_blob);
    let mut labels = Vec::with_capacity(k * per_blob);
    for i in 0..k * per_blob {
        let c = i % k;
        rows.push(centers[c].iter().map(|&x| x + spread * (2.0 * rng.gen::<f64>() - 1.0)).collect());
        labels.push(c);
    }
    (EmbeddingTable { dim, rows }, labels)
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn purity(pred: &[usize], gold: &[usize]) -> f64 {
    assert_eq!(pred.len(), gold.len(), "label lists differ in length");
    if pred.is_empty() {
        return 0.0;
    }
    let mut table: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&p, &g) in pred.iter().zip(gold) {
        *table.entry(p).or_default().entry(g).or_default() += 1;
    }
    let hits: usize = table.values().map(|row| row.values().copied().max().unwrap_or(0)).sum();
    hits as f64 / pred.len() as f64
}

/// True when two labelings induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

/// Position-wise token agreement over the longer of the two sequences.
pub fn token_accuracy<T: PartialEq>(pred: &[T], gold: &[T]) -> f64 {
    let n = pred.len().max(gold.len());
    if n == 0 {
        return 1.0;
    }
    pred.iter().zip(gold).filter(|(a, b)| a == b).count() as f64 / n as f64
}

/// A triple with its hand-derived scores.
#[derive(Debug, Clone)]
pub struct ScoredTriple {
    pub triple: EvalTriple,
    pub bleu: f64,
    pub ibleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge2_f1: f64,
}

#[derive(Debug, Clone)]
pub struct MetricFixture {
    pub config: MetricConfig,
    pub triples: Vec<ScoredTriple>,
    pub corpus_bleu: f64,
    pub corpus_ibleu: f64,
    pub mean_rouge1: f64,
    pub mean_rouge2: f64,
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Five triples scored by hand with bigram BLEU.
pub fn metric_fixture() -> MetricFixture {
    let config = MetricConfig {
        max_order: 2,
        smoothing: Smoothing::None,
        alpha: 0.8,
        rouge_mode: RougeMode::Recall,
    };
    let tri = |s: &str, r: &str, c: &str| EvalTriple {
        source: toks(s),
        reference: toks(r),
        candidate: toks(c),
    };
    let b3 = (1.0f64 / 6.0).sqrt() * 100.0;
    let b4 = 0.5f64.sqrt() * 100.0;
    let b5 = (-1.0f64).exp() * 100.0;
    let triples = vec![
        // c == s == r
        ScoredTriple {
            triple: tri("the cat sat", "the cat sat", "the cat sat"),
            bleu: 100.0,
            ibleu: 60.0,
            rouge1: 1.0,
            rouge2: 1.0,
            rouge2_f1: 1.0,
        },
        // c == r, nothing shared with s
        ScoredTriple {
            triple: tri("a dog ran", "the cat sat", "the cat sat"),
            bleu: 100.0,
            ibleu: 80.0,
            rouge1: 1.0,
            rouge2: 1.0,
            rouge2_f1: 1.0,
        },
        // p1 = 2/4, p2 = 1/3, no brevity penalty
        ScoredTriple {
            triple: tri("the cat sat", "the cat sat", "the cat the cat"),
            bleu: b3,
            ibleu: 0.6 * b3,
            rouge1: 2.0 / 3.0,
            rouge2: 0.5,
            rouge2_f1: 0.4,
        },
        // p1 = 3/4, p2 = 2/3; source shares nothing
        ScoredTriple {
            triple: tri("x y", "the cat sat", "the cat sat down"),
            bleu: b4,
            ibleu: 0.8 * b4,
            rouge1: 1.0,
            rouge2: 1.0,
            rouge2_f1: 0.8,
        },
        // exact prefix, brevity penalty exp(1 - 4/2)
        ScoredTriple {
            triple: tri("a b c d", "a b c d", "a b"),
            bleu: b5,
            ibleu: 0.6 * b5,
            rouge1: 0.5,
            rouge2: 1.0 / 3.0,
            rouge2_f1: 0.5,
        },
    ];
    // Pooled over the five: reference side 13/16 unigrams and 8/11 bigrams
    // matched, source side 7/16 and 4/11; no brevity penalty on either.
    let corpus_bleu = (13.0f64 / 16.0 * 8.0 / 11.0).sqrt() * 100.0;
    let corpus_src = (7.0f64 / 16.0 * 4.0 / 11.0).sqrt() * 100.0;
    MetricFixture {
        config,
        triples,
        corpus_bleu,
        corpus_ibleu: 0.8 * corpus_bleu - 0.2 * corpus_src,
        mean_rouge1: (1.0 + 1.0 + 2.0 / 3.0 + 1.0 + 0.5) / 5.0,
        mean_rouge2: (1.0 + 1.0 + 0.5 + 1.0 + 1.0 / 3.0) / 5.0,
    }
}
