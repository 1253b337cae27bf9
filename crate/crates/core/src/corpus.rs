//! Corpus ingestion: tokenization, vocabularies and id encoding.
//!
//! Every downstream model shares the id space defined by [`Vocab`]. The four
//! reserved specials always occupy indices 0..4 in the order
//! PAD, UNK, BOS, EOS.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const NUM_SPECIALS: usize = 4;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<s>", "</s>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub split_punctuation: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            split_punctuation: true,
        }
    }
}

/// Split `text` into tokens on whitespace, optionally peeling punctuation off
/// into single-character tokens and lowercasing.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chunk = if config.lowercase {
            chunk.to_lowercase()
        } else {
            chunk.to_string()
        };
        if !config.split_punctuation {
            out.push(chunk);
            continue;
        }
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                word.push(c);
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Join tokens back into a display string.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(|t| t.as_ref())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: usize,
    pub text: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Lines,
    Jsonl,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lines" => Ok(CorpusFormat::Lines),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::invalid(format!("unknown corpus format `{other}`"))),
        }
    }
}

#[derive(Deserialize)]
struct JsonLine {
    text: String,
}

/// Read a corpus file. Blank lines are skipped and ids stay dense.
pub fn load_corpus(
    path: impl AsRef<Path>,
    format: CorpusFormat,
    tokenizer: &TokenizerConfig,
) -> Result<Vec<SentenceRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let text = match format {
            CorpusFormat::Lines => line.trim().to_string(),
            CorpusFormat::Jsonl => {
                let parsed: JsonLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
                parsed.text
            }
        };
        let tokens = tokenize(&text, tokenizer);
        if tokens.is_empty() {
            continue;
        }
        records.push(SentenceRecord {
            id: records.len(),
            text,
            tokens,
            ids: Vec::new(),
        });
    }
    Ok(records)
}

/// Token/index bijection with frequency counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VocabRepr {
            tokens: self.tokens[NUM_SPECIALS..].to_vec(),
            counts: self.counts[NUM_SPECIALS..].to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = VocabRepr::deserialize(d)?;
        if repr.tokens.len() != repr.counts.len() {
            return Err(serde::de::Error::custom("token and count lists differ in length"));
        }
        Vocab::from_tokens(repr.tokens.into_iter().zip(repr.counts))
            .map_err(serde::de::Error::custom)
    }
}

impl Vocab {
    fn from_tokens(entries: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let mut vocab = Vocab {
            tokens: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            counts: vec![0; NUM_SPECIALS],
            index: HashMap::new(),
        };
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            vocab.index.insert(s.to_string(), i as u32);
        }
        for (token, count) in entries {
            if vocab.index.contains_key(&token) {
                return Err(Error::invalid(format!("duplicate vocabulary token `{token}`")));
            }
            vocab.index.insert(token.clone(), vocab.tokens.len() as u32);
            vocab.tokens.push(token);
            vocab.counts.push(count);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn lookup(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(SPECIAL_TOKENS[UNK as usize])
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Write the vocabulary file: the four specials, then one token per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        for t in &self.tokens {
            writeln!(buf, "{t}").expect("write to Vec");
        }
        crate::util::write_atomic(path, &buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_SPECIALS {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lines.len() + 1,
                message: "vocabulary file is missing the special-token header".into(),
            });
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if lines[i] != *s {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected special token `{s}`"),
                });
            }
        }
        Vocab::from_tokens(lines[NUM_SPECIALS..].iter().map(|t| (t.to_string(), 0)))
    }
}

/// Count tokens and keep those with frequency >= `min_count`, ordered by
/// descending frequency then ascending token, truncated so the vocabulary
/// (specials included) holds at most `max_size` entries.
pub fn build_vocab<I, S>(sentences: I, min_count: u64, max_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[String]>,
{
    if min_count < 1 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    if max_size < NUM_SPECIALS {
        return Err(Error::invalid("max_size must leave room for the 4 specials"));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut n_sentences = 0usize;
    for s in sentences {
        n_sentences += 1;
        for t in s.as_ref() {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    if n_sentences == 0 || counts.is_empty() {
        return Err(Error::EmptyInput("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut entries: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count && !SPECIAL_TOKENS.contains(&t.as_str()))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(max_size - NUM_SPECIALS);
    Vocab::from_tokens(entries)
}

pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocab) -> Vec<u32> {
    tokens.iter().map(|t| vocab.index(t.as_ref())).collect()
}

pub fn decode(ids: &[u32], vocab: &Vocab) -> Vec<String> {
    ids.iter().map(|&i| vocab.lookup(i).to_string()).collect()
}

/// Fill `ids` of every record from its tokens.
pub fn encode_records(records: &mut [SentenceRecord], vocab: &Vocab) {
    for r in records {
        r.ids = encode(&r.tokens, vocab);
    }
}
