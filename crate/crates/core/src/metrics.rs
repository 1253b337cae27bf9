//! BLEU, iBLEU and ROUGE-N with corpus-level reports.

use std::collections::HashMap;
use std::hash::Hash;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    None,
    /// For orders >= 2, a zero match count becomes 1/(total + 1).
    AddOneOnZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RougeMode {
    Recall,
    F1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub max_order: usize,
    pub smoothing: Smoothing,
    pub alpha: f64,
    pub rouge_mode: RougeMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            max_order: 4,
            smoothing: Smoothing::AddOneOnZero,
            alpha: 0.8,
            rouge_mode: RougeMode::Recall,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_order < 1 {
            return Err(Error::invalid("max n-gram order must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("iBLEU alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Sufficient statistics for BLEU: clipped matches and totals per order plus
/// candidate / effective reference lengths. Pooling stats gives corpus BLEU.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    fn zeros(order: usize) -> Self {
        BleuStats {
            matches: vec![0; order],
            totals: vec![0; order],
            cand_len: 0,
            ref_len: 0,
        }
    }

    pub fn compute<T: Hash + Eq, R: AsRef<[T]>>(candidate: &[T], references: &[R], order: usize) -> Self {
        let mut stats = BleuStats::zeros(order);
        stats.cand_len = candidate.len();
        // closest reference length, shorter wins ties
        stats.ref_len = references
            .iter()
            .map(|r| r.as_ref().len())
            .min_by_key(|&l| (l.abs_diff(candidate.len()), l))
            .unwrap_or(0);
        for n in 1..=order {
            let cand = ngram_counts(candidate, n);
            let mut max_ref: HashMap<&[T], usize> = HashMap::new();
            for r in references {
                for (g, c) in ngram_counts(r.as_ref(), n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            stats.totals[n - 1] = candidate.len().saturating_sub(n - 1);
            stats.matches[n - 1] = cand
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    fn accumulate(&mut self, other: &BleuStats) {
        for i in 0..self.matches.len() {
            self.matches[i] += other.matches[i];
            self.totals[i] += other.totals[i];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }

    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.cand_len == 0 || self.matches.first().copied().unwrap_or(0) == 0 {
            return 0.0;
        }
        let order = self.matches.len();
        let mut log_sum = 0.0;
        for n in 0..order {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            let p = if self.matches[n] > 0 {
                m / t
            } else {
                match smoothing {
                    Smoothing::None => return 0.0,
                    Smoothing::AddOneOnZero => 1.0 / (t + 1.0),
                }
            };
            log_sum += p.ln();
        }
        let bp = if self.cand_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        };
        (100.0 * bp * (log_sum / order as f64).exp()).clamp(0.0, 100.0)
    }
}

/// Sentence BLEU in [0, 100].
pub fn bleu<T: Hash + Eq, R: AsRef<[T]>>(candidate: &[T], references: &[R], config: &MetricConfig) -> f64 {
    BleuStats::compute(candidate, references, config.max_order).score(config.smoothing)
}

/// Corpus BLEU: statistics pooled over all pairs, no smoothing.
pub fn corpus_bleu<T: Hash + Eq, C: AsRef<[T]>, R: AsRef<[T]>>(
    candidates: &[C],
    references: &[Vec<R>],
    max_order: usize,
) -> f64 {
    let mut total = BleuStats::zeros(max_order);
    for (c, refs) in candidates.iter().zip(references) {
        total.accumulate(&BleuStats::compute(c.as_ref(), refs, max_order));
    }
    total.score(Smoothing::None)
}

/// alpha * BLEU(c, r) - (1 - alpha) * BLEU(c, s).
pub fn ibleu<T: Hash + Eq>(source: &[T], reference: &[T], candidate: &[T], config: &MetricConfig) -> f64 {
    let a = config.alpha;
    a * bleu(candidate, &[reference], config) - (1.0 - a) * bleu(candidate, &[source], config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub score: f64,
    /// Set when the reference holds fewer than `n` tokens.
    pub degenerate: bool,
}

pub fn rouge_n<T: Hash + Eq>(candidate: &[T], reference: &[T], n: usize, mode: RougeMode) -> RougeScore {
    if n == 0 || reference.len() < n {
        return RougeScore {
            score: 0.0,
            degenerate: true,
        };
    }
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matched: usize = refc
        .iter()
        .map(|(g, &c)| c.min(cand.get(g).copied().unwrap_or(0)))
        .sum();
    let ref_total = reference.len() + 1 - n;
    let recall = matched as f64 / ref_total as f64;
    let score = match mode {
        RougeMode::Recall => recall,
        RougeMode::F1 => {
            let cand_total = candidate.len().saturating_sub(n - 1);
            let precision = if cand_total == 0 {
                0.0
            } else {
                matched as f64 / cand_total as f64
            };
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        }
    };
    RougeScore {
        score,
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTriple {
    pub source: Vec<String>,
    pub reference: Vec<String>,
    pub candidate: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScores {
    pub bleu: f64,
    pub ibleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub ibleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(skip)]
    pub sentences: Vec<SentenceScores>,
}

/// Corpus BLEU and iBLEU plus mean sentence ROUGE-1/2.
pub fn evaluate(triples: &[EvalTriple], config: &MetricConfig) -> Result<EvalReport> {
    config.validate()?;
    if triples.is_empty() {
        return Err(Error::EmptyInput("evaluation needs at least one triple".into()));
    }
    let sentences: Vec<SentenceScores> = triples
        .iter()
        .map(|t| SentenceScores {
            bleu: bleu(&t.candidate, &[&t.reference], config),
            ibleu: ibleu(&t.source, &t.reference, &t.candidate, config),
            rouge1: rouge_n(&t.candidate, &t.reference, 1, config.rouge_mode).score,
            rouge2: rouge_n(&t.candidate, &t.reference, 2, config.rouge_mode).score,
        })
        .collect();
    let cands: Vec<&[String]> = triples.iter().map(|t| t.candidate.as_slice()).collect();
    let refs: Vec<Vec<&[String]>> = triples.iter().map(|t| vec![t.reference.as_slice()]).collect();
    let srcs: Vec<Vec<&[String]>> = triples.iter().map(|t| vec![t.source.as_slice()]).collect();
    let bleu_r = corpus_bleu(&cands, &refs, config.max_order);
    let bleu_s = corpus_bleu(&cands, &srcs, config.max_order);
    let n = sentences.len() as f64;
    Ok(EvalReport {
        bleu: bleu_r,
        ibleu: config.alpha * bleu_r - (1.0 - config.alpha) * bleu_s,
        rouge1: sentences.iter().map(|s| s.rouge1).sum::<f64>() / n,
        rouge2: sentences.iter().map(|s| s.rouge2).sum::<f64>() / n,
        sentences,
    })
}

impl EvalReport {
    pub fn write(&self, json_path: &Path, csv_path: Option<&Path>) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        crate::util::write_atomic(json_path, &json)?;
        if let Some(csv) = csv_path {
            let mut out = String::from("index,bleu,ibleu,rouge1,rouge2\n");
            for (i, s) in self.sentences.iter().enumerate() {
                out.push_str(&format!("{i},{:.6},{:.6},{:.6},{:.6}\n", s.bleu, s.ibleu, s.rouge1, s.rouge2));
            }
            crate::util::write_atomic(csv, out.as_bytes())?;
        }
        Ok(())
    }
}
