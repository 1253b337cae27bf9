//! Collapsed Gibbs sampling for LDA over encoded sentences.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub k: usize,
    pub sweeps: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            k: 80,
            sweeps: 5,
            alpha: 0.1,
            beta: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    /// `phi[c][v]` = p(v | c), smoothed with `beta`.
    pub phi: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub sweeps: usize,
}

/// Fit LDA with `sweeps` full collapsed-Gibbs passes. Each sentence is then
/// assigned to the topic most likely to generate it.
pub fn lda_fit(docs: &[Vec<u32>], vocab_size: usize, config: &LdaConfig) -> Result<TopicModel> {
    let k = config.k;
    if k < 2 {
        return Err(Error::invalid("LDA needs K >= 2"));
    }
    if config.sweeps < 1 {
        return Err(Error::invalid("LDA needs at least one sweep"));
    }
    if !(config.alpha > 0.0 && config.beta > 0.0) {
        return Err(Error::invalid("alpha and beta must be positive"));
    }
    if docs.len() < k {
        return Err(Error::EmptyInput(format!(
            "corpus has {} sentences, fewer than K = {k}",
            docs.len()
        )));
    }
    if vocab_size == 0 {
        return Err(Error::invalid("empty vocabulary"));
    }
    if let Some(i) = docs.iter().position(|d| d.is_empty()) {
        return Err(Error::invalid(format!("sentence {i} is empty")));
    }
    let word = |w: u32| (w as usize).min(vocab_size - 1);

    let mut rng = util::rng(config.seed);
    let mut doc_topic = vec![vec![0u32; k]; docs.len()];
    let mut topic_word = vec![vec![0u32; vocab_size]; k];
    let mut topic_total = vec![0u32; k];
    let mut z: Vec<Vec<usize>> = Vec::with_capacity(docs.len());
    for (d, doc) in docs.iter().enumerate() {
        let zs: Vec<usize> = doc
            .iter()
            .map(|&w| {
                let t = rng.gen_range(0..k);
                doc_topic[d][t] += 1;
                topic_word[t][word(w)] += 1;
                topic_total[t] += 1;
                t
            })
            .collect();
        z.push(zs);
    }

    let v_beta = vocab_size as f64 * config.beta;
    let mut weights = vec![0.0f64; k];
    for _ in 0..config.sweeps {
        for (d, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let w = word(w);
                let old = z[d][i];
                doc_topic[d][old] -= 1;
                topic_word[old][w] -= 1;
                topic_total[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    total += (doc_topic[d][t] as f64 + config.alpha)
                        * (topic_word[t][w] as f64 + config.beta)
                        / (topic_total[t] as f64 + v_beta);
                    weights[t] = total;
                }
                let u = rng.gen::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                z[d][i] = new;
                doc_topic[d][new] += 1;
                topic_word[new][w] += 1;
                topic_total[new] += 1;
            }
        }
    }

    let phi: Vec<Vec<f64>> = (0..k)
        .map(|t| {
            let denom = topic_total[t] as f64 + v_beta;
            topic_word[t]
                .iter()
                .map(|&c| (c as f64 + config.beta) / denom)
                .collect()
        })
        .collect();

    let mut model = TopicModel {
        k,
        phi,
        assignments: Vec::new(),
        alpha: config.alpha,
        beta: config.beta,
        sweeps: config.sweeps,
    };
    let all: Vec<usize> = (0..k).collect();
    model.assignments = docs
        .iter()
        .map(|d| lda_assign(&model, d, &all))
        .collect::<Result<_>>()?;
    Ok(model)
}

/// Sum of log p(w | c) over the sentence.
pub fn sentence_log_prob(model: &TopicModel, sentence: &[u32], cluster: usize) -> f64 {
    let row = &model.phi[cluster];
    let last = row.len() - 1;
    sentence
        .iter()
        .map(|&w| row[(w as usize).min(last)].ln())
        .sum()
}

/// Most likely generating cluster among `active`; ties go to the lowest id.
pub fn lda_assign(model: &TopicModel, sentence: &[u32], active: &[usize]) -> Result<usize> {
    if sentence.is_empty() {
        return Err(Error::invalid("cannot assign an empty sentence"));
    }
    argmax_active(active, |c| sentence_log_prob(model, sentence, c))
}

pub(crate) fn argmax_active(active: &[usize], score: impl Fn(usize) -> f64) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    let mut sorted = active.to_vec();
    sorted.sort_unstable();
    for c in sorted {
        let s = score(c);
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((c, s)),
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::invalid("no active clusters to choose from"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_topic_model() -> TopicModel {
        // vocab: specials 0..4, a = 4, b = 5; mass on specials is negligible
        let mk = |a: f64, b: f64| vec![0.0, 0.0, 0.0, 0.0, a, b];
        TopicModel {
            k: 2,
            phi: vec![mk(0.9, 0.1), mk(0.1, 0.9)],
            assignments: vec![],
            alpha: 0.1,
            beta: 0.01,
            sweeps: 5,
        }
    }

    #[test]
    fn assign_by_log_probability() {
        let m = two_topic_model();
        let s = [4, 4, 5];
        let lp0 = sentence_log_prob(&m, &s, 0);
        let lp1 = sentence_log_prob(&m, &s, 1);
        assert!((lp0 - (2.0 * 0.9f64.ln() + 0.1f64.ln())).abs() < 1e-12);
        assert!((lp0 + 2.5133).abs() < 1e-4 && (lp1 + 4.7105).abs() < 1e-4);
        assert_eq!(lda_assign(&m, &s, &[0, 1]).unwrap(), 0);
        assert_eq!(lda_assign(&m, &s, &[1]).unwrap(), 1);
        assert!(lda_assign(&m, &[], &[0, 1]).is_err());
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let mut m = two_topic_model();
        m.phi[1] = m.phi[0].clone();
        assert_eq!(lda_assign(&m, &[4], &[1, 0]).unwrap(), 0);
    }

    #[test]
    fn too_few_sentences() {
        let docs = vec![vec![4u32, 5]; 3];
        let cfg = LdaConfig {
            k: 4,
            ..Default::default()
        };
        assert!(lda_fit(&docs, 6, &cfg).is_err());
    }

    #[test]
    fn phi_rows_normalized_and_deterministic() {
        let docs: Vec<Vec<u32>> = (0..30).map(|i| vec![4 + (i % 3) as u32, 4 + ((i + 1) % 5) as u32]).collect();
        let cfg = LdaConfig {
            k: 3,
            seed: 9,
            ..Default::default()
        };
        let a = lda_fit(&docs, 10, &cfg).unwrap();
        let b = lda_fit(&docs, 10, &cfg).unwrap();
        assert_eq!(a, b);
        for row in &a.phi {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0));
        }
        assert!(a.assignments.iter().all(|&c| c < 3));
    }
}
