//! Corpus clustering: LDA and K-means, cluster distances and human review.

pub mod embeddings;
pub mod kmeans;
pub mod lda;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use embeddings::{hashed_embeddings, load_embeddings, EmbeddingTable};
pub use kmeans::{kmeans_assign, kmeans_fit, KMeansModel};
pub use lda::{lda_assign, lda_fit, LdaConfig, TopicModel};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterKind {
    Lda,
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClusteringModel {
    Lda(TopicModel),
    Kmeans(KMeansModel),
}

impl ClusteringModel {
    pub fn kind(&self) -> ClusterKind {
        match self {
            ClusteringModel::Lda(_) => ClusterKind::Lda,
            ClusteringModel::Kmeans(_) => ClusterKind::Kmeans,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            ClusteringModel::Lda(m) => m.k,
            ClusteringModel::Kmeans(m) => m.k,
        }
    }

    pub fn assignments(&self) -> &[usize] {
        match self {
            ClusteringModel::Lda(m) => &m.assignments,
            ClusteringModel::Kmeans(m) => &m.assignments,
        }
    }
}

/// KL(p || q) in nats over a shared support.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(
            "kl_divergence",
            format!("distributions of length {} and {}", p.len(), q.len()),
        ));
    }
    let mut sum = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a <= 0.0 || b <= 0.0 {
            return Err(Error::invalid("unsmoothed zero probability in cluster distribution"));
        }
        sum += a * (a / b).ln();
    }
    Ok(sum)
}

/// Symmetrized KL, KL(p||q) + KL(q||p).
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(kl_divergence(p, q)? + kl_divergence(q, p)?)
}

/// Symmetrized KL between topic distributions (LDA) or L2 distance between
/// centers (K-means). Zero when `m == n`.
pub fn cluster_distance(model: &ClusteringModel, m: usize, n: usize) -> Result<f64> {
    let k = model.k();
    if m >= k || n >= k {
        return Err(Error::invalid(format!("cluster id out of range for K = {k}")));
    }
    if m == n {
        return Ok(0.0);
    }
    match model {
        ClusteringModel::Lda(t) => symmetric_kl(&t.phi[m], &t.phi[n]),
        ClusteringModel::Kmeans(km) => Ok(kmeans::squared_l2(&km.centers[m], &km.centers[n]).sqrt()),
    }
}

/// Symmetric K x K table of cluster distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub k: usize,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.values[m * self.k + n]
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::shape("distance_matrix", "rows must form a square matrix"));
        }
        Ok(DistanceMatrix {
            k,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for m in 0..self.k {
            let row: Vec<String> = (0..self.k).map(|n| format!("{:.10}", self.get(m, n))).collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        util::write_atomic(path, out.as_bytes())
    }
}

pub fn distance_matrix(model: &ClusteringModel) -> Result<DistanceMatrix> {
    let k = model.k();
    let mut values = vec![0.0; k * k];
    for m in 0..k {
        for n in (m + 1)..k {
            let d = cluster_distance(model, m, n)?;
            values[m * k + n] = d;
            values[n * k + m] = d;
        }
    }
    Ok(DistanceMatrix { k, values })
}

/// Clusters with membership and the post-review active set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub kind: ClusterKind,
    pub k: usize,
    pub active: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

impl ClusterSet {
    pub fn from_assignments(kind: ClusterKind, k: usize, assignments: &[usize]) -> Self {
        let mut members = vec![Vec::new(); k];
        for (s, &c) in assignments.iter().enumerate() {
            members[c].push(s);
        }
        ClusterSet {
            kind,
            k,
            active: (0..k).collect(),
            members,
        }
    }

    pub fn is_active(&self, c: usize) -> bool {
        self.active.binary_search(&c).is_ok()
    }

    /// Members usable for training: empty for discarded clusters.
    pub fn training_members(&self, c: usize) -> &[usize] {
        if self.is_active(c) {
            &self.members[c]
        } else {
            &[]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub cluster: usize,
    pub keep: bool,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecisions {
    pub decisions: Vec<ReviewDecision>,
}

impl ReviewDecisions {
    /// Parse `cluster_id \t keep|discard \t note` rows.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut decisions = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut f = line.splitn(3, '\t');
            let err = |m: &str| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: m.to_string(),
            };
            let cluster = f
                .next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| err("expected a cluster id"))?;
            let keep = match f.next().map(str::trim) {
                Some("keep") => true,
                Some("discard") => false,
                _ => return Err(err("expected `keep` or `discard`")),
            };
            let note = f.next().unwrap_or("").trim().to_string();
            decisions.push(ReviewDecision { cluster, keep, note });
        }
        Ok(ReviewDecisions { decisions })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for d in &self.decisions {
            let verdict = if d.keep { "keep" } else { "discard" };
            let _ = writeln!(out, "{}\t{}\t{}", d.cluster, verdict, d.note);
        }
        util::write_atomic(path, out.as_bytes())
    }
}

/// Drop discarded clusters from the active set. Memberships are untouched.
pub fn apply_review(clusters: &ClusterSet, decisions: &ReviewDecisions) -> Result<ClusterSet> {
    let mut keep: Vec<bool> = (0..clusters.k).map(|c| clusters.is_active(c)).collect();
    for d in &decisions.decisions {
        if d.cluster >= clusters.k {
            return Err(Error::invalid(format!(
                "review names cluster {} but K = {}",
                d.cluster, clusters.k
            )));
        }
        keep[d.cluster] = d.keep;
    }
    let active: Vec<usize> = (0..clusters.k).filter(|&c| keep[c]).collect();
    if active.len() < 2 {
        return Err(Error::invalid(format!(
            "review keeps {} cluster(s); at least 2 are required",
            active.len()
        )));
    }
    Ok(ClusterSet {
        active,
        ..clusters.clone()
    })
}

/// Top-`n` tokens per cluster: p(v|c) for LDA, member token frequency for
/// K-means.
pub fn top_tokens(
    model: &ClusteringModel,
    clusters: &ClusterSet,
    docs: &[Vec<u32>],
    vocab: &Vocab,
    n: usize,
) -> Vec<Vec<(String, f64)>> {
    (0..model.k())
        .map(|c| {
            let dist: Vec<f64> = match model {
                ClusteringModel::Lda(t) => t.phi[c].clone(),
                ClusteringModel::Kmeans(_) => {
                    let mut counts = vec![0.0; vocab.len()];
                    let mut total = 0.0;
                    for &s in &clusters.members[c] {
                        for &w in &docs[s] {
                            if let Some(x) = counts.get_mut(w as usize) {
                                *x += 1.0;
                                total += 1.0;
                            }
                        }
                    }
                    if total > 0.0 {
                        counts.iter_mut().for_each(|x| *x /= total);
                    }
                    counts
                }
            };
            let mut idx: Vec<usize> = (crate::corpus::NUM_SPECIALS..dist.len()).collect();
            idx.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            idx.into_iter()
                .take(n)
                .map(|i| (vocab.lookup(i as u32).to_string(), dist[i]))
                .collect()
        })
        .collect()
}

/// Human-readable review report: per cluster size and top-20 tokens.
pub fn review_report(
    model: &ClusteringModel,
    clusters: &ClusterSet,
    docs: &[Vec<u32>],
    vocab: &Vocab,
) -> String {
    let mut out = String::new();
    for (c, tops) in top_tokens(model, clusters, docs, vocab, 20).iter().enumerate() {
        let status = if clusters.is_active(c) { "active" } else { "discarded" };
        let _ = writeln!(out, "cluster {c} ({status}, {} sentences)", clusters.members[c].len());
        for (t, p) in tops {
            let _ = writeln!(out, "  {t}\t{p:.6}");
        }
    }
    out
}

pub fn save_assignments(path: &Path, assignments: &[usize]) -> Result<()> {
    let mut out = String::new();
    for (s, c) in assignments.iter().enumerate() {
        let _ = writeln!(out, "{s}\t{c}");
    }
    util::write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lda_model(phi: Vec<Vec<f64>>) -> ClusteringModel {
        ClusteringModel::Lda(TopicModel {
            k: phi.len(),
            phi,
            assignments: vec![],
            alpha: 0.1,
            beta: 0.01,
            sweeps: 1,
        })
    }

    #[test]
    fn symmetric_kl_example() {
        let m = lda_model(vec![vec![0.5, 0.5], vec![0.25, 0.75]]);
        let d = cluster_distance(&m, 0, 1).unwrap();
        let expected = 0.5 * (0.5f64 / 0.25).ln()
            + 0.5 * (0.5f64 / 0.75).ln()
            + 0.25 * (0.25f64 / 0.5).ln()
            + 0.75 * (0.75f64 / 0.5).ln();
        assert!((d - expected).abs() < 1e-15);
        assert!((d - 0.2747).abs() < 1e-4);
        assert_eq!(cluster_distance(&m, 1, 1).unwrap(), 0.0);
        let dm = distance_matrix(&m).unwrap();
        assert_eq!(dm.get(0, 1), dm.get(1, 0));
        assert_eq!(dm.get(0, 0), 0.0);
    }

    #[test]
    fn zero_probability_is_rejected() {
        let m = lda_model(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        assert!(cluster_distance(&m, 0, 1).is_err());
    }

    #[test]
    fn kmeans_distance_is_l2() {
        let m = ClusteringModel::Kmeans(KMeansModel {
            k: 2,
            centers: vec![vec![0.0, 0.0], vec![3.0, 4.0]],
            assignments: vec![],
            sse_history: vec![],
        });
        assert_eq!(cluster_distance(&m, 0, 1).unwrap(), 5.0);
    }

    fn discard(ids: &[usize]) -> ReviewDecisions {
        ReviewDecisions {
            decisions: ids
                .iter()
                .map(|&c| ReviewDecision {
                    cluster: c,
                    keep: false,
                    note: String::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn review_rules() {
        let cs = ClusterSet::from_assignments(ClusterKind::Lda, 4, &[0, 1, 2, 3, 2]);
        let r = apply_review(&cs, &discard(&[2])).unwrap();
        assert_eq!(r.active, [0, 1, 3]);
        assert_eq!(r.members, cs.members);
        assert!(r.training_members(2).is_empty());
        assert_eq!(apply_review(&cs, &ReviewDecisions::default()).unwrap(), cs);
        assert!(apply_review(&cs, &discard(&[0, 1, 2])).is_err());
        assert!(apply_review(&cs, &discard(&[9])).is_err());
    }

    #[test]
    fn decisions_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        fs::write(&p, "0\tkeep\tfine\n2\tdiscard\tstop words\n").unwrap();
        let d = ReviewDecisions::load(&p).unwrap();
        assert_eq!(d.decisions.len(), 2);
        assert!(!d.decisions[1].keep);
        assert_eq!(d.decisions[1].note, "stop words");
        fs::write(&p, "0\tmaybe\n").unwrap();
        assert!(ReviewDecisions::load(&p).is_err());
    }
}
