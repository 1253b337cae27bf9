//! Routing sentences to their cluster's model, pseudo-pair generation and
//! the filter pipeline.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_assign, lda_assign, ClusteringModel, EmbeddingTable};
use crate::corpus::{decode, SentenceRecord, Vocab};
use crate::error::{Error, Result};
use crate::umt::{Lang, UmtModel};
use crate::util;

/// Cluster of a sentence among the active clusters.
pub fn route(
    model: &ClusteringModel,
    active: &[usize],
    record: &SentenceRecord,
    embeddings: Option<&EmbeddingTable>,
) -> Result<usize> {
    match model {
        ClusteringModel::Lda(m) => lda_assign(m, &record.ids, active),
        ClusteringModel::Kmeans(m) => {
            let emb = embeddings
                .and_then(|t| t.get(record.id))
                .ok_or_else(|| Error::invalid(format!("no embedding for sentence {}", record.id)))?;
            kmeans_assign(m, emb, active)
        }
    }
}

/// Anything that maps a source id sequence to a target id sequence.
pub trait Translator: Sync {
    fn translate(&self, ids: &[u32]) -> Result<Vec<u32>>;
}

impl Translator for UmtModel {
    fn translate(&self, ids: &[u32]) -> Result<Vec<u32>> {
        UmtModel::translate(self, ids, Lang::Src)
    }
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, ids: &[u32]) -> Result<Vec<u32>> {
        Ok(ids.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParaphrasePair {
    pub id: usize,
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub cluster: usize,
    pub model: usize,
}

#[derive(Serialize, Deserialize)]
struct PairLine {
    id: usize,
    src: String,
    tgt: String,
    cluster: usize,
    model: usize,
}

pub fn save_pairs(path: &Path, pairs: &[ParaphrasePair]) -> Result<()> {
    let mut out = Vec::new();
    for p in pairs {
        let line = PairLine {
            id: p.id,
            src: p.src.join(" "),
            tgt: p.tgt.join(" "),
            cluster: p.cluster,
            model: p.model,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    util::write_atomic(path, &out)
}

pub fn load_pairs(path: &Path) -> Result<Vec<ParaphrasePair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: PairLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let split = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        pairs.push(ParaphrasePair {
            id: l.id,
            src: split(&l.src),
            tgt: split(&l.tgt),
            cluster: l.cluster,
            model: l.model,
        });
    }
    Ok(pairs)
}

/// One pair per routed sentence, in corpus order. `routes[i]` is the
/// cluster of `records[i]`; `models` maps a cluster to its model id and
/// translator.
pub fn generate_pairs<T: Translator>(
    records: &[SentenceRecord],
    routes: &[usize],
    models: &BTreeMap<usize, (usize, T)>,
    vocab: &Vocab,
) -> Result<Vec<ParaphrasePair>> {
    if routes.len() != records.len() {
        return Err(Error::invalid(format!("{} routes for {} sentences", routes.len(), records.len())));
    }
    records
        .par_iter()
        .zip(routes.par_iter())
        .filter(|(r, _)| !r.ids.is_empty())
        .map(|(r, &cluster)| {
            let (model_id, m) = models.get(&cluster).ok_or(Error::MissingModel(cluster))?;
            let out = m.translate(&r.ids)?;
            Ok(ParaphrasePair {
                id: r.id,
                src: r.tokens.clone(),
                tgt: decode(&out, vocab),
                cluster,
                model: *model_id,
            })
        })
        .collect()
}

pub const IDENTITY: &str = "identity";
pub const LENGTH_RATIO: &str = "length-ratio";

/// One named predicate with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
}

impl FilterEntry {
    pub fn identity() -> Self {
        FilterEntry {
            name: IDENTITY.into(),
            max_ratio: None,
        }
    }

    pub fn length_ratio(max_ratio: f64) -> Self {
        FilterEntry {
            name: LENGTH_RATIO.into(),
            max_ratio: Some(max_ratio),
        }
    }
}

/// Ordered filter pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub predicates: Vec<FilterEntry>,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            predicates: vec![FilterEntry::identity(), FilterEntry::length_ratio(2.0)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Predicate {
    Identity,
    LengthRatio(f64),
}

impl Predicate {
    fn rejects(self, p: &ParaphrasePair) -> bool {
        match self {
            Predicate::Identity => filter_identity(p),
            Predicate::LengthRatio(r) => filter_length_ratio(p, r),
        }
    }
}

impl FilterSpec {
    fn compile(&self) -> Result<Vec<(String, Predicate)>> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(self.predicates.len());
        for e in &self.predicates {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::invalid(format!("filter `{}` listed twice", e.name)));
            }
            let pred = match e.name.as_str() {
                IDENTITY => Predicate::Identity,
                LENGTH_RATIO => {
                    let r = e.max_ratio.unwrap_or(2.0);
                    if !(r > 0.0 && r.is_finite()) {
                        return Err(Error::invalid(format!("length-ratio max_ratio {r} must be positive")));
                    }
                    Predicate::LengthRatio(r)
                }
                other => return Err(Error::UnknownFilter(other.to_string())),
            };
            out.push((e.name.clone(), pred));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.compile().map(|_| ())
    }
}

/// True when the pair should be dropped: source and target tokens are equal.
pub fn filter_identity(p: &ParaphrasePair) -> bool {
    p.src == p.tgt
}

/// True when the pair should be dropped: target longer than `max_ratio` times the source.
pub fn filter_length_ratio(p: &ParaphrasePair, max_ratio: f64) -> bool {
    p.tgt.len() as f64 > max_ratio * p.src.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterTally {
    pub name: String,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub drops: Vec<FilterTally>,
    pub output: usize,
}

impl FilterReport {
    pub fn dropped_by(&self, name: &str) -> usize {
        self.drops.iter().find(|t| t.name == name).map_or(0, |t| t.dropped)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        util::write_atomic(path, &json)
    }
}

/// Apply predicates in order; each dropped pair is charged to the first
/// predicate that rejects it.
pub fn run_filters(pairs: Vec<ParaphrasePair>, spec: &FilterSpec) -> Result<(Vec<ParaphrasePair>, FilterReport)> {
    let preds = spec.compile()?;
    let mut drops = vec![0usize; preds.len()];
    let input = pairs.len();
    let kept: Vec<ParaphrasePair> = pairs
        .into_iter()
        .filter(|p| match preds.iter().position(|(_, pred)| pred.rejects(p)) {
            Some(i) => {
                drops[i] += 1;
                false
            }
            None => true,
        })
        .collect();
    let report = FilterReport {
        input,
        drops: preds
            .into_iter()
            .zip(drops)
            .map(|((name, _), dropped)| FilterTally { name, dropped })
            .collect(),
        output: kept.len(),
    };
    Ok((kept, report))
}
