//! Stage-by-stage orchestration with a manifest of artifact digests.

pub mod config;
pub mod manifest;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    AblateSection, ClusteringSection, CorpusSection, DistillSection, EvalSection, FinetuneSection, ModelChoice, PairingSection,
    ParaphraseSection, PipelineConfig, Profile,
};
pub use manifest::{Manifest, StageRecord, MANIFEST_FILE};

use crate::clustering::{
    apply_review, distance_matrix, hashed_embeddings, kmeans_fit, lda_fit, load_embeddings, review_report,
    save_assignments, top_tokens, ClusterKind, ClusterSet, ClusteringModel, DistanceMatrix, EmbeddingTable, LdaConfig,
    ReviewDecision, ReviewDecisions,
};
use crate::corpus::{build_vocab, decode, detokenize, encode, encode_records, load_corpus, SentenceRecord, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalTriple};
use crate::nn::Checkpoint;
use crate::pairing::{fit_score_function, pair_clusters, pair_exhaustive, pair_supervised, PairingPlan, PairingStrategy};
use crate::pseudo::{generate_pairs, load_pairs, route, run_filters, save_pairs};
use crate::surrogate::{
    beam_decode, finetune, load_labeled_pairs, paraphrase, train_surrogate, EncodedPairs, EpochLog, SurrogateModel,
};
use crate::umt::{train_umt, write_history, Lang, UmtModel, UmtTrainConfig};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Cluster,
    ReviewReport,
    Pair,
    TrainUmt,
    Distill,
    Filter,
    TrainSurrogate,
    Finetune,
    Paraphrase,
    Eval,
    Ablate,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Cluster,
        Stage::ReviewReport,
        Stage::Pair,
        Stage::TrainUmt,
        Stage::Distill,
        Stage::Filter,
        Stage::TrainSurrogate,
        Stage::Finetune,
        Stage::Paraphrase,
        Stage::Eval,
        Stage::Ablate,
    ];

    /// cluster → pair → train-umt → distill → filter → train-surrogate → eval
    pub const MAIN: [Stage; 7] = [
        Stage::Cluster,
        Stage::Pair,
        Stage::TrainUmt,
        Stage::Distill,
        Stage::Filter,
        Stage::TrainSurrogate,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Cluster => "cluster",
            Stage::ReviewReport => "review-report",
            Stage::Pair => "pair",
            Stage::TrainUmt => "train-umt",
            Stage::Distill => "distill",
            Stage::Filter => "filter",
            Stage::TrainSurrogate => "train-surrogate",
            Stage::Finetune => "finetune",
            Stage::Paraphrase => "paraphrase",
            Stage::Eval => "eval",
            Stage::Ablate => "ablate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AblationAxis {
    CorpusSize,
    TopicCount,
    PairingStrategy,
    ClusteringMethod,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] = [
        AblationAxis::CorpusSize,
        AblationAxis::TopicCount,
        AblationAxis::PairingStrategy,
        AblationAxis::ClusteringMethod,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::CorpusSize => "corpus-size",
            AblationAxis::TopicCount => "topic-count",
            AblationAxis::PairingStrategy => "pairing-strategy",
            AblationAxis::ClusteringMethod => "clustering-method",
        }
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation axis `{s}`")))
    }
}

/// Process exit status for an error: 2 config, 3 missing artifact, 4 other.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::UnknownFilter(_) => 2,
        Error::MissingArtifact { .. } => 3,
        _ => 4,
    }
}

/// Artifact file names inside the output directory.
pub mod artifacts {
    pub const VOCAB: &str = "vocab.txt";
    pub const CLUSTERING: &str = "clustering.json";
    pub const ASSIGNMENTS: &str = "assignments.tsv";
    pub const DISTANCES: &str = "distances.tsv";
    pub const REVIEW_REPORT: &str = "review_report.txt";
    pub const REVIEW_TEMPLATE: &str = "review_decisions.template.tsv";
    pub const CLUSTERS: &str = "clusters.json";
    pub const PAIRING: &str = "pairing.tsv";
    pub const PROBES: &str = "pairing_probes.tsv";
    pub const SCORE_FUNCTION: &str = "score_function.json";
    pub const UMT_DIR: &str = "umt";
    pub const PAIRS: &str = "pairs.jsonl";
    pub const FILTERED: &str = "filtered.jsonl";
    pub const FILTER_REPORT: &str = "filter_report.json";
    pub const SURROGATE: &str = "surrogate.json";
    pub const SURROGATE_EPOCHS: &str = "surrogate_epochs.csv";
    pub const SURROGATE_STEPS: &str = "surrogate_steps.csv";
    pub const FINETUNED: &str = "finetuned.json";
    pub const FINETUNE_EPOCHS: &str = "finetune_epochs.csv";
    pub const PARAPHRASES: &str = "paraphrases.txt";
    pub const EVAL_REPORT: &str = "eval_report.json";
    pub const EVAL_SENTENCES: &str = "eval_sentences.csv";
    pub const EVAL_OUTPUTS: &str = "eval_outputs.tsv";
    pub const ABLATE_DIR: &str = "ablate";

    pub fn umt_model(i: usize) -> String {
        format!("{UMT_DIR}/pair_{i}.json")
    }

    pub fn umt_history(i: usize) -> String {
        format!("{UMT_DIR}/pair_{i}_history.csv")
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

/// Scores written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub bleu: f64,
    pub ibleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    /// Outputs whose tokens differ from the source.
    pub changed: usize,
    pub changed_fraction: f64,
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub ibleu: f64,
}

struct Io {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    summary: String,
}

impl Io {
    fn new() -> Self {
        Io {
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: String::new(),
        }
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let out = config.output_dir.clone();
        Ok(Pipeline { config, out })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Run one stage and record it in the manifest.
    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        let t0 = Instant::now();
        let io = match stage {
            Stage::Cluster => self.cluster(),
            Stage::ReviewReport => self.review(),
            Stage::Pair => self.pair(),
            Stage::TrainUmt => self.train_umt(),
            Stage::Distill => self.distill(),
            Stage::Filter => self.filter(),
            Stage::TrainSurrogate => self.train_surrogate(),
            Stage::Finetune => self.finetune(),
            Stage::Paraphrase => self.paraphrase(),
            Stage::Eval => self.eval(),
            Stage::Ablate => self.ablate(&AblationAxis::ALL),
        }?;
        let mut manifest = Manifest::open(&self.out, self.config.to_json()?)?;
        manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                inputs: manifest::digest_map(&self.out, &io.inputs)?,
                outputs: manifest::digest_map(&self.out, &io.outputs)?,
                seconds: t0.elapsed().as_secs_f64(),
            },
        );
        manifest.save(&self.out)?;
        Ok(StageOutcome {
            stage,
            outputs: io.outputs,
            summary: io.summary,
        })
    }

    /// Run the stages in order, stopping at the first failure.
    pub fn run_all(&self, stages: &[Stage]) -> Result<Vec<StageOutcome>> {
        stages.iter().map(|&s| self.run(s)).collect()
    }

    /// Run the ablation harness over selected axes only.
    pub fn run_ablation(&self, axes: &[AblationAxis]) -> Result<StageOutcome> {
        let t0 = Instant::now();
        let io = self.ablate(axes)?;
        let mut manifest = Manifest::open(&self.out, self.config.to_json()?)?;
        manifest.stages.insert(
            Stage::Ablate.name().to_string(),
            StageRecord {
                inputs: manifest::digest_map(&self.out, &io.inputs)?,
                outputs: manifest::digest_map(&self.out, &io.outputs)?,
                seconds: t0.elapsed().as_secs_f64(),
            },
        );
        manifest.save(&self.out)?;
        Ok(StageOutcome {
            stage: Stage::Ablate,
            outputs: io.outputs,
            summary: io.summary,
        })
    }

    fn need(&self, stage: Stage, rel: &str, io: &mut Io) -> Result<PathBuf> {
        let p = self.path(rel);
        if !p.is_file() {
            return Err(Error::MissingArtifact {
                stage: stage.name().to_string(),
                path: p,
            });
        }
        io.inputs.push(p.clone());
        Ok(p)
    }

    fn write(&self, rel: &str, bytes: &[u8], io: &mut Io) -> Result<PathBuf> {
        let p = self.path(rel);
        util::write_atomic(&p, bytes)?;
        io.outputs.push(p.clone());
        Ok(p)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T, io: &mut Io) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes, io)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn records(&self, io: &mut Io) -> Result<Vec<SentenceRecord>> {
        let c = &self.config.corpus;
        io.inputs.push(c.path.clone());
        let mut records = load_corpus(&c.path, c.format, &c.tokenizer)?;
        if let Some(n) = c.limit {
            records.truncate(n);
        }
        if records.is_empty() {
            return Err(Error::EmptyInput(format!("corpus {} has no sentences", c.path.display())));
        }
        Ok(records)
    }

    /// Corpus encoded with the vocabulary written by `cluster`.
    fn encoded_corpus(&self, io: &mut Io) -> Result<(Vec<SentenceRecord>, Vocab)> {
        let vocab = Vocab::load(self.need(Stage::Cluster, artifacts::VOCAB, io)?)?;
        let mut records = self.records(io)?;
        encode_records(&mut records, &vocab);
        Ok((records, vocab))
    }

    fn embeddings(&self, records: &[SentenceRecord], io: &mut Io) -> Result<EmbeddingTable> {
        match &self.config.clustering.embeddings {
            Some(p) => {
                io.inputs.push(p.clone());
                let table = load_embeddings(p, None)?;
                if table.len() < records.len() {
                    return Err(Error::invalid(format!(
                        "embedding file has {} rows for {} sentences",
                        table.len(),
                        records.len()
                    )));
                }
                Ok(table)
            }
            None => {
                let toks: Vec<&[String]> = records.iter().map(|r| r.tokens.as_slice()).collect();
                let toks: Vec<Vec<&str>> = toks.iter().map(|t| t.iter().map(String::as_str).collect()).collect();
                Ok(hashed_embeddings(
                    &toks,
                    self.config.clustering.hashed_dim,
                    self.config.stream_seed("embeddings", 0),
                ))
            }
        }
    }

    fn cluster(&self) -> Result<Io> {
        let mut io = Io::new();
        let cfg = &self.config;
        let mut records = self.records(&mut io)?;
        let toks: Vec<&[String]> = records.iter().map(|r| r.tokens.as_slice()).collect();
        let vocab = build_vocab(&toks, cfg.corpus.min_count, cfg.corpus.max_size)?;
        encode_records(&mut records, &vocab);
        let cl = &cfg.clustering;
        let model = match cl.kind {
            ClusterKind::Lda => {
                let docs: Vec<Vec<u32>> = records.iter().map(|r| r.ids.clone()).collect();
                let lda = LdaConfig {
                    k: cl.k,
                    sweeps: cl.sweeps,
                    alpha: cl.alpha,
                    beta: cl.beta,
                    seed: cfg.stream_seed("lda", 0),
                };
                ClusteringModel::Lda(lda_fit(&docs, vocab.len(), &lda)?)
            }
            ClusterKind::Kmeans => {
                let table = self.embeddings(&records, &mut io)?;
                ClusteringModel::Kmeans(kmeans_fit(&table, cl.k, cl.max_iter, cfg.stream_seed("kmeans", 0))?)
            }
        };
        vocab.save(self.path(artifacts::VOCAB))?;
        io.outputs.push(self.path(artifacts::VOCAB));
        self.write_json(artifacts::CLUSTERING, &model, &mut io)?;
        save_assignments(&self.path(artifacts::ASSIGNMENTS), model.assignments())?;
        io.outputs.push(self.path(artifacts::ASSIGNMENTS));
        distance_matrix(&model)?.save(&self.path(artifacts::DISTANCES))?;
        io.outputs.push(self.path(artifacts::DISTANCES));
        let sizes = ClusterSet::from_assignments(model.kind(), model.k(), model.assignments())
            .members
            .iter()
            .map(|m| m.len().to_string())
            .collect::<Vec<_>>()
            .join(" ");
        io.summary = format!("{} sentences, vocab {}, cluster sizes [{sizes}]", records.len(), vocab.len());
        Ok(io)
    }

    fn clustering(&self, io: &mut Io) -> Result<ClusteringModel> {
        Self::read_json(&self.need(Stage::Cluster, artifacts::CLUSTERING, io)?)
    }

    fn review(&self) -> Result<Io> {
        let mut io = Io::new();
        let model = self.clustering(&mut io)?;
        let (records, vocab) = self.encoded_corpus(&mut io)?;
        let clusters = ClusterSet::from_assignments(model.kind(), model.k(), model.assignments());
        let docs: Vec<Vec<u32>> = records.iter().map(|r| r.ids.clone()).collect();
        let report = review_report(&model, &clusters, &docs, &vocab);
        self.write(artifacts::REVIEW_REPORT, report.as_bytes(), &mut io)?;
        let tops = top_tokens(&model, &clusters, &docs, &vocab, 5);
        let template = ReviewDecisions {
            decisions: tops
                .iter()
                .enumerate()
                .map(|(c, t)| ReviewDecision {
                    cluster: c,
                    keep: true,
                    note: t.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" "),
                })
                .collect(),
        };
        let p = self.path(artifacts::REVIEW_TEMPLATE);
        template.save(&p)?;
        io.outputs.push(p);
        io.summary = format!("report for {} clusters", model.k());
        Ok(io)
    }

    /// Train a probe UMT model on clusters `m → n` and score it by corpus
    /// iBLEU on the dev set.
    fn probe_score(
        &self,
        m: usize,
        n: usize,
        clusters: &ClusterSet,
        records: &[SentenceRecord],
        vocab: &Vocab,
        dev: &[(Vec<String>, Vec<String>)],
    ) -> Result<f64> {
        let cfg = &self.config;
        let side = |c: usize| -> Vec<Vec<u32>> { clusters.members[c].iter().map(|&s| records[s].ids.clone()).collect() };
        let umt = UmtTrainConfig {
            steps: cfg.pairing.probe_steps,
            init_steps: cfg.umt.init_steps.min(cfg.pairing.probe_steps),
            seed: cfg.stream_seed(&format!("probe-{m}-{n}"), cfg.umt.seed),
            ..cfg.umt
        };
        let model = train_umt(&side(m), &side(n), vocab, cfg.corpus.tokenizer, &umt)?.model;
        let triples = dev
            .iter()
            .map(|(src, reference)| {
                let out = model.translate(&encode(src, vocab), Lang::Src)?;
                Ok(EvalTriple {
                    source: src.clone(),
                    reference: reference.clone(),
                    candidate: decode(&out, vocab),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(evaluate(&triples, &cfg.metrics)?.ibleu)
    }

    fn pair(&self) -> Result<Io> {
        let mut io = Io::new();
        let cfg = &self.config;
        let model = self.clustering(&mut io)?;
        let mut clusters = ClusterSet::from_assignments(model.kind(), model.k(), model.assignments());
        if let Some(review) = &cfg.clustering.review {
            io.inputs.push(review.clone());
            clusters = apply_review(&clusters, &ReviewDecisions::load(review)?)?;
        }
        let matrix = distance_matrix(&model)?;
        let seed = cfg.stream_seed("pairing", 0);
        let plan = match cfg.pairing.strategy {
            s @ (PairingStrategy::Random | PairingStrategy::Largest | PairingStrategy::Medium | PairingStrategy::Smallest) => {
                pair_clusters(&clusters.active, &matrix, s, seed)?
            }
            s => self.pair_with_probes(s, &clusters, &matrix, &mut io)?,
        };
        plan.validate(&clusters.active)?;
        self.write_json(artifacts::CLUSTERS, &clusters, &mut io)?;
        let p = self.path(artifacts::PAIRING);
        plan.save(&p)?;
        io.outputs.push(p);
        io.summary = plan
            .pairs
            .iter()
            .map(|p| format!("{}->{}", p.src, p.tgt))
            .collect::<Vec<_>>()
            .join(" ");
        Ok(io)
    }

    fn pair_with_probes(
        &self,
        strategy: PairingStrategy,
        clusters: &ClusterSet,
        matrix: &DistanceMatrix,
        io: &mut Io,
    ) -> Result<PairingPlan> {
        let cfg = &self.config;
        let dev_path = cfg.pairing.dev.as_ref().expect("validated");
        io.inputs.push(dev_path.clone());
        let dev = load_labeled_pairs(dev_path, &cfg.corpus.tokenizer)?;
        if dev.is_empty() {
            return Err(Error::EmptyInput(format!("dev set {} is empty", dev_path.display())));
        }
        let (records, vocab) = self.encoded_corpus(io)?;
        let mut probes: Vec<(usize, usize, f64, f64)> = Vec::new();
        let plan = if strategy == PairingStrategy::Supervised {
            let mut all: Vec<(usize, usize)> = clusters
                .active
                .iter()
                .flat_map(|&m| clusters.active.iter().filter(move |&&n| n != m).map(move |&n| (m, n)))
                .collect();
            all.shuffle(&mut util::rng(cfg.stream_seed("probe-pairs", 0)));
            all.truncate(cfg.pairing.probe_pairs);
            all.sort_unstable();
            for (m, n) in all {
                let score = self.probe_score(m, n, clusters, &records, &vocab, &dev)?;
                probes.push((m, n, matrix.get(m, n), score));
            }
            let samples: Vec<(f64, f64)> = probes.iter().map(|p| (p.2, p.3)).collect();
            let f = fit_score_function(&samples, cfg.pairing.degree)?;
            self.write_json(artifacts::SCORE_FUNCTION, &f, io)?;
            pair_supervised(&clusters.active, matrix, &f)?
        } else {
            pair_exhaustive(&clusters.active, matrix, |m, n| {
                let score = self.probe_score(m, n, clusters, &records, &vocab, &dev)?;
                probes.push((m, n, matrix.get(m, n), score));
                Ok(score)
            })?
        };
        let mut tsv = String::from("src\ttgt\tdistance\tibleu\n");
        for (m, n, d, s) in &probes {
            tsv.push_str(&format!("{m}\t{n}\t{d}\t{s}\n"));
        }
        self.write(artifacts::PROBES, tsv.as_bytes(), io)?;
        Ok(plan)
    }

    fn plan_and_clusters(&self, io: &mut Io) -> Result<(PairingPlan, ClusterSet)> {
        let plan = PairingPlan::load(&self.need(Stage::Pair, artifacts::PAIRING, io)?)?;
        let clusters: ClusterSet = Self::read_json(&self.need(Stage::Pair, artifacts::CLUSTERS, io)?)?;
        Ok((plan, clusters))
    }

    fn train_umt(&self) -> Result<Io> {
        let mut io = Io::new();
        let cfg = &self.config;
        let (plan, clusters) = self.plan_and_clusters(&mut io)?;
        let (records, vocab) = self.encoded_corpus(&mut io)?;
        let side = |c: usize| -> Vec<Vec<u32>> {
            clusters.training_members(c).iter().map(|&s| records[s].ids.clone()).collect()
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.umt_workers)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
        let trained: Vec<(String, f64, f64)> = pool.install(|| {
            plan.pairs
                .par_iter()
                .enumerate()
                .map(|(i, pair)| {
                    let umt = UmtTrainConfig {
                        seed: cfg.stream_seed(&format!("umt-pair-{i}"), cfg.umt.seed),
                        ..cfg.umt
                    };
                    let out = train_umt(&side(pair.src), &side(pair.tgt), &vocab, cfg.corpus.tokenizer, &umt)?;
                    out.model.to_checkpoint()?.save(&self.path(&artifacts::umt_model(i)))?;
                    write_history(&self.path(&artifacts::umt_history(i)), &out.history)?;
                    let first = out.history.first().map_or(f64::NAN, |r| r.total);
                    let last = out.history.last().map_or(f64::NAN, |r| r.total);
                    Ok((format!("{}->{}", pair.src, pair.tgt), first, last))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for i in 0..plan.pairs.len() {
            io.outputs.push(self.path(&artifacts::umt_model(i)));
            io.outputs.push(self.path(&artifacts::umt_history(i)));
        }
        io.summary = trained
            .iter()
            .map(|(p, a, b)| format!("{p}: total {a:.3} -> {b:.3}"))
            .collect::<Vec<_>>()
            .join("; ");
        Ok(io)
    }

    fn distill(&self) -> Result<Io> {
        let mut io = Io::new();
        let (plan, clusters) = self.plan_and_clusters(&mut io)?;
        let model = self.clustering(&mut io)?;
        let (records, vocab) = self.encoded_corpus(&mut io)?;
        let table = match model {
            ClusteringModel::Kmeans(_) => Some(self.embeddings(&records, &mut io)?),
            ClusteringModel::Lda(_) => None,
        };
        let records = self.distill_sample(records);
        let mut models = BTreeMap::new();
        for (i, pair) in plan.pairs.iter().enumerate() {
            let ck = Checkpoint::load(&self.need(Stage::TrainUmt, &artifacts::umt_model(i), &mut io)?)?;
            models.insert(pair.src, (i, UmtModel::from_checkpoint(&ck)?));
        }
        let routes = records
            .iter()
            .map(|r| route(&model, &clusters.active, r, table.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let pairs = generate_pairs(&records, &routes, &models, &vocab)?;
        let p = self.path(artifacts::PAIRS);
        save_pairs(&p, &pairs)?;
        io.outputs.push(p);
        io.summary = format!("{} pseudo pairs", pairs.len());
        Ok(io)
    }

    /// Corpus-ordered subset of `round(n * sample_fraction)` records.
    fn distill_sample(&self, records: Vec<SentenceRecord>) -> Vec<SentenceRecord> {
        let f = self.config.distill.sample_fraction;
        if f >= 1.0 {
            return records;
        }
        let n = records.len();
        let take = ((n as f64 * f).round() as usize).clamp(1.min(n), n);
        let mut rng = util::rng(self.config.stream_seed("distill", 0));
        let mut keep = rand::seq::index::sample(&mut rng, n, take).into_vec();
        keep.sort_unstable();
        let mut records: Vec<Option<SentenceRecord>> = records.into_iter().map(Some).collect();
        keep.into_iter().filter_map(|i| records[i].take()).collect()
    }

    fn filter(&self) -> Result<Io> {
        let mut io = Io::new();
        let pairs = load_pairs(&self.need(Stage::Distill, artifacts::PAIRS, &mut io)?)?;
        let (kept, report) = run_filters(pairs, &self.config.filter)?;
        let p = self.path(artifacts::FILTERED);
        save_pairs(&p, &kept)?;
        io.outputs.push(p);
        let p = self.path(artifacts::FILTER_REPORT);
        report.save(&p)?;
        io.outputs.push(p);
        let drops = report
            .drops
            .iter()
            .map(|t| format!("{} {}", t.name, t.dropped))
            .collect::<Vec<_>>()
            .join(", ");
        io.summary = format!("{} in, {} kept ({drops})", report.input, report.output);
        Ok(io)
    }

    fn epochs_csv(epochs: &[EpochLog]) -> String {
        let mut s = String::from("epoch,steps,mean_loss,complete\n");
        for e in epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.steps, e.mean_loss, e.complete));
        }
        s
    }

    fn train_surrogate(&self) -> Result<Io> {
        let mut io = Io::new();
        let cfg = &self.config;
        let pairs = load_pairs(&self.need(Stage::Filter, artifacts::FILTERED, &mut io)?)?;
        let vocab = Vocab::load(self.need(Stage::Cluster, artifacts::VOCAB, &mut io)?)?;
        let raw: Vec<(Vec<String>, Vec<String>)> = pairs.into_iter().map(|p| (p.src, p.tgt)).collect();
        let data = EncodedPairs::encode(&raw, &vocab);
        if data.is_empty() {
            return Err(Error::EmptyInput("no pseudo pairs survived filtering".into()));
        }
        let train_cfg = crate::surrogate::SurrogateTrainConfig {
            seed: cfg.stream_seed("surrogate", cfg.surrogate.seed),
            ..cfg.surrogate
        };
        let out = train_surrogate(&data, cfg.corpus.tokenizer, &train_cfg)?;
        out.model.to_checkpoint()?.save(&self.path(artifacts::SURROGATE))?;
        io.outputs.push(self.path(artifacts::SURROGATE));
        self.write(artifacts::SURROGATE_EPOCHS, Self::epochs_csv(&out.epochs).as_bytes(), &mut io)?;
        let mut steps = String::from("step,loss\n");
        for (i, l) in out.history.iter().enumerate() {
            steps.push_str(&format!("{i},{l}\n"));
        }
        self.write(artifacts::SURROGATE_STEPS, steps.as_bytes(), &mut io)?;
        io.summary = format!(
            "{} pairs, {} steps, epoch loss {:.4} -> {:.4}",
            data.len(),
            out.history.len(),
            out.epochs.first().map_or(f64::NAN, |e| e.mean_loss),
            out.epochs.last().map_or(f64::NAN, |e| e.mean_loss)
        );
        Ok(io)
    }

    fn finetune(&self) -> Result<Io> {
        let mut io = Io::new();
        let cfg = &self.config;
        let data_path = cfg
            .finetune
            .data
            .as_ref()
            .ok_or_else(|| config::config_error("finetune.data", "finetuning needs a labeled pair file"))?;
        let ck = Checkpoint::load(&self.need(Stage::TrainSurrogate, artifacts::SURROGATE, &mut io)?)?;
        let model = SurrogateModel::from_checkpoint(&ck)?;
        io.inputs.push(data_path.clone());
        let raw = load_labeled_pairs(data_path, &cfg.corpus.tokenizer)?;
        let data = EncodedPairs::encode(&raw, &model.vocab);
        let train_cfg = crate::surrogate::SurrogateTrainConfig {
            seed: cfg.stream_seed("finetune", cfg.finetune.training.seed),
            ..cfg.finetune.training
        };
        let out = finetune(&model, &data, &train_cfg)?;
        out.model.to_checkpoint()?.save(&self.path(artifacts::FINETUNED))?;
        io.outputs.push(self.path(artifacts::FINETUNED));
        self.write(artifacts::FINETUNE_EPOCHS, Self::epochs_csv(&out.epochs).as_bytes(), &mut io)?;
        io.summary = format!("{} labeled pairs, {} steps", data.len(), out.history.len());
        Ok(io)
    }

    fn load_model(&self, choice: ModelChoice, io: &mut Io) -> Result<SurrogateModel> {
        let (stage, rel) = match choice {
            ModelChoice::Surrogate => (Stage::TrainSurrogate, artifacts::SURROGATE),
            ModelChoice::Finetuned => (Stage::Finetune, artifacts::FINETUNED),
        };
        SurrogateModel::from_checkpoint(&Checkpoint::load(&self.need(stage, rel, io)?)?)
    }

    fn paraphrase(&self) -> Result<Io> {
        let mut io = Io::new();
        let cfg = &self.config;
        let input = cfg
            .paraphrase
            .input
            .as_ref()
            .ok_or_else(|| config::config_error("paraphrase.input", "no input file configured"))?;
        let model = self.load_model(cfg.paraphrase.model, &mut io)?;
        io.inputs.push(input.clone());
        let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
        let lines: Vec<&str> = text.lines().collect();
        let outputs = lines
            .par_iter()
            .map(|l| {
                if l.trim().is_empty() {
                    Ok(String::new())
                } else {
                    paraphrase(&model, l, &cfg.beam)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut body = outputs.join("\n");
        body.push('\n');
        self.write(artifacts::PARAPHRASES, body.as_bytes(), &mut io)?;
        io.summary = format!("{} lines paraphrased", lines.len());
        Ok(io)
    }

    fn eval(&self) -> Result<Io> {
        let mut io = Io::new();
        let cfg = &self.config;
        let data_path = cfg
            .eval
            .data
            .as_ref()
            .ok_or_else(|| config::config_error("eval.data", "no evaluation file configured"))?;
        let model = self.load_model(cfg.eval.model, &mut io)?;
        io.inputs.push(data_path.clone());
        let mut data = load_labeled_pairs(data_path, &cfg.corpus.tokenizer)?;
        if let Some(n) = cfg.eval.limit {
            data.truncate(n);
        }
        let triples = data
            .par_iter()
            .map(|(src, reference)| {
                let out = beam_decode(&model, &encode(src, &model.vocab), &cfg.beam)?;
                Ok(EvalTriple {
                    source: src.clone(),
                    reference: reference.clone(),
                    candidate: decode(&out, &model.vocab),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let report = evaluate(&triples, &cfg.metrics)?;
        let changed = triples.iter().filter(|t| t.candidate != t.source).count();
        let summary = EvalSummary {
            n: triples.len(),
            bleu: report.bleu,
            ibleu: report.ibleu,
            rouge1: report.rouge1,
            rouge2: report.rouge2,
            changed,
            changed_fraction: changed as f64 / triples.len() as f64,
        };
        self.write_json(artifacts::EVAL_REPORT, &summary, &mut io)?;
        let mut csv = String::from("index,bleu,ibleu,rouge1,rouge2\n");
        for (i, s) in report.sentences.iter().enumerate() {
            csv.push_str(&format!("{i},{},{},{},{}\n", s.bleu, s.ibleu, s.rouge1, s.rouge2));
        }
        self.write(artifacts::EVAL_SENTENCES, csv.as_bytes(), &mut io)?;
        let mut tsv = String::from("source\treference\toutput\n");
        for t in &triples {
            tsv.push_str(&format!(
                "{}\t{}\t{}\n",
                detokenize(&t.source),
                detokenize(&t.reference),
                detokenize(&t.candidate)
            ));
        }
        self.write(artifacts::EVAL_OUTPUTS, tsv.as_bytes(), &mut io)?;
        io.summary = format!(
            "n {} BLEU {:.2} iBLEU {:.2} ROUGE-1 {:.3} ROUGE-2 {:.3} changed {:.0}%",
            summary.n,
            summary.bleu,
            summary.ibleu,
            summary.rouge1,
            summary.rouge2,
            100.0 * summary.changed_fraction
        );
        Ok(io)
    }

    fn axis_values(&self, axis: AblationAxis) -> Vec<(String, PipelineConfig)> {
        let a = &self.config.ablate;
        let base = || {
            let mut c = self.config.clone();
            c.ablate = AblateSection::default();
            c.eval.model = ModelChoice::Surrogate;
            c
        };
        match axis {
            AblationAxis::CorpusSize => a
                .corpus_size
                .iter()
                .map(|&n| {
                    let mut c = base();
                    c.corpus.limit = Some(n);
                    (n.to_string(), c)
                })
                .collect(),
            AblationAxis::TopicCount => a
                .topic_count
                .iter()
                .map(|&k| {
                    let mut c = base();
                    c.clustering.k = k;
                    (k.to_string(), c)
                })
                .collect(),
            AblationAxis::PairingStrategy => a
                .pairing_strategy
                .iter()
                .map(|&s| {
                    let mut c = base();
                    c.pairing.strategy = s;
                    (s.to_string(), c)
                })
                .collect(),
            AblationAxis::ClusteringMethod => a
                .clustering_method
                .iter()
                .map(|&m| {
                    let mut c = base();
                    c.clustering.kind = m;
                    let name = match m {
                        ClusterKind::Lda => "lda",
                        ClusterKind::Kmeans => "kmeans",
                    };
                    (name.to_string(), c)
                })
                .collect(),
        }
    }

    /// One table per axis with configured values: axis value × iBLEU.
    fn ablate(&self, axes: &[AblationAxis]) -> Result<Io> {
        let mut io = Io::new();
        if self.config.eval.data.is_none() {
            return Err(config::config_error("eval.data", "ablation scores runs on an evaluation file"));
        }
        let chosen: Vec<AblationAxis> = axes
            .iter()
            .copied()
            .filter(|&a| !self.axis_values(a).is_empty())
            .collect();
        if chosen.is_empty() {
            return Err(config::config_error("ablate", "no axis values configured"));
        }
        let mut summaries = Vec::new();
        for axis in chosen {
            let mut rows = Vec::new();
            for (value, mut c) in self.axis_values(axis) {
                c.output_dir = self.out.join(artifacts::ABLATE_DIR).join(axis.name()).join(&value);
                let run = Pipeline::new(c)?;
                run.run_all(&Stage::MAIN)?;
                let report: EvalSummary = Self::read_json(&run.path(artifacts::EVAL_REPORT))?;
                rows.push(AblationRow { value, ibleu: report.ibleu });
            }
            let mut tsv = format!("{}\tibleu\n", axis.name());
            let mut md = format!("| {} | iBLEU |\n|---|---|\n", axis.name());
            for r in &rows {
                tsv.push_str(&format!("{}\t{:.4}\n", r.value, r.ibleu));
                md.push_str(&format!("| {} | {:.2} |\n", r.value, r.ibleu));
            }
            self.write(&format!("{}/{}.tsv", artifacts::ABLATE_DIR, axis.name()), tsv.as_bytes(), &mut io)?;
            self.write(&format!("{}/{}.md", artifacts::ABLATE_DIR, axis.name()), md.as_bytes(), &mut io)?;
            summaries.push(format!("{}: {} rows", axis.name(), rows.len()));
        }
        io.summary = summaries.join("; ");
        Ok(io)
    }
}

/// Read an ablation table written by `ablate`.
pub fn load_ablation_table(path: &Path) -> Result<(String, Vec<AblationRow>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let axis = header.split('\t').next().unwrap_or_default().to_string();
    let rows = lines
        .enumerate()
        .map(|(i, l)| {
            let (v, s) = l.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: "expected two columns".into(),
            })?;
            let ibleu = s.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: format!("bad score `{s}`"),
            })?;
            Ok(AblationRow { value: v.to_string(), ibleu })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((axis, rows))
}
