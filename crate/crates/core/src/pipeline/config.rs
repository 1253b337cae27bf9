//! Pipeline configuration: one TOML file layered over a named profile.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterKind;
use crate::corpus::{CorpusFormat, TokenizerConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::nn::{AdamConfig, TransformerConfig};
use crate::pairing::PairingStrategy;
use crate::pseudo::FilterSpec;
use crate::surrogate::{BeamConfig, SurrogateTrainConfig};
use crate::umt::{InitMode, UmtArch, UmtTrainConfig};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(config_error("profile", format!("unknown profile `{other}` (expected paper or desk)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSection {
    pub path: PathBuf,
    pub format: CorpusFormat,
    pub tokenizer: TokenizerConfig,
    pub min_count: u64,
    pub max_size: usize,
    /// Keep only the first `limit` sentences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSection {
    pub kind: ClusterKind,
    pub k: usize,
    pub sweeps: usize,
    pub alpha: f64,
    pub beta: f64,
    pub max_iter: usize,
    /// Embedding file for K-means. Without one, hashed bag-of-words
    /// embeddings of width `hashed_dim` are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub hashed_dim: usize,
    /// Review decisions TSV applied before pairing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingSection {
    pub strategy: PairingStrategy,
    /// Labeled dev set scoring probe models for `supervised` and `exhaustive`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    pub degree: usize,
    pub probe_pairs: usize,
    pub probe_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Surrogate,
    Finetuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillSection {
    /// Share of the corpus, sampled without replacement, that is turned into pseudo pairs.
    pub sample_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub training: SurrogateTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    pub model: ModelChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    /// `source \t reference` TSV or JSONL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub model: ModelChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblateSection {
    pub corpus_size: Vec<usize>,
    pub topic_count: Vec<usize>,
    pub pairing_strategy: Vec<PairingStrategy>,
    pub clustering_method: Vec<ClusterKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub umt_workers: usize,
    pub corpus: CorpusSection,
    pub clustering: ClusteringSection,
    pub pairing: PairingSection,
    pub umt: UmtTrainConfig,
    pub distill: DistillSection,
    pub filter: FilterSpec,
    pub surrogate: SurrogateTrainConfig,
    pub finetune: FinetuneSection,
    pub beam: BeamConfig,
    pub metrics: MetricConfig,
    pub paraphrase: ParaphraseSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

pub(crate) fn config_error(field: impl Into<String>, message: impl fmt::Display) -> Error {
    Error::Config {
        field: field.into(),
        message: message.to_string(),
    }
}

fn within(field: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => config_error(field, other),
    })
}

impl PipelineConfig {
    /// Full-scale hyperparameters.
    pub fn paper() -> Self {
        let arch = TransformerConfig::paper();
        PipelineConfig {
            profile: Profile::Paper,
            seed: 0,
            output_dir: PathBuf::from("out"),
            umt_workers: 4,
            corpus: CorpusSection {
                path: PathBuf::from("corpus.txt"),
                format: CorpusFormat::Lines,
                tokenizer: TokenizerConfig::default(),
                min_count: 2,
                max_size: 30000,
                limit: None,
            },
            clustering: ClusteringSection {
                kind: ClusterKind::Lda,
                k: 80,
                sweeps: 5,
                alpha: 0.1,
                beta: 0.01,
                max_iter: 100,
                embeddings: None,
                hashed_dim: 64,
                review: None,
            },
            pairing: PairingSection {
                strategy: PairingStrategy::Largest,
                dev: None,
                degree: 2,
                probe_pairs: 8,
                probe_steps: 1000,
            },
            umt: UmtTrainConfig {
                arch: UmtArch {
                    transformer: arch,
                    disc_hidden: 64,
                },
                ..UmtTrainConfig::default()
            },
            distill: DistillSection { sample_fraction: 1.0 },
            filter: FilterSpec::default(),
            surrogate: SurrogateTrainConfig {
                arch,
                ..SurrogateTrainConfig::default()
            },
            finetune: FinetuneSection {
                data: None,
                training: SurrogateTrainConfig {
                    arch,
                    ..SurrogateTrainConfig::finetune()
                },
            },
            beam: BeamConfig::default(),
            metrics: MetricConfig::default(),
            paraphrase: ParaphraseSection {
                input: None,
                model: ModelChoice::Surrogate,
            },
            eval: EvalSection {
                data: None,
                model: ModelChoice::Surrogate,
                limit: None,
            },
            ablate: AblateSection::default(),
        }
    }

    /// Miniature models and short schedules that run on one CPU core.
    pub fn desk() -> Self {
        let arch = TransformerConfig {
            d_model: 32,
            d_ff: 64,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
        };
        let mut c = PipelineConfig::paper();
        c.profile = Profile::Desk;
        c.umt_workers = 2;
        c.clustering.k = 4;
        c.clustering.sweeps = 50;
        c.pairing.probe_pairs = 4;
        c.pairing.probe_steps = 200;
        c.umt = UmtTrainConfig {
            arch: UmtArch {
                transformer: arch,
                disc_hidden: 32,
            },
            steps: 1000,
            batch_size: 8,
            lr: 0.003,
            init: InitMode::WordByWord,
            init_steps: 500,
            ..UmtTrainConfig::default()
        };
        c.surrogate = SurrogateTrainConfig {
            arch,
            steps: 1000,
            epochs: None,
            batch_size: 16,
            optimizer: AdamConfig {
                lr: 0.002,
                warmup_steps: 100,
                ..AdamConfig::default()
            },
            seed: 0,
        };
        c.finetune.training = SurrogateTrainConfig {
            steps: 200,
            batch_size: 16,
            optimizer: AdamConfig {
                lr: 0.001,
                beta2: 0.98,
                ..AdamConfig::default()
            },
            ..c.surrogate
        };
        c
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => PipelineConfig::paper(),
            Profile::Desk => PipelineConfig::desk(),
        }
    }

    /// Parse TOML text layered over a profile. The profile is taken from
    /// `profile_override`, else the file's `profile` key, else `desk`.
    /// Relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, profile_override: Option<Profile>, base_dir: &Path) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            config_error("<file>", msg)
        })?;
        let profile = match profile_override {
            Some(p) => p,
            None => match user.get("profile") {
                Some(toml::Value::String(s)) => s.parse()?,
                Some(_) => return Err(config_error("profile", "expected a string")),
                None => Profile::Desk,
            },
        };
        let base = toml::Table::try_from(PipelineConfig::for_profile(profile))
            .map_err(|e| config_error("<profile>", e))?;
        let mut merged = base;
        merge(&mut merged, user);
        merged.insert("profile".into(), toml::Value::String(profile.to_string()));

        let mut unknown = Vec::new();
        let checked: std::result::Result<PipelineConfig, _> =
            serde_ignored::deserialize(toml::Value::Table(merged.clone()), |p| unknown.push(p.to_string()));
        if let Some(field) = unknown.into_iter().next() {
            return Err(config_error(field, "unknown key"));
        }
        let mut cfg: PipelineConfig = match checked {
            Ok(c) => c,
            Err(_) => serde_path_to_error::deserialize(toml::Value::Table(merged))
                .map_err(|e| config_error(e.path().to_string(), e.inner().message()))?,
        };
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path, profile_override: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error("<file>", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::from_toml_str(&text, profile_override, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus.path);
        fix(&mut self.output_dir);
        for p in [
            &mut self.clustering.embeddings,
            &mut self.clustering.review,
            &mut self.pairing.dev,
            &mut self.finetune.data,
            &mut self.paraphrase.input,
            &mut self.eval.data,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Check ranges and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        let exists = |field: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(config_error(field, format!("file {} does not exist", p.display())))
            }
        };
        exists("corpus.path", &self.corpus.path)?;
        let optional = [
            ("clustering.embeddings", &self.clustering.embeddings),
            ("clustering.review", &self.clustering.review),
            ("pairing.dev", &self.pairing.dev),
            ("finetune.data", &self.finetune.data),
            ("paraphrase.input", &self.paraphrase.input),
            ("eval.data", &self.eval.data),
        ];
        for (field, p) in optional {
            if let Some(p) = p {
                exists(field, p)?;
            }
        }
        if self.corpus.min_count < 1 {
            return Err(config_error("corpus.min_count", "must be at least 1"));
        }
        if self.corpus.max_size < crate::corpus::NUM_SPECIALS {
            return Err(config_error("corpus.max_size", "must be at least 4"));
        }
        if self.corpus.limit == Some(0) {
            return Err(config_error("corpus.limit", "must be positive"));
        }
        if self.clustering.k < 2 {
            return Err(config_error("clustering.k", format!("K = {} but at least 2 clusters are required", self.clustering.k)));
        }
        if self.clustering.sweeps < 1 {
            return Err(config_error("clustering.sweeps", "must be at least 1"));
        }
        if !(self.clustering.alpha > 0.0 && self.clustering.beta > 0.0) {
            return Err(config_error("clustering.alpha", "alpha and beta must be positive"));
        }
        if self.clustering.max_iter < 1 {
            return Err(config_error("clustering.max_iter", "must be at least 1"));
        }
        if self.clustering.hashed_dim < 1 {
            return Err(config_error("clustering.hashed_dim", "must be at least 1"));
        }
        if self.umt_workers < 1 {
            return Err(config_error("umt_workers", "must be at least 1"));
        }
        if matches!(self.pairing.strategy, PairingStrategy::Supervised | PairingStrategy::Exhaustive)
            && self.pairing.dev.is_none()
        {
            return Err(config_error(
                "pairing.dev",
                format!("strategy `{}` needs a labeled dev set", self.pairing.strategy),
            ));
        }
        if self.pairing.strategy == PairingStrategy::Supervised && self.pairing.probe_pairs < self.pairing.degree + 1 {
            return Err(config_error(
                "pairing.probe_pairs",
                format!("a degree-{} fit needs at least {} probes", self.pairing.degree, self.pairing.degree + 1),
            ));
        }
        if self.pairing.probe_steps < 1 {
            return Err(config_error("pairing.probe_steps", "must be at least 1"));
        }
        let f = self.distill.sample_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(config_error("distill.sample_fraction", format!("{f} is outside (0, 1]")));
        }
        within("umt", self.umt.validate())?;
        within("filter.predicates", self.filter.validate())?;
        within("surrogate", self.surrogate.validate())?;
        within("finetune.training", self.finetune.training.validate())?;
        within("beam", self.beam.validate())?;
        within("metrics", self.metrics.validate())?;
        if self.ablate.topic_count.iter().any(|&k| k < 2) {
            return Err(config_error("ablate.topic_count", "every topic count must be at least 2"));
        }
        if self.ablate.corpus_size.contains(&0) {
            return Err(config_error("ablate.corpus_size", "corpus sizes must be positive"));
        }
        Ok(())
    }

    /// Seed for one stream of randomness. Nested `seed` keys perturb it.
    pub fn stream_seed(&self, tag: &str, nested: u64) -> u64 {
        util::derive_seed(self.seed, tag) ^ nested
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

/// Overlay `user` onto `base`, recursing into tables; other values replace.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_carry_reference_hyperparameters() {
        let p = PipelineConfig::paper();
        assert_eq!(p.clustering.k, 80);
        assert_eq!(p.clustering.sweeps, 5);
        assert_eq!(p.umt.lr, 0.00025);
        assert_eq!(p.surrogate.optimizer.warmup_steps, 4000);
        assert_eq!(p.surrogate.batch_size, 256);
        assert_eq!(p.metrics.alpha, 0.8);
        assert_eq!(p.surrogate.arch, TransformerConfig::paper());
        assert_eq!(p.finetune.training.optimizer.beta2, 0.98);
        assert_eq!(PipelineConfig::desk().clustering.k, 4);
    }

    #[test]
    fn overlay_and_paths() {
        let c = PipelineConfig::from_toml_str(
            "seed = 7\n[corpus]\npath = \"c.txt\"\n[clustering]\nk = 3\n",
            None,
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(c.profile, Profile::Desk);
        assert_eq!(c.seed, 7);
        assert_eq!(c.clustering.k, 3);
        assert_eq!(c.clustering.sweeps, 50);
        assert_eq!(c.corpus.path, PathBuf::from("/base/c.txt"));
        let p = PipelineConfig::from_toml_str("profile = \"paper\"", None, Path::new(".")).unwrap();
        assert_eq!(p.clustering.k, 80);
        let d = PipelineConfig::from_toml_str("profile = \"paper\"", Some(Profile::Desk), Path::new(".")).unwrap();
        assert_eq!(d.clustering.k, 4);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let field = |text: &str| match PipelineConfig::from_toml_str(text, None, Path::new(".")) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field("[umt.arch.transformer]\nd_model = \"big\""), "umt.arch.transformer.d_model");
        assert_eq!(field("[clustering]\nkk = 3"), "clustering.kk");
        assert_eq!(field("[pairing]\nstrategy = \"closest\""), "pairing.strategy");
        assert_eq!(field("profile = \"huge\""), "profile");
    }

    #[test]
    fn validation_ranges() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("c.txt");
        std::fs::write(&corpus, "a b\n").unwrap();
        let mut c = PipelineConfig::desk();
        c.corpus.path = corpus;
        c.validate().unwrap();
        let field = |c: &PipelineConfig| match c.validate() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        let mut bad = c.clone();
        bad.clustering.k = 1;
        assert_eq!(field(&bad), "clustering.k");
        let mut bad = c.clone();
        bad.eval.data = Some(dir.path().join("missing.tsv"));
        assert_eq!(field(&bad), "eval.data");
        let mut bad = c.clone();
        bad.filter.predicates[0].name = "shouting".into();
        assert_eq!(field(&bad), "filter.predicates");
        let mut bad = c.clone();
        bad.pairing.strategy = PairingStrategy::Supervised;
        assert_eq!(field(&bad), "pairing.dev");
        let mut bad = c;
        bad.corpus.path = dir.path().join("nope.txt");
        assert_eq!(field(&bad), "corpus.path");
    }
}
