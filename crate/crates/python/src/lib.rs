//! Python bindings: tokenization, vocabularies, metrics, clustering,
//! filters, pairing, fixtures, the surrogate paraphraser and the pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use paraumt_core::clustering::{self as cl, ClusteringModel, EmbeddingTable, LdaConfig};
use paraumt_core::corpus::{self, TokenizerConfig};
use paraumt_core::metrics::{self, EvalTriple, MetricConfig, RougeMode, Smoothing};
use paraumt_core::nn::Checkpoint;
use paraumt_core::pairing::{self, PairingStrategy, ScoreFunction};
use paraumt_core::pipeline::{self as pl, PipelineConfig, Profile, Stage};
use paraumt_core::pseudo::{self, FilterEntry, FilterSpec, ParaphrasePair};
use paraumt_core::surrogate::{self, BeamConfig, SurrogateModel};
use paraumt_core::{fixtures, Error};

create_exception!(paraumt, ParaumtError, PyException);
create_exception!(paraumt, ConfigError, ParaumtError);
create_exception!(paraumt, MissingArtifactError, ParaumtError);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::UnknownFilter(_) => ConfigError::new_err(e.to_string()),
        Error::MissingArtifact { .. } => MissingArtifactError::new_err(e.to_string()),
        other => ParaumtError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for paraumt_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyfunction]
#[pyo3(signature = (text, lowercase = true, split_punctuation = true))]
fn tokenize(text: &str, lowercase: bool, split_punctuation: bool) -> Vec<String> {
    corpus::tokenize(text, &TokenizerConfig { lowercase, split_punctuation })
}

#[pyclass(module = "paraumt")]
struct Vocab {
    inner: corpus::Vocab,
}

#[pymethods]
impl Vocab {
    #[staticmethod]
    #[pyo3(signature = (sentences, min_count = 1, max_size = 30000))]
    fn build(sentences: Vec<Vec<String>>, min_count: u64, max_size: usize) -> PyResult<Self> {
        Ok(Vocab { inner: corpus::build_vocab(&sentences, min_count, max_size).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Vocab { inner: corpus::Vocab::load(path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, token: &str) -> bool {
        self.inner.contains(token)
    }

    fn index(&self, token: &str) -> u32 {
        self.inner.index(token)
    }

    fn lookup(&self, id: u32) -> PyResult<String> {
        if (id as usize) >= self.inner.len() {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!("id {id} out of range")));
        }
        Ok(self.inner.lookup(id).to_string())
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    fn encode(&self, tokens: Vec<String>) -> Vec<u32> {
        corpus::encode(&tokens, &self.inner)
    }

    fn decode(&self, ids: Vec<u32>) -> Vec<String> {
        corpus::decode(&ids, &self.inner)
    }
}

fn metric_config(max_order: usize, smoothing: bool, alpha: f64) -> PyResult<MetricConfig> {
    let cfg = MetricConfig {
        max_order,
        smoothing: if smoothing { Smoothing::AddOneOnZero } else { Smoothing::None },
        alpha,
        ..MetricConfig::default()
    };
    cfg.validate().py()?;
    Ok(cfg)
}

fn rouge_mode(mode: &str) -> PyResult<RougeMode> {
    match mode {
        "recall" => Ok(RougeMode::Recall),
        "f1" => Ok(RougeMode::F1),
        other => Err(pyo3::exceptions::PyValueError::new_err(format!("unknown ROUGE mode `{other}`"))),
    }
}

#[pyfunction]
#[pyo3(signature = (candidate, references, max_order = 4, smoothing = true))]
fn bleu(candidate: Vec<String>, references: Vec<Vec<String>>, max_order: usize, smoothing: bool) -> PyResult<f64> {
    Ok(metrics::bleu(&candidate, &references, &metric_config(max_order, smoothing, 0.8)?))
}

#[pyfunction]
#[pyo3(signature = (source, reference, candidate, alpha = 0.8, max_order = 4, smoothing = true))]
fn ibleu(
    source: Vec<String>,
    reference: Vec<String>,
    candidate: Vec<String>,
    alpha: f64,
    max_order: usize,
    smoothing: bool,
) -> PyResult<f64> {
    Ok(metrics::ibleu(&source, &reference, &candidate, &metric_config(max_order, smoothing, alpha)?))
}

/// Returns `(score, degenerate)`.
#[pyfunction]
#[pyo3(signature = (candidate, reference, n, mode = "recall"))]
fn rouge_n(candidate: Vec<String>, reference: Vec<String>, n: usize, mode: &str) -> PyResult<(f64, bool)> {
    let r = metrics::rouge_n(&candidate, &reference, n, rouge_mode(mode)?);
    Ok((r.score, r.degenerate))
}

/// `triples` holds `(source, reference, candidate)` token lists.
#[pyfunction]
#[pyo3(signature = (triples, alpha = 0.8, max_order = 4, rouge = "recall"))]
fn evaluate<'py>(
    py: Python<'py>,
    triples: Vec<(Vec<String>, Vec<String>, Vec<String>)>,
    alpha: f64,
    max_order: usize,
    rouge: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = MetricConfig { rouge_mode: rouge_mode(rouge)?, ..metric_config(max_order, true, alpha)? };
    let triples: Vec<EvalTriple> = triples
        .into_iter()
        .map(|(source, reference, candidate)| EvalTriple { source, reference, candidate })
        .collect();
    let r = metrics::evaluate(&triples, &cfg).py()?;
    let d = PyDict::new(py);
    d.set_item("bleu", r.bleu)?;
    d.set_item("ibleu", r.ibleu)?;
    d.set_item("rouge1", r.rouge1)?;
    d.set_item("rouge2", r.rouge2)?;
    Ok(d)
}

#[pyfunction]
fn symmetric_kl(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    cl::symmetric_kl(&p, &q).py()
}

#[pyclass(module = "paraumt")]
struct TopicModel {
    inner: cl::TopicModel,
}

#[pymethods]
impl TopicModel {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn assignments(&self) -> Vec<usize> {
        self.inner.assignments.clone()
    }

    #[getter]
    fn phi(&self) -> Vec<Vec<f64>> {
        self.inner.phi.clone()
    }

    #[pyo3(signature = (sentence, active = None))]
    fn assign(&self, sentence: Vec<u32>, active: Option<Vec<usize>>) -> PyResult<usize> {
        let active = active.unwrap_or_else(|| (0..self.inner.k).collect());
        cl::lda_assign(&self.inner, &sentence, &active).py()
    }

    fn distance(&self, m: usize, n: usize) -> PyResult<f64> {
        cl::cluster_distance(&ClusteringModel::Lda(self.inner.clone()), m, n).py()
    }

    fn distance_matrix(&self) -> PyResult<Vec<Vec<f64>>> {
        let dm = cl::distance_matrix(&ClusteringModel::Lda(self.inner.clone())).py()?;
        Ok(dm.values.chunks(dm.k).map(<[f64]>::to_vec).collect())
    }
}

#[pyfunction]
#[pyo3(signature = (docs, vocab_size, k, sweeps = 5, alpha = 0.1, beta = 0.01, seed = 0))]
fn lda_fit(
    py: Python<'_>,
    docs: Vec<Vec<u32>>,
    vocab_size: usize,
    k: usize,
    sweeps: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
) -> PyResult<TopicModel> {
    let cfg = LdaConfig { k, sweeps, alpha, beta, seed };
    let inner = py.detach(|| cl::lda_fit(&docs, vocab_size, &cfg)).py()?;
    Ok(TopicModel { inner })
}

#[pyclass(module = "paraumt")]
struct KMeansModel {
    inner: cl::KMeansModel,
}

#[pymethods]
impl KMeansModel {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn assignments(&self) -> Vec<usize> {
        self.inner.assignments.clone()
    }

    #[getter]
    fn centers(&self) -> Vec<Vec<f64>> {
        self.inner.centers.clone()
    }

    #[getter]
    fn sse_history(&self) -> Vec<f64> {
        self.inner.sse_history.clone()
    }

    #[pyo3(signature = (embedding, active = None))]
    fn assign(&self, embedding: Vec<f64>, active: Option<Vec<usize>>) -> PyResult<usize> {
        let active = active.unwrap_or_else(|| (0..self.inner.k).collect());
        cl::kmeans_assign(&self.inner, &embedding, &active).py()
    }
}

#[pyfunction]
#[pyo3(signature = (rows, k, max_iter = 100, seed = 0))]
fn kmeans_fit(rows: Vec<Vec<f64>>, k: usize, max_iter: usize, seed: u64) -> PyResult<KMeansModel> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(pyo3::exceptions::PyValueError::new_err("embedding rows differ in width"));
    }
    let table = EmbeddingTable { dim, rows };
    Ok(KMeansModel { inner: cl::kmeans_fit(&table, k, max_iter, seed).py()? })
}

/// `pairs` holds `(source, target)` token lists. Returns the kept pairs
/// and a report `{"input", "output", "drops": {name: count}}`.
#[pyfunction]
#[pyo3(signature = (pairs, predicates = vec!["identity".to_string(), "length-ratio".to_string()], max_ratio = 2.0))]
fn run_filters<'py>(
    py: Python<'py>,
    pairs: Vec<(Vec<String>, Vec<String>)>,
    predicates: Vec<String>,
    max_ratio: f64,
) -> PyResult<(Vec<(Vec<String>, Vec<String>)>, Bound<'py, PyDict>)> {
    let spec = FilterSpec {
        predicates: predicates
            .into_iter()
            .map(|name| {
                let max_ratio = (name == pseudo::LENGTH_RATIO).then_some(max_ratio);
                FilterEntry { name, max_ratio }
            })
            .collect(),
    };
    let pairs = pairs
        .into_iter()
        .enumerate()
        .map(|(id, (src, tgt))| ParaphrasePair { id, src, tgt, cluster: 0, model: 0 })
        .collect();
    let (kept, report) = pseudo::run_filters(pairs, &spec).py()?;
    let d = PyDict::new(py);
    d.set_item("input", report.input)?;
    d.set_item("output", report.output)?;
    let drops: BTreeMap<String, usize> = report.drops.into_iter().map(|t| (t.name, t.dropped)).collect();
    d.set_item("drops", drops)?;
    Ok((kept.into_iter().map(|p| (p.src, p.tgt)).collect(), d))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<cl::DistanceMatrix> {
    cl::DistanceMatrix::from_rows(rows).py()
}

/// Returns `(src, tgt)` pairs for one of random, largest, medium, smallest.
#[pyfunction]
#[pyo3(signature = (active, distances, strategy, seed = 0))]
fn pair_clusters(active: Vec<usize>, distances: Vec<Vec<f64>>, strategy: &str, seed: u64) -> PyResult<Vec<(usize, usize)>> {
    let s: PairingStrategy = strategy.parse().py()?;
    let plan = pairing::pair_clusters(&active, &matrix(distances)?, s, seed).py()?;
    Ok(plan.pairs.iter().map(|p| (p.src, p.tgt)).collect())
}

/// Least-squares polynomial from `(distance, score)` samples. Returns
/// `(coefficients, rss)` with the constant term first.
#[pyfunction]
#[pyo3(signature = (samples, degree = 2))]
fn fit_score_function(samples: Vec<(f64, f64)>, degree: usize) -> PyResult<(Vec<f64>, f64)> {
    let f = pairing::fit_score_function(&samples, degree).py()?;
    Ok((f.coefficients, f.rss))
}

#[pyfunction]
fn pair_supervised(active: Vec<usize>, distances: Vec<Vec<f64>>, coefficients: Vec<f64>) -> PyResult<Vec<(usize, usize)>> {
    let f = ScoreFunction { samples: coefficients.len(), coefficients, rss: 0.0 };
    let plan = pairing::pair_supervised(&active, &matrix(distances)?, &f).py()?;
    Ok(plan.pairs.iter().map(|p| (p.src, p.tgt)).collect())
}

/// Writes the four-dialect pipeline fixture and returns its file paths.
#[pyfunction]
#[pyo3(signature = (dir, seed = 0))]
fn write_pipeline_fixture(dir: PathBuf, seed: u64) -> PyResult<BTreeMap<&'static str, PathBuf>> {
    let f = fixtures::write_pipeline_fixture(&dir, seed).py()?;
    Ok([
        ("corpus", f.corpus),
        ("labels", f.labels),
        ("test", f.test),
        ("test_sources", f.test_sources),
        ("labeled", f.labeled),
        ("config", f.config),
    ]
    .into_iter()
    .collect())
}

#[pyclass(module = "paraumt")]
struct Surrogate {
    inner: SurrogateModel,
}

#[pymethods]
impl Surrogate {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).py()?;
        Ok(Surrogate { inner: SurrogateModel::from_checkpoint(&ck).py()? })
    }

    #[pyo3(signature = (text, width = 4, length_penalty = 0.6, max_len = None))]
    fn paraphrase(&self, py: Python<'_>, text: &str, width: usize, length_penalty: f64, max_len: Option<usize>) -> PyResult<String> {
        let beam = BeamConfig { width, length_penalty, max_len };
        beam.validate().py()?;
        py.detach(|| surrogate::paraphrase(&self.inner, text, &beam)).py()
    }

    fn vocab(&self) -> Vocab {
        Vocab { inner: self.inner.vocab.clone() }
    }
}

#[pyclass(module = "paraumt")]
struct Pipeline {
    inner: pl::Pipeline,
}

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (config, out = None, seed = None, profile = None))]
    fn new(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>, profile: Option<&str>) -> PyResult<Self> {
        let profile = profile.map(str::parse::<Profile>).transpose().py()?;
        let mut cfg = PipelineConfig::load(&config, profile).py()?;
        if let Some(out) = out {
            cfg.output_dir = out;
        }
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        Ok(Pipeline { inner: pl::Pipeline::new(cfg).py()? })
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.inner.out_dir().to_path_buf()
    }

    /// Runs one stage and returns its summary line.
    fn run(&self, py: Python<'_>, stage: &str) -> PyResult<String> {
        let stage: Stage = stage.parse().py()?;
        Ok(py.detach(|| self.inner.run(stage)).py()?.summary)
    }

    /// cluster, pair, train-umt, distill, filter, train-surrogate, eval.
    fn run_all(&self, py: Python<'_>) -> PyResult<Vec<String>> {
        let outcomes = py.detach(|| self.inner.run_all(&Stage::MAIN)).py()?;
        Ok(outcomes.into_iter().map(|o| format!("{}: {}", o.stage, o.summary)).collect())
    }

    /// Stage name → artifact path → sha256, from the manifest.
    fn artifacts(&self) -> PyResult<BTreeMap<String, String>> {
        let path = self.inner.path(pl::MANIFEST_FILE);
        let bytes = std::fs::read(&path).map_err(|e| ParaumtError::new_err(format!("{}: {e}", path.display())))?;
        let m: pl::Manifest = serde_json::from_slice(&bytes).map_err(|e| ParaumtError::new_err(e.to_string()))?;
        Ok(m.artifacts())
    }
}

#[pymodule]
fn paraumt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ParaumtError", m.py().get_type::<ParaumtError>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("MissingArtifactError", m.py().get_type::<MissingArtifactError>())?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(ibleu, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_n, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(symmetric_kl, m)?)?;
    m.add_function(wrap_pyfunction!(lda_fit, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans_fit, m)?)?;
    m.add_function(wrap_pyfunction!(run_filters, m)?)?;
    m.add_function(wrap_pyfunction!(pair_clusters, m)?)?;
    m.add_function(wrap_pyfunction!(fit_score_function, m)?)?;
    m.add_function(wrap_pyfunction!(pair_supervised, m)?)?;
    m.add_function(wrap_pyfunction!(write_pipeline_fixture, m)?)?;
    m.add_class::<Vocab>()?;
    m.add_class::<TopicModel>()?;
    m.add_class::<KMeansModel>()?;
    m.add_class::<Surrogate>()?;
    m.add_class::<Pipeline>()?;
    Ok(())
}
