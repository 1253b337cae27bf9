//! Choosing a target cluster for every source cluster.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clustering::DistanceMatrix;
use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingStrategy {
    Random,
    Largest,
    Medium,
    Smallest,
    Supervised,
    Exhaustive,
}

impl PairingStrategy {
    pub const DISTANCE_RULES: [PairingStrategy; 4] = [
        PairingStrategy::Random,
        PairingStrategy::Largest,
        PairingStrategy::Medium,
        PairingStrategy::Smallest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PairingStrategy::Random => "random",
            PairingStrategy::Largest => "largest",
            PairingStrategy::Medium => "medium",
            PairingStrategy::Smallest => "smallest",
            PairingStrategy::Supervised => "supervised",
            PairingStrategy::Exhaustive => "exhaustive",
        }
    }
}

impl fmt::Display for PairingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PairingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            PairingStrategy::Random,
            PairingStrategy::Largest,
            PairingStrategy::Medium,
            PairingStrategy::Smallest,
            PairingStrategy::Supervised,
            PairingStrategy::Exhaustive,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::invalid(format!("unknown pairing strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPair {
    pub src: usize,
    pub tgt: usize,
    pub strategy: PairingStrategy,
}

/// One target per active source cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingPlan {
    pub pairs: Vec<ClusterPair>,
}

impl PairingPlan {
    pub fn target_of(&self, src: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.src == src).map(|p| p.tgt)
    }

    pub fn targets(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.tgt).collect()
    }

    /// Every active cluster appears once as a source, never paired with itself.
    pub fn validate(&self, active: &[usize]) -> Result<()> {
        let mut srcs: Vec<usize> = self.pairs.iter().map(|p| p.src).collect();
        srcs.sort_unstable();
        let mut want = active.to_vec();
        want.sort_unstable();
        if srcs != want {
            return Err(Error::invalid("plan sources do not match the active clusters"));
        }
        for p in &self.pairs {
            if p.src == p.tgt || !active.contains(&p.tgt) {
                return Err(Error::invalid(format!("invalid pair {} -> {}", p.src, p.tgt)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&format!("{}\t{}\t{}\n", p.src, p.tgt, p.strategy));
        }
        util::write_atomic(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(parse_err(format!("expected 3 columns, found {}", cols.len())));
            }
            let id = |s: &str| s.trim().parse::<usize>().map_err(|e| parse_err(format!("bad cluster id `{s}`: {e}")));
            pairs.push(ClusterPair {
                src: id(cols[0])?,
                tgt: id(cols[1])?,
                strategy: cols[2].trim().parse().map_err(|e: Error| parse_err(e.to_string()))?,
            });
        }
        Ok(PairingPlan { pairs })
    }
}

fn check_active(active: &[usize], matrix: &DistanceMatrix) -> Result<()> {
    if active.len() < 2 {
        return Err(Error::invalid(format!("pairing needs at least 2 active clusters, found {}", active.len())));
    }
    if let Some(&c) = active.iter().find(|&&c| c >= matrix.k) {
        return Err(Error::invalid(format!("active cluster {c} outside the {}x{} distance matrix", matrix.k, matrix.k)));
    }
    Ok(())
}

/// Pick the candidate maximizing `key`, keeping the earliest (lowest id) on ties.
fn argmax_by(cands: &[usize], mut key: impl FnMut(usize) -> f64) -> usize {
    let mut best = cands[0];
    let mut best_v = key(best);
    for &c in &cands[1..] {
        let v = key(c);
        if v > best_v {
            best = c;
            best_v = v;
        }
    }
    best
}

fn candidates(active: &[usize], src: usize) -> Vec<usize> {
    let mut c: Vec<usize> = active.iter().copied().filter(|&c| c != src).collect();
    c.sort_unstable();
    c
}

/// Distance-rule pairing: uniform random, or the largest, median-by-rank
/// or smallest distance. Ties go to the lowest cluster id.
pub fn pair_clusters(
    active: &[usize],
    matrix: &DistanceMatrix,
    strategy: PairingStrategy,
    seed: u64,
) -> Result<PairingPlan> {
    check_active(active, matrix)?;
    let mut rng = util::rng(util::derive_seed(seed, "pairing"));
    let mut pairs = Vec::with_capacity(active.len());
    for &src in active {
        let cands = candidates(active, src);
        let tgt = match strategy {
            PairingStrategy::Random => cands[rng.gen_range(0..cands.len())],
            PairingStrategy::Largest => argmax_by(&cands, |c| matrix.get(src, c)),
            PairingStrategy::Smallest => argmax_by(&cands, |c| -matrix.get(src, c)),
            PairingStrategy::Medium => {
                let mut sorted = cands.clone();
                sorted.sort_by(|&a, &b| matrix.get(src, a).total_cmp(&matrix.get(src, b)).then(a.cmp(&b)));
                sorted[(sorted.len() - 1) / 2]
            }
            other => {
                return Err(Error::invalid(format!("strategy `{other}` is not a distance rule")));
            }
        };
        pairs.push(ClusterPair { src, tgt, strategy });
    }
    Ok(PairingPlan { pairs })
}

/// Polynomial `F(d) = c0 + c1 d + ... + cp d^p` from distance to score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFunction {
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub samples: usize,
}

impl ScoreFunction {
    pub fn degree(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }
}

/// Least-squares polynomial fit by Householder QR of the Vandermonde matrix.
pub fn fit_score_function(samples: &[(f64, f64)], degree: usize) -> Result<ScoreFunction> {
    let n = samples.len();
    let p = degree + 1;
    if n < p {
        return Err(Error::invalid(format!("degree {degree} fit needs at least {p} samples, got {n}")));
    }
    if samples.iter().any(|(d, s)| !d.is_finite() || !s.is_finite()) {
        return Err(Error::NonFinite("score-function sample".into()));
    }
    // Column-major design matrix.
    let mut a: Vec<Vec<f64>> = (0..p).map(|j| samples.iter().map(|&(d, _)| d.powi(j as i32)).collect()).collect();
    let mut y: Vec<f64> = samples.iter().map(|&(_, s)| s).collect();
    let scale = a.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);

    let mut diag = vec![0.0; p];
    for k in 0..p {
        let norm = a[k][k..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale.max(1.0) {
            return Err(Error::invalid("rank-deficient design matrix (distances too few or identical)"));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let reflect = |col: &mut [f64]| {
            let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= f * vi;
            }
        };
        for col in a.iter_mut().skip(k + 1) {
            reflect(&mut col[k..]);
        }
        reflect(&mut y[k..]);
    }
    let max_diag = diag.iter().map(|d| d.abs()).fold(0.0, f64::max);
    if diag.iter().any(|d| d.abs() <= 1e-12 * max_diag * n as f64) {
        return Err(Error::invalid("rank-deficient design matrix (distances too few or identical)"));
    }
    let mut coef = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = y[k];
        for j in k + 1..p {
            s -= a[j][k] * coef[j];
        }
        coef[k] = s / diag[k];
    }
    let rss = y[p..].iter().map(|r| r * r).sum();
    let f = ScoreFunction {
        coefficients: coef,
        rss,
        samples: n,
    };
    if f.coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("fitted coefficient".into()));
    }
    Ok(f)
}

pub fn predict_score(f: &ScoreFunction, distance: f64) -> f64 {
    f.coefficients.iter().rev().fold(0.0, |acc, &c| acc * distance + c)
}

/// Per source, the target with the highest predicted score.
pub fn pair_supervised(active: &[usize], matrix: &DistanceMatrix, f: &ScoreFunction) -> Result<PairingPlan> {
    check_active(active, matrix)?;
    let pairs = active
        .iter()
        .map(|&src| ClusterPair {
            src,
            tgt: argmax_by(&candidates(active, src), |c| predict_score(f, matrix.get(src, c))),
            strategy: PairingStrategy::Supervised,
        })
        .collect();
    Ok(PairingPlan { pairs })
}

pub const EXHAUSTIVE_MAX_K: usize = 8;

/// Score every ordered pair through `evaluate` and keep the best target
/// per source. Only for toy runs with at most eight active clusters.
pub fn pair_exhaustive<F>(active: &[usize], matrix: &DistanceMatrix, mut evaluate: F) -> Result<PairingPlan>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    check_active(active, matrix)?;
    if active.len() > EXHAUSTIVE_MAX_K {
        return Err(Error::invalid(format!(
            "exhaustive pairing is limited to {EXHAUSTIVE_MAX_K} clusters, got {}",
            active.len()
        )));
    }
    let mut pairs = Vec::with_capacity(active.len());
    for &src in active {
        let cands = candidates(active, src);
        let mut scores = Vec::with_capacity(cands.len());
        for &c in &cands {
            scores.push(evaluate(src, c)?);
        }
        let best = argmax_by(&(0..cands.len()).collect::<Vec<_>>(), |i| scores[i]);
        pairs.push(ClusterPair {
            src,
            tgt: cands[best],
            strategy: PairingStrategy::Exhaustive,
        });
    }
    Ok(PairingPlan { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three() -> DistanceMatrix {
        DistanceMatrix::from_rows(vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 2.0], vec![5.0, 2.0, 0.0]]).unwrap()
    }

    #[test]
    fn distance_rules_on_three_clusters() {
        let m = three();
        let act = [0, 1, 2];
        let plan = |s| pair_clusters(&act, &m, s, 0).unwrap().targets();
        assert_eq!(plan(PairingStrategy::Largest), vec![2, 2, 0]);
        assert_eq!(plan(PairingStrategy::Smallest), vec![1, 0, 1]);
        assert_eq!(plan(PairingStrategy::Medium), vec![1, 0, 1]);
        let r = pair_clusters(&act, &m, PairingStrategy::Random, 7).unwrap();
        assert_eq!(r, pair_clusters(&act, &m, PairingStrategy::Random, 7).unwrap());
        r.validate(&act).unwrap();
    }

    #[test]
    fn too_few_clusters() {
        assert!(pair_clusters(&[1], &three(), PairingStrategy::Largest, 0).is_err());
    }

    #[test]
    fn horner_and_constant_fit() {
        let f = ScoreFunction {
            coefficients: vec![1.0, 2.0, 3.0],
            rss: 0.0,
            samples: 3,
        };
        assert_eq!(predict_score(&f, 0.0), 1.0);
        assert_eq!(predict_score(&f, 2.0), 17.0);
        let c = fit_score_function(&[(0.1, 5.0), (0.4, 5.0), (0.9, 5.0)], 0).unwrap();
        assert!((predict_score(&c, 123.0) - 5.0).abs() < 1e-12);
        assert!(fit_score_function(&[(0.1, 1.0), (0.2, 2.0)], 2).is_err());
        assert!(fit_score_function(&[(0.3, 1.0), (0.3, 2.0), (0.3, 3.0)], 1).is_err());
    }

    #[test]
    fn plan_file_round_trip() {
        let plan = pair_clusters(&[0, 1, 2], &three(), PairingStrategy::Medium, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.tsv");
        plan.save(&path).unwrap();
        assert_eq!(PairingPlan::load(&path).unwrap(), plan);
    }

    #[test]
    fn exhaustive_uses_callback_scores() {
        let plan = pair_exhaustive(&[0, 1, 2], &three(), |s, t| Ok(-((s as f64) - (t as f64)).abs())).unwrap();
        assert_eq!(plan.targets(), vec![1, 0, 1]);
        let big = DistanceMatrix::from_rows(vec![vec![0.0; 9]; 9]).unwrap();
        let act: Vec<usize> = (0..9).collect();
        assert!(pair_exhaustive(&act, &big, |_, _| Ok(0.0)).is_err());
    }
}
