//! Hard K-means (Lloyd iterations) with k-means++ seeding.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after every assignment pass.
    pub sse_history: Vec<f64>,
}

pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &[Vec<f64>], x: &[f64], active: &[usize]) -> usize {
    let mut best = (usize::MAX, f64::INFINITY);
    for &c in active {
        let d = squared_l2(&centers[c], x);
        if d < best.1 || (d == best.1 && c < best.0) {
            best = (c, d);
        }
    }
    best.0
}

fn seed_centers(rows: &[Vec<f64>], k: usize, rng: &mut util::Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![rows[rng.gen_range(0..rows.len())].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| squared_l2(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = rows.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.gen_range(0..rows.len())
        };
        let c = rows[pick].clone();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(squared_l2(r, &c));
        }
        centers.push(c);
    }
    centers
}

pub fn kmeans_fit(table: &EmbeddingTable, k: usize, max_iter: usize, seed: u64) -> Result<KMeansModel> {
    let rows = &table.rows;
    if k < 1 {
        return Err(Error::invalid("K-means needs K >= 1"));
    }
    if k > rows.len() {
        return Err(Error::invalid(format!("K = {k} exceeds the {} points", rows.len())));
    }
    let mut rng = util::rng(seed);
    let mut centers = seed_centers(rows, k, &mut rng);
    let all: Vec<usize> = (0..k).collect();
    let assign = |centers: &[Vec<f64>]| -> Vec<usize> { rows.iter().map(|r| nearest(centers, r, &all)).collect() };
    let sse = |centers: &[Vec<f64>], a: &[usize]| -> f64 {
        rows.iter().zip(a).map(|(r, &c)| squared_l2(r, &centers[c])).sum()
    };

    let mut assignments = assign(&centers);
    let mut history = vec![sse(&centers, &assignments)];
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; table.dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &c) in rows.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(r) {
                *s += x;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous center
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next = assign(&centers);
        history.push(sse(&centers, &next));
        if next == assignments {
            break;
        }
        assignments = next;
    }
    if centers.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("K-means center".into()));
    }
    Ok(KMeansModel {
        k,
        centers,
        assignments,
        sse_history: history,
    })
}

/// Nearest active center under squared L2; ties go to the lowest id.
pub fn kmeans_assign(model: &KMeansModel, embedding: &[f64], active: &[usize]) -> Result<usize> {
    let dim = model.centers.first().map_or(0, Vec::len);
    if embedding.len() != dim {
        return Err(Error::shape(
            "kmeans_assign",
            format!("embedding has dimension {}, centers have {dim}", embedding.len()),
        ));
    }
    if active.is_empty() {
        return Err(Error::invalid("no active clusters to choose from"));
    }
    let mut sorted = active.to_vec();
    sorted.sort_unstable();
    Ok(nearest(&model.centers, embedding, &sorted))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(centers: Vec<Vec<f64>>) -> KMeansModel {
        KMeansModel {
            k: centers.len(),
            centers,
            assignments: vec![],
            sse_history: vec![],
        }
    }

    #[test]
    fn assign_examples() {
        let m = model(vec![vec![1.0, 0.0], vec![5.0, 0.0]]);
        assert_eq!(kmeans_assign(&m, &[0.0, 0.0], &[0, 1]).unwrap(), 0);
        assert_eq!(kmeans_assign(&m, &[5.0, 0.0], &[0, 1]).unwrap(), 1);
        let tie = model(vec![vec![1.0, 0.0], vec![3.0, 0.0]]);
        assert_eq!(kmeans_assign(&tie, &[2.0, 0.0], &[1, 0]).unwrap(), 0);
        assert!(kmeans_assign(&m, &[0.0], &[0, 1]).is_err());
    }

    #[test]
    fn identical_points_collapse_to_first_cluster() {
        let table = EmbeddingTable {
            dim: 2,
            rows: vec![vec![1.0, 1.0]; 6],
        };
        let m = kmeans_fit(&table, 2, 10, 3).unwrap();
        assert!(m.assignments.iter().all(|&c| c == 0));
        assert!(kmeans_fit(&table, 7, 10, 3).is_err());
    }
}
