use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// Sentence vectors indexed by sentence id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn get(&self, id: usize) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("d={}\n", self.dim);
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&i.to_string());
            for x in r {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        util::write_atomic(path, out.as_bytes())
    }
}

/// Parse `d=<int>` followed by `<id> <f1> ... <fd>` rows. When
/// `expected_rows` is given the ids must cover exactly `0..expected_rows`.
pub fn load_embeddings(path: impl AsRef<Path>, expected_rows: Option<usize>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty embedding file".into()))?;
    let dim: usize = header
        .trim()
        .strip_prefix("d=")
        .and_then(|d| d.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| err(1, format!("expected header `d=<int>`, found `{header}`")))?;

    let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
    for (lineno, line) in lines {
        let mut fields = line.split_whitespace();
        let id: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| err(lineno + 1, "row must start with a sentence id".into()))?;
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(lineno + 1, format!("row {id}: {e}")))?;
        if values.len() != dim {
            return Err(err(
                lineno + 1,
                format!("row {id} has {} values, header declares d={dim}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(lineno + 1, format!("row {id} has a non-finite value")));
        }
        if id >= rows.len() {
            rows.resize(id + 1, None);
        }
        if rows[id].is_some() {
            return Err(err(lineno + 1, format!("duplicate row for sentence {id}")));
        }
        rows[id] = Some(values);
    }
    if rows.is_empty() {
        return Err(err(1, "embedding file has no rows".into()));
    }
    let n = expected_rows.unwrap_or(rows.len());
    if rows.len() > n {
        return Err(Error::invalid(format!(
            "embedding row for sentence {} but the corpus has {n} sentences",
            rows.len() - 1
        )));
    }
    rows.resize(n, None);
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| Error::invalid(format!("missing embedding for sentence {i}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(EmbeddingTable { dim, rows })
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Fallback embedder: each token gets a fixed pseudo-random vector derived
/// from its hash; a sentence is the mean of its token vectors.
pub fn hashed_embeddings<S: AsRef<str>>(sentences: &[Vec<S>], dim: usize, seed: u64) -> EmbeddingTable {
    let token_vec = |t: &str| -> Vec<f64> {
        let mut rng = util::rng(fnv1a(t) ^ seed);
        (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
    };
    let rows = sentences
        .iter()
        .map(|s| {
            let mut acc = vec![0.0; dim];
            for t in s {
                for (a, x) in acc.iter_mut().zip(token_vec(t.as_ref())) {
                    *a += x;
                }
            }
            let n = s.len().max(1) as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        })
        .collect();
    EmbeddingTable { dim, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_valid_and_invalid_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        let mut s = String::from("d=4\n");
        for i in 0..10 {
            s.push_str(&format!("{i} 1 2 3 {i}\n"));
        }
        fs::write(&p, &s).unwrap();
        let t = load_embeddings(&p, Some(10)).unwrap();
        assert_eq!((t.len(), t.dim), (10, 4));
        assert!(load_embeddings(&p, Some(11)).is_err());

        fs::write(&p, "d=4\n0 1 2 3\n").unwrap();
        match load_embeddings(&p, None) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("row 0"));
            }
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&p, "").unwrap();
        assert!(load_embeddings(&p, None).is_err());
    }

    #[test]
    fn hashed_embedder_is_deterministic() {
        let s = vec![vec!["a", "b"], vec!["b", "a"], vec!["c"]];
        let a = hashed_embeddings(&s, 8, 1);
        let b = hashed_embeddings(&s, 8, 1);
        assert_eq!(a, b);
        assert_eq!(a.rows[0], a.rows[1]);
        assert_ne!(a.rows[0], a.rows[2]);
    }
}
