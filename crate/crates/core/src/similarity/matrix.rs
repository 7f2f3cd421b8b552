use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusKind;

use super::SimilarityError;

const MAGIC: &[u8; 8] = b"SIMX\0\0\0\x01";

/// Dense symmetric pairwise scores in `[0, 1]` with a unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    engine_tag: String,
    corpus_kind: Option<CorpusKind>,
    n: usize,
    /// Row-major, `n * n` entries.
    scores: Vec<f64>,
}

/// One broken matrix invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Asymmetric { i: usize, j: usize },
    Diagonal { i: usize, value: f64 },
    OutOfRange { i: usize, j: usize, value: f64 },
}

impl SimilarityMatrix {
    /// Build from a pair scorer evaluated once per unordered pair `i < j`.
    ///
    /// Scores are clamped to `[0, 1]`, mirrored, and the diagonal is set to 1.
    pub fn from_pair_fn<F>(n: usize, engine_tag: impl Into<String>, score: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        use rayon::prelude::*;

        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| ((i + 1)..n).map(|j| clamp_unit(score(i, j))).collect())
            .collect();
        let mut scores = vec![0.0; n * n];
        for (i, row) in upper.into_iter().enumerate() {
            scores[i * n + i] = 1.0;
            for (off, s) in row.into_iter().enumerate() {
                let j = i + 1 + off;
                scores[i * n + j] = s;
                scores[j * n + i] = s;
            }
        }
        SimilarityMatrix {
            engine_tag: engine_tag.into(),
            corpus_kind: None,
            n,
            scores,
        }
    }

    /// Wrap raw row-major scores, checking the invariants.
    pub fn from_scores(
        n: usize,
        scores: Vec<f64>,
        engine_tag: impl Into<String>,
        corpus_kind: Option<CorpusKind>,
    ) -> Result<Self, SimilarityError> {
        if scores.len() != n * n {
            return Err(SimilarityError::MalformedMatrix(format!(
                "expected {} scores for n = {n}, got {}",
                n * n,
                scores.len()
            )));
        }
        let m = SimilarityMatrix {
            engine_tag: engine_tag.into(),
            corpus_kind,
            n,
            scores,
        };
        if let Some(v) = m.violations(0.0).into_iter().next() {
            return Err(SimilarityError::MalformedMatrix(format!("{v:?}")));
        }
        Ok(m)
    }

    pub fn with_corpus_kind(mut self, kind: CorpusKind) -> Self {
        self.corpus_kind = Some(kind);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn engine_tag(&self) -> &str {
        &self.engine_tag
    }

    pub fn corpus_kind(&self) -> Option<CorpusKind> {
        self.corpus_kind
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.n..(i + 1) * self.n]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Largest score off the diagonal, or `None` for `n < 2`.
    pub fn max_off_diagonal(&self) -> Option<f64> {
        (0..self.n)
            .flat_map(|i| ((i + 1)..self.n).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .reduce(f64::max)
    }

    /// Every invariant violation. Symmetry and range are exact; the diagonal
    /// may deviate from 1 by at most `diag_tol`.
    pub fn violations(&self, diag_tol: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        for i in 0..self.n {
            let d = self.get(i, i);
            if !((d - 1.0).abs() <= diag_tol) {
                out.push(Violation::Diagonal { i, value: d });
            }
            for j in 0..self.n {
                let v = self.get(i, j);
                if !(0.0..=1.0).contains(&v) {
                    out.push(Violation::OutOfRange { i, j, value: v });
                }
                if j > i && v.to_bits() != self.get(j, i).to_bits() {
                    out.push(Violation::Asymmetric { i, j });
                }
            }
        }
        out
    }

    /// Reorder rows and columns: entry `(a, b)` of the result is entry
    /// `(order[a], order[b])` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = self.n;
        let mut scores = vec![0.0; n * n];
        for (a, &i) in order.iter().enumerate() {
            for (b, &j) in order.iter().enumerate() {
                scores[a * n + b] = self.get(i, j);
            }
        }
        SimilarityMatrix { scores, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("matrix serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SimilarityError> {
        let raw: SimilarityMatrix =
            serde_json::from_str(s).map_err(|e| SimilarityError::MalformedMatrix(e.to_string()))?;
        Self::from_scores(raw.n, raw.scores, raw.engine_tag, raw.corpus_kind)
    }

    /// Little-endian binary dump: magic, `n`, tag, corpus kind, scores.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        let kind = self.corpus_kind.map(|k| k.as_str()).unwrap_or("");
        for s in [self.engine_tag.as_str(), kind] {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
        for v in &self.scores {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, SimilarityError> {
        let bad = |what: &str| SimilarityError::MalformedMatrix(what.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a binary similarity matrix"));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf).map_err(|_| bad("truncated header"))?;
        let n = u64::from_le_bytes(u64buf) as usize;
        let mut strings = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut lenbuf = [0u8; 4];
            r.read_exact(&mut lenbuf).map_err(|_| bad("truncated header"))?;
            let mut s = vec![0u8; u32::from_le_bytes(lenbuf) as usize];
            r.read_exact(&mut s).map_err(|_| bad("truncated header"))?;
            strings.push(String::from_utf8(s).map_err(|_| bad("header is not UTF-8"))?);
        }
        let corpus_kind = match strings[1].as_str() {
            "" => None,
            k => Some(k.parse().map_err(|e: String| SimilarityError::MalformedMatrix(e))?),
        };
        let count = n.checked_mul(n).ok_or_else(|| bad("matrix too large"))?;
        let mut scores = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut u64buf).map_err(|_| bad("truncated scores"))?;
            scores.push(f64::from_le_bytes(u64buf));
        }
        Self::from_scores(n, scores, strings.swap_remove(0), corpus_kind)
    }

    /// Save as JSON when the path ends in `.json`, binary otherwise.
    pub fn save(&self, path: &Path) -> Result<(), SimilarityError> {
        let mut buf = Vec::new();
        if is_json_path(path) {
            buf.extend_from_slice(self.to_json().as_bytes());
        } else {
            self.write_binary(&mut buf).expect("in-memory write");
        }
        crate::io::write_atomic(path, &buf).map_err(|source| SimilarityError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Load either format, sniffing the binary magic.
    pub fn load(path: &Path) -> Result<Self, SimilarityError> {
        let bytes = std::fs::read(path).map_err(|source| SimilarityError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if bytes.starts_with(MAGIC) {
            Self::read_binary(bytes.as_slice())
        } else {
            let text =
                String::from_utf8(bytes).map_err(|_| SimilarityError::MalformedMatrix("not UTF-8 JSON".into()))?;
            Self::from_json(&text)
        }
    }
}

fn is_json_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Clamp into `[0, 1]`; NaN maps to 0.
pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SimilarityMatrix {
        SimilarityMatrix::from_pair_fn(4, "test", |i, j| (i + j) as f64 / 10.0 - 0.2)
            .with_corpus_kind(CorpusKind::DastNds)
    }

    #[test]
    fn pair_fn_builds_valid_matrix() {
        let m = sample();
        assert!(m.violations(0.0).is_empty());
        assert_eq!(m.get(0, 1), 0.0); // clamped from -0.1
        assert_eq!(m.get(3, 2), 0.3);
        assert_eq!(m.max_off_diagonal(), Some(0.3));
    }

    #[test]
    fn binary_and_json_round_trip() {
        let m = sample();
        let mut buf = Vec::new();
        m.write_binary(&mut buf).unwrap();
        assert_eq!(SimilarityMatrix::read_binary(buf.as_slice()).unwrap(), m);
        assert_eq!(SimilarityMatrix::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn rejects_broken_matrices() {
        assert!(SimilarityMatrix::from_scores(2, vec![1.0, 0.5, 0.4, 1.0], "x", None).is_err());
        assert!(SimilarityMatrix::from_scores(2, vec![1.0, 1.5, 1.5, 1.0], "x", None).is_err());
        assert!(SimilarityMatrix::from_scores(2, vec![0.9, 0.5, 0.5, 1.0], "x", None).is_err());
        assert!(SimilarityMatrix::from_scores(2, vec![1.0], "x", None).is_err());
        assert!(SimilarityMatrix::read_binary(&b"nonsense"[..]).is_err());
    }

    #[test]
    fn permutation_moves_entries() {
        let m = sample();
        let p = m.permuted(&[3, 2, 1, 0]);
        assert_eq!(p.get(0, 1), m.get(3, 2));
        assert!(p.violations(0.0).is_empty());
    }
}
