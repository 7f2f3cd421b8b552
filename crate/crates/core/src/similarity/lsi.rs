use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use super::{idf_weights, SimilarityError, SimilarityMatrix, TokenizedDoc};

/// Convergence threshold of the symmetric eigensolver.
pub const EIGEN_TOLERANCE: f64 = 1e-10;
/// Iteration budget per eigenvalue.
pub const EIGEN_MAX_ITERATIONS: usize = 1000;

/// Norms below this fraction of the largest document norm count as zero.
const ZERO_NORM_RATIO: f64 = 1e-9;

/// Default LSI rank: `min(300, n - 1)`, kept within `1..=min(vocab, n)`.
pub fn default_rank(n_docs: usize, vocab: usize) -> usize {
    300.min(n_docs.saturating_sub(1)).min(vocab.min(n_docs)).max(1)
}

/// TF-IDF vectors (raw counts times `ln(n / df)`) keyed by vocabulary index.
fn tfidf_vectors(corpus: &[TokenizedDoc]) -> (usize, Vec<BTreeMap<usize, f64>>) {
    let idf = idf_weights(corpus);
    let vocab: BTreeMap<&str, usize> = idf.keys().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let idf_by_index: Vec<f64> = idf.values().copied().collect();
    let vectors = corpus
        .iter()
        .map(|doc| {
            let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
            for t in &doc.tokens {
                *counts.entry(vocab[t.as_str()]).or_default() += 1.0;
            }
            counts
                .into_iter()
                .map(|(term, tf)| (term, tf * idf_by_index[term]))
                .filter(|(_, w)| *w != 0.0)
                .collect()
        })
        .collect();
    (vocab.len(), vectors)
}

/// Cosine of projected rows. `empty[i]` marks documents whose TF-IDF vector
/// is exactly zero; their projections are rounding noise.
fn cosine_matrix(rows: &[Vec<f64>], empty: &[bool], tag: &str) -> SimilarityMatrix {
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let zero = |i: usize| empty[i] || max_norm == 0.0 || norms[i] <= ZERO_NORM_RATIO * max_norm;
    SimilarityMatrix::from_pair_fn(rows.len(), tag, |i, j| {
        if zero(i) || zero(j) {
            return 0.0;
        }
        let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
        dot / (norms[i] * norms[j])
    })
}

/// Latent semantic indexing similarity at rank `k`.
///
/// Builds the TF-IDF term-document matrix, takes the top-`k` eigenpairs of
/// the document Gram matrix (equivalently, the top-`k` right singular
/// vectors scaled by their singular values) and scores document pairs by
/// the clamped cosine of their projections. Documents whose projection
/// vanishes score 0 against everything else.
pub fn lsi_similarity(corpus: &[TokenizedDoc], k: usize) -> Result<SimilarityMatrix, SimilarityError> {
    let n = corpus.len();
    if n == 0 {
        return Err(SimilarityError::EmptyCorpus);
    }
    let (vocab, vectors) = tfidf_vectors(corpus);
    let max = vocab.min(n);
    if k == 0 || k > max {
        return Err(SimilarityError::RankTooLarge { k, max });
    }

    let mut dense = DMatrix::<f64>::zeros(n, vocab);
    for (i, v) in vectors.iter().enumerate() {
        for (&term, &w) in v {
            dense[(i, term)] = w;
        }
    }
    let gram = &dense * dense.transpose();
    let eigen = SymmetricEigen::try_new(gram, EIGEN_TOLERANCE, EIGEN_MAX_ITERATIONS * n)
        .ok_or(SimilarityError::NoConvergence)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&b)));
    let top = &order[..k];
    let scales: Vec<f64> = top.iter().map(|&c| eigen.eigenvalues[c].max(0.0).sqrt()).collect();
    let projected: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            top.iter()
                .zip(&scales)
                .map(|(&c, s)| eigen.eigenvectors[(i, c)] * s)
                .collect()
        })
        .collect();
    let empty: Vec<bool> = vectors.iter().map(BTreeMap::is_empty).collect();
    Ok(cosine_matrix(&projected, &empty, &format!("lsi-k{k}")))
}

/// Plain TF-IDF cosine similarity, without any projection.
pub fn tfidf_cosine(corpus: &[TokenizedDoc]) -> Result<SimilarityMatrix, SimilarityError> {
    if corpus.is_empty() {
        return Err(SimilarityError::EmptyCorpus);
    }
    let (_, vectors) = tfidf_vectors(corpus);
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.values().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    Ok(SimilarityMatrix::from_pair_fn(corpus.len(), "tfidf", |i, j| {
        if norms[i] == 0.0 || norms[j] == 0.0 {
            return 0.0;
        }
        let (small, large) = if vectors[i].len() <= vectors[j].len() {
            (&vectors[i], &vectors[j])
        } else {
            (&vectors[j], &vectors[i])
        };
        let dot: f64 = small.iter().filter_map(|(t, a)| large.get(t).map(|b| a * b)).sum();
        dot / (norms[i] * norms[j])
    }))
}
