//! Pairwise semantic similarity between corpus documents.
//!
//! Three interchangeable engines produce a [`SimilarityMatrix`]:
//!
//! - [`lsi_similarity`]: TF-IDF weighting projected onto the top singular
//!   directions of the term-document matrix (latent semantic indexing).
//! - [`graph_similarity`]: word-level path similarity over a lexical graph
//!   (WordNet or a compatible TSV), aggregated per document pair.
//! - [`embedding_similarity`]: cosine over externally computed sentence
//!   embeddings.
//!
//! All engines share the tokenizer in this module and all of them return
//! symmetric matrices with a unit diagonal and scores in `[0, 1]`.

mod embedding;
mod graph;
mod lsi;
mod matrix;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::LazyLock;

use crate::corpus::{Corpus, CorpusDocument};

pub use embedding::{
    embedding_similarity, fetch_embeddings, load_embeddings, parse_embeddings, EmbeddingClient, EmbeddingSet,
};
pub use graph::{graph_similarity, LexicalGraph, SynsetId};
pub use lsi::{default_rank, lsi_similarity, tfidf_cosine};
pub use matrix::{SimilarityMatrix, Violation};

#[derive(Debug, thiserror::Error)]
pub enum SimilarityError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("rank {k} outside 1..={max}")]
    RankTooLarge { k: usize, max: usize },
    #[error("eigendecomposition did not converge")]
    NoConvergence,
    #[error("no embedding vector for document {0}")]
    MissingVector(usize),
    #[error("vector dimension {found} differs from {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding set is empty")]
    EmptyEmbeddingSet,
    #[error("malformed embedding file: {0}")]
    MalformedEmbeddingFile(String),
    #[error("embedding service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("malformed embedding service response: {0}")]
    MalformedResponse(String),
    #[error("malformed lexical graph: {0}")]
    MalformedGraph(String),
    #[error("malformed similarity matrix: {0}")]
    MalformedMatrix(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A document reduced to lowercase terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub doc_id: usize,
    pub tokens: Vec<String>,
}

static ENGLISH_STOPLIST: LazyLock<HashSet<String>> = LazyLock::new(|| {
    include_str!("stopwords.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
});

/// The default English stop-word list.
pub fn english_stoplist() -> &'static HashSet<String> {
    &ENGLISH_STOPLIST
}

/// Lowercase, split on runs of non-alphanumeric characters, and drop
/// stop words and single-character tokens.
pub fn tokenize_text(text: &str, stoplist: &HashSet<String>) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.chars().nth(1).is_some() && !stoplist.contains(t))
        .collect()
}

pub fn tokenize(doc: &CorpusDocument, stoplist: &HashSet<String>) -> TokenizedDoc {
    TokenizedDoc {
        doc_id: doc.doc_id,
        tokens: tokenize_text(&doc.text, stoplist),
    }
}

pub fn tokenize_corpus(corpus: &Corpus, stoplist: &HashSet<String>) -> Vec<TokenizedDoc> {
    corpus.documents.iter().map(|d| tokenize(d, stoplist)).collect()
}

/// Inverse document frequency `ln(n / df)` of every term in the corpus.
pub fn idf_weights(corpus: &[TokenizedDoc]) -> BTreeMap<String, f64> {
    let n = corpus.len() as f64;
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let distinct: std::collections::BTreeSet<&String> = doc.tokens.iter().collect();
        for t in distinct {
            *df.entry(t.clone()).or_default() += 1;
        }
    }
    df.into_iter().map(|(t, d)| (t, (n / d as f64).ln())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_path_like_text() {
        let toks = tokenize_text("SQL injection in /rest/user", english_stoplist());
        assert_eq!(toks, vec!["sql", "injection", "rest", "user"]);
    }

    #[test]
    fn empty_and_stop_only_text() {
        assert!(tokenize_text("", english_stoplist()).is_empty());
        let stop: HashSet<String> = ["the".to_string()].into();
        assert!(tokenize_text("the The THE", &stop).is_empty());
    }

    #[test]
    fn drops_single_characters() {
        let toks = tokenize_text("<p>a b XSS</p>", &HashSet::new());
        assert_eq!(toks, vec!["xss"]);
    }

    #[test]
    fn idf_of_ubiquitous_term_is_zero() {
        let docs = vec![
            TokenizedDoc {
                doc_id: 0,
                tokens: vec!["a1".into(), "b1".into()],
            },
            TokenizedDoc {
                doc_id: 1,
                tokens: vec!["a1".into()],
            },
        ];
        let idf = idf_weights(&docs);
        assert_eq!(idf["a1"], 0.0);
        assert!((idf["b1"] - 2f64.ln()).abs() < 1e-15);
    }
}
