//! Deduplication of security-testing findings.
//!
//! The pipeline runs in five steps:
//!
//! 1. [`ingest`] turns scanner reports into uniform [`Finding`]s.
//! 2. [`corpus`] renders each finding (or CVE-merged group of findings) as
//!    one text document.
//! 3. [`similarity`] scores every document pair with one of three engines.
//! 4. [`clustering`] links pairs at or above a threshold and takes connected
//!    components.
//! 5. [`evaluation`] counts clusters that exactly match a ground truth.
//!
//! ```
//! use dedupsec::{build_corpus, cluster, tokenize_corpus, english_stoplist, tfidf_cosine};
//! use dedupsec::{CorpusKind, CorpusSpec, Dataset};
//!
//! let dataset = Dataset::from_json_str(r#"{
//!   "testing_type": "DAST",
//!   "findings": [
//!     {"id": 1, "tool": "zap", "features": {"name": "SQL Injection", "description": "SQL injection may be possible"}},
//!     {"id": 2, "tool": "arachni", "features": {"name": "SQL Injection", "description": "SQL injection may be possible"}},
//!     {"id": 3, "tool": "zap", "features": {"name": "Missing CSP header", "description": "Content Security Policy header not set"}}
//!   ]
//! }"#).unwrap();
//! let corpus = build_corpus(&dataset, &CorpusSpec::new(CorpusKind::DastNds)).unwrap();
//! let matrix = tfidf_cosine(&tokenize_corpus(&corpus, english_stoplist())).unwrap();
//! let clusters = cluster(&matrix, &corpus, 0.9).unwrap();
//! assert_eq!(clusters.len(), 2);
//! ```

pub mod clustering;
pub mod corpus;
pub mod evaluation;
pub mod ingest;
pub mod io;
pub mod similarity;

pub use clustering::{cluster, transitive_closure, ClusterError, ClusterOrigin, ClusterSet, UnionFind};
pub use corpus::{build_corpus, Corpus, CorpusDocument, CorpusError, CorpusKind, CorpusSpec};
pub use evaluation::{
    default_grid, evaluate, export_plot_data, summarize, sweep, EvalResult, EvaluationError, SweepResult,
};
pub use ingest::{
    builtin_catalog, parse_report, Dataset, Feature, Finding, FindingId, IngestError, SchemaMapping, TestingType,
};
pub use similarity::{
    english_stoplist, graph_similarity, lsi_similarity, tfidf_cosine, tokenize_corpus, SimilarityError,
    SimilarityMatrix,
};

// The guide's snippets run as doctests so they cannot drift from the code.
#[cfg(doctest)]
mod book {
    macro_rules! chapters {
        ($($name:ident => $file:literal),* $(,)?) => {
            $(
                #[doc = include_str!(concat!("../../../book/src/", $file))]
                mod $name {}
            )*
        };
    }

    chapters! {
        introduction => "introduction.md",
        ingest => "ingest.md",
        corpus => "corpus.md",
        similarity => "similarity.md",
        lsi => "lsi.md",
        graph => "graph.md",
        embedding => "embedding.md",
        clustering => "clustering.md",
        evaluation => "evaluation.md",
        cli => "cli.md",
        service => "service.md",
    }
}
