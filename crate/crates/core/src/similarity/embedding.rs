//! Similarity from externally computed sentence embeddings.
//!
//! Vectors come either from a JSON-lines file with one
//! `{"doc_id": 0, "vector": [..]}` object per line, or from an HTTP service
//! answering `POST {"texts": [..]}` with `{"vectors": [[..], ..]}`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;

use super::{SimilarityError, SimilarityMatrix};

/// Embedding vectors keyed by corpus document ID, all of one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    dim: usize,
    vectors: BTreeMap<usize, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    doc_id: usize,
    vector: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a vector; the first vector fixes the dimension.
    pub fn insert(&mut self, doc_id: usize, vector: Vec<f64>) -> Result<(), SimilarityError> {
        if self.vectors.is_empty() {
            if vector.is_empty() {
                return Err(SimilarityError::DimensionMismatch { expected: 1, found: 0 });
            }
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(SimilarityError::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        self.vectors.insert(doc_id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, doc_id: usize) -> Option<&[f64]> {
        self.vectors.get(&doc_id).map(Vec::as_slice)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (&doc_id, v) in &self.vectors {
            let line = EmbeddingLine {
                doc_id,
                vector: v.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("vector serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parse the JSON-lines embedding format. Blank lines are skipped.
pub fn parse_embeddings(text: &str) -> Result<EmbeddingSet, SimilarityError> {
    let mut set = EmbeddingSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingLine = serde_json::from_str(line)
            .map_err(|e| SimilarityError::MalformedEmbeddingFile(format!("line {}: {e}", lineno + 1)))?;
        if set.vectors.contains_key(&rec.doc_id) {
            return Err(SimilarityError::MalformedEmbeddingFile(format!(
                "line {}: duplicate doc_id {}",
                lineno + 1,
                rec.doc_id
            )));
        }
        set.insert(rec.doc_id, rec.vector)?;
    }
    if set.is_empty() {
        return Err(SimilarityError::EmptyEmbeddingSet);
    }
    Ok(set)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet, SimilarityError> {
    let text = std::fs::read_to_string(path).map_err(|source| SimilarityError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_embeddings(&text)
}

/// Clamped cosine similarity between the embeddings of every document pair.
/// Every document of the corpus needs a vector; zero vectors score 0.
pub fn embedding_similarity(corpus: &Corpus, embeddings: &EmbeddingSet) -> Result<SimilarityMatrix, SimilarityError> {
    if corpus.documents.is_empty() {
        return Err(SimilarityError::EmptyCorpus);
    }
    if embeddings.is_empty() {
        return Err(SimilarityError::EmptyEmbeddingSet);
    }
    let vectors: Vec<&[f64]> = corpus
        .documents
        .iter()
        .map(|d| embeddings.get(d.doc_id).ok_or(SimilarityError::MissingVector(d.doc_id)))
        .collect::<Result<_, _>>()?;
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let matrix = SimilarityMatrix::from_pair_fn(vectors.len(), "embedding", |i, j| {
        if norms[i] == 0.0 || norms[j] == 0.0 {
            return 0.0;
        }
        let dot: f64 = vectors[i].iter().zip(vectors[j]).map(|(a, b)| a * b).sum();
        dot / (norms[i] * norms[j])
    });
    Ok(matrix.with_corpus_kind(corpus.kind))
}

/// Blocking client for an embedding service.
#[derive(Debug, Clone)]
pub struct EmbeddingClient {
    pub url: String,
    pub batch_size: usize,
    /// Attempts per batch after the first one.
    pub max_retries: u32,
    /// Concurrent requests in flight.
    pub parallelism: usize,
    pub timeout: Duration,
    /// Delay before the first retry; doubled on each further one.
    pub backoff: Duration,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

enum Attempt {
    Retry(String),
    Fatal(SimilarityError),
}

impl EmbeddingClient {
    pub fn new(url: impl Into<String>) -> Self {
        EmbeddingClient {
            url: url.into(),
            batch_size: 64,
            max_retries: 3,
            parallelism: 4,
            timeout: Duration::from_secs(60),
            backoff: Duration::from_millis(200),
        }
    }

    /// Embed texts in batches, preserving order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, SimilarityError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| SimilarityError::ServiceUnavailable(e.to_string()))?;
        let batches: Vec<&[String]> = texts.chunks(self.batch_size.max(1)).collect();
        let results: Mutex<Vec<Option<Vec<Vec<f64>>>>> = Mutex::new(vec![None; batches.len()]);
        let failure: Mutex<Option<SimilarityError>> = Mutex::new(None);
        let next = AtomicUsize::new(0);

        std::thread::scope(|s| {
            for _ in 0..self.parallelism.clamp(1, batches.len().max(1)) {
                s.spawn(|| loop {
                    let b = next.fetch_add(1, Ordering::SeqCst);
                    if b >= batches.len() || failure.lock().unwrap().is_some() {
                        break;
                    }
                    match self.embed_batch(&http, batches[b]) {
                        Ok(v) => results.lock().unwrap()[b] = Some(v),
                        Err(e) => {
                            failure.lock().unwrap().get_or_insert(e);
                            break;
                        }
                    }
                });
            }
        });

        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        let vectors: Vec<Vec<f64>> = results
            .into_inner()
            .unwrap()
            .into_iter()
            .flat_map(|b| b.expect("every batch finished"))
            .collect();
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().find(|v| v.len() != first.len()) {
                return Err(SimilarityError::DimensionMismatch {
                    expected: first.len(),
                    found: bad.len(),
                });
            }
        }
        Ok(vectors)
    }

    fn embed_batch(
        &self,
        http: &reqwest::blocking::Client,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, SimilarityError> {
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.try_batch(http, texts) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(SimilarityError::ServiceUnavailable(format!(
            "{} after {} attempts: {last}",
            self.url,
            self.max_retries + 1
        )))
    }

    fn try_batch(&self, http: &reqwest::blocking::Client, texts: &[String]) -> Result<Vec<Vec<f64>>, Attempt> {
        let resp = http
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(Attempt::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(SimilarityError::ServiceUnavailable(format!(
                "{} answered {status}",
                self.url
            ))));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(SimilarityError::MalformedResponse(e.to_string())))?;
        if body.vectors.len() != texts.len() {
            return Err(Attempt::Fatal(SimilarityError::MalformedResponse(format!(
                "{} vectors for {} texts",
                body.vectors.len(),
                texts.len()
            ))));
        }
        Ok(body.vectors)
    }
}

/// Embed every document of a corpus through the service.
pub fn fetch_embeddings(corpus: &Corpus, client: &EmbeddingClient) -> Result<EmbeddingSet, SimilarityError> {
    let texts: Vec<String> = corpus.documents.iter().map(|d| d.text.clone()).collect();
    let vectors = client.embed(&texts)?;
    let mut set = EmbeddingSet::new();
    for (doc, v) in corpus.documents.iter().zip(vectors) {
        set.insert(doc.doc_id, v)?;
    }
    if set.is_empty() {
        return Err(SimilarityError::EmptyEmbeddingSet);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusDocument, CorpusKind};
    use crate::ingest::FindingId;

    fn corpus(n: usize) -> Corpus {
        Corpus {
            kind: CorpusKind::DastNds,
            documents: (0..n)
                .map(|i| CorpusDocument {
                    doc_id: i,
                    finding_ids: vec![FindingId(i as u64)],
                    text: format!("doc {i}"),
                })
                .collect(),
        }
    }

    #[test]
    fn cosine_of_known_vectors() {
        let set = parse_embeddings(
            "{\"doc_id\":0,\"vector\":[1,0]}\n{\"doc_id\":1,\"vector\":[1,1]}\n\n{\"doc_id\":2,\"vector\":[-1,0]}\n",
        )
        .unwrap();
        let m = embedding_similarity(&corpus(3), &set).unwrap();
        assert!((m.get(0, 1) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(m.get(0, 2), 0.0); // cosine -1 clamped
        assert_eq!(m.corpus_kind(), Some(CorpusKind::DastNds));
    }

    #[test]
    fn file_errors() {
        assert!(matches!(parse_embeddings(""), Err(SimilarityError::EmptyEmbeddingSet)));
        assert!(matches!(
            parse_embeddings("{\"doc_id\":0,\"vector\":[1]}\n{\"doc_id\":1,\"vector\":[1,2]}"),
            Err(SimilarityError::DimensionMismatch { expected: 1, found: 2 })
        ));
        assert!(matches!(
            parse_embeddings("not json"),
            Err(SimilarityError::MalformedEmbeddingFile(_))
        ));
        let set = parse_embeddings("{\"doc_id\":0,\"vector\":[1]}").unwrap();
        assert!(matches!(
            embedding_similarity(&corpus(2), &set),
            Err(SimilarityError::MissingVector(1))
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut set = EmbeddingSet::new();
        set.insert(3, vec![0.5, -1.0]).unwrap();
        set.insert(1, vec![2.0, 0.0]).unwrap();
        assert_eq!(parse_embeddings(&set.to_jsonl()).unwrap(), set);
    }

    #[test]
    fn unreachable_service() {
        // port 9 on localhost: nothing listens there in the test sandbox
        let mut client = EmbeddingClient::new("http://127.0.0.1:9/embed");
        client.max_retries = 1;
        client.backoff = Duration::from_millis(1);
        assert!(matches!(
            fetch_embeddings(&corpus(2), &client),
            Err(SimilarityError::ServiceUnavailable(_))
        ));
    }
}
