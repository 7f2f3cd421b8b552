//! The pipeline stages behind the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dedupsec::corpus::CorpusSpec;
use dedupsec::evaluation::{plot_csv, Summary};
use dedupsec::ingest::{assemble_dataset, load_schema_catalog};
use dedupsec::similarity::{
    default_rank, embedding_similarity, fetch_embeddings, idf_weights, load_embeddings, EmbeddingClient, LexicalGraph,
};
use dedupsec::{
    build_corpus, builtin_catalog, cluster, english_stoplist, graph_similarity, lsi_similarity, parse_report,
    summarize, sweep, tfidf_cosine, tokenize_corpus, ClusterSet, Corpus, CorpusKind, Dataset, SchemaMapping,
    SimilarityMatrix, SweepResult, TestingType,
};
use serde::Serialize;

use crate::config::{is_url, EngineParams, RunConfig};

pub fn load_catalog(path: Option<&Path>) -> Result<Vec<SchemaMapping>> {
    match path {
        Some(p) => load_schema_catalog(p).with_context(|| format!("loading catalog {}", p.display())),
        None => Ok(builtin_catalog()),
    }
}

/// Resolve ingest inputs to `(tool, report)` pairs.
///
/// An input is `tool=path`, a report file named after its tool
/// (`zap.json`), or a directory of such files. Directory entries follow
/// catalog order, and reports of tools for the other testing type are
/// skipped.
pub fn resolve_reports(
    inputs: &[String],
    testing_type: TestingType,
    catalog: &[SchemaMapping],
) -> Result<Vec<(String, PathBuf)>> {
    let tool_of = |path: &Path| -> Option<&SchemaMapping> {
        let stem = path.file_stem()?.to_str()?;
        catalog.iter().find(|m| m.tool_name == stem)
    };
    let mut out = Vec::new();
    for input in inputs {
        if let Some((tool, path)) = input.split_once('=') {
            if !catalog.iter().any(|m| m.tool_name == tool) {
                bail!("unknown tool `{tool}`");
            }
            out.push((tool.to_string(), PathBuf::from(path)));
            continue;
        }
        let path = PathBuf::from(input);
        if path.is_dir() {
            let mut found: Vec<(usize, String, PathBuf)> = Vec::new();
            for entry in std::fs::read_dir(&path).with_context(|| format!("reading {}", path.display()))? {
                let file = entry?.path();
                if file.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let Some(m) = tool_of(&file) else {
                    bail!("{}: no catalog tool named after this file", file.display());
                };
                if m.testing_type != testing_type {
                    tracing::info!("skipping {} ({} tool)", file.display(), m.testing_type);
                    continue;
                }
                let rank = catalog
                    .iter()
                    .position(|c| c.tool_name == m.tool_name)
                    .unwrap_or(usize::MAX);
                found.push((rank, m.tool_name.clone(), file));
            }
            found.sort();
            out.extend(found.into_iter().map(|(_, tool, file)| (tool, file)));
        } else {
            let m = tool_of(&path).with_context(|| {
                format!(
                    "{}: cannot tell the tool from the file name; pass it as tool=path",
                    path.display()
                )
            })?;
            out.push((m.tool_name.clone(), path));
        }
    }
    if out.is_empty() {
        bail!("no {testing_type} reports found");
    }
    Ok(out)
}

/// Parse reports into one dataset, numbering findings from `start_id`.
pub fn ingest(
    reports: &[(String, PathBuf)],
    testing_type: TestingType,
    catalog: &[SchemaMapping],
    start_id: u64,
) -> Result<Dataset> {
    let mut next_id = start_id;
    let mut parsed = Vec::new();
    for (tool, path) in reports {
        let mapping = catalog
            .iter()
            .find(|m| &m.tool_name == tool)
            .with_context(|| format!("unknown tool `{tool}`"))?;
        let findings = parse_report(path, mapping, next_id)?;
        tracing::info!("{}: {} findings", path.display(), findings.len());
        next_id += findings.len() as u64;
        parsed.push((tool.clone(), findings));
    }
    let dataset = assemble_dataset(parsed, testing_type)?;
    if dataset.is_empty() {
        bail!("the reports contain no findings");
    }
    Ok(dataset)
}

pub fn make_corpus(dataset: &Dataset, kind: CorpusKind, separator: Option<&str>) -> Result<Corpus> {
    let mut spec = CorpusSpec::new(kind);
    if let Some(sep) = separator {
        spec = spec.with_separator(sep);
    }
    Ok(build_corpus(dataset, &spec)?)
}

pub fn similarity(corpus: &Corpus, engine: &EngineParams) -> Result<SimilarityMatrix> {
    let tokens = || tokenize_corpus(corpus, english_stoplist());
    let matrix = match engine {
        EngineParams::Lsi { k } => {
            let tokens = tokens();
            let k = k.unwrap_or_else(|| default_rank(tokens.len(), idf_weights(&tokens).len()));
            lsi_similarity(&tokens, k)?
        }
        EngineParams::Tfidf => tfidf_cosine(&tokens())?,
        EngineParams::Graph { graph } => {
            let graph = LexicalGraph::load(graph)?;
            let tokens = tokens();
            graph_similarity(&tokens, &graph, &idf_weights(&tokens))?
        }
        EngineParams::Embedding { source } => {
            let set = if is_url(source) {
                fetch_embeddings(corpus, &EmbeddingClient::new(source.as_str()))?
            } else {
                load_embeddings(Path::new(source))?
            };
            embedding_similarity(corpus, &set)?
        }
    };
    Ok(matrix.with_corpus_kind(corpus.kind))
}

pub fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    dedupsec::io::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub struct RunOutputs {
    pub sweep: SweepResult,
    pub summary: Summary,
    pub clusters: ClusterSet,
}

/// Corpus, similarity, sweep. Writes `summary.json`, `plot.csv`,
/// `sweep.json` and the best threshold's `clusters.json` into `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunOutputs> {
    let dataset = Dataset::load(&cfg.dataset)?;
    let truth = ClusterSet::load(&cfg.truth)?;
    let corpus = make_corpus(&dataset, cfg.corpus, cfg.separator.as_deref())?;
    let matrix = similarity(&corpus, &cfg.engine)?;
    let result = sweep(&matrix, &corpus, &truth, &cfg.thresholds)?;
    let best = result.best_row().threshold.expect("sweep rows carry thresholds");
    let clusters = cluster(&matrix, &corpus, best)?;
    let summary = summarize(std::slice::from_ref(&result));

    write_output(&cfg.out.join("summary.json"), to_json(&summary)?.as_bytes())?;
    write_output(&cfg.out.join("sweep.json"), to_json(&result)?.as_bytes())?;
    write_output(
        &cfg.out.join("plot.csv"),
        plot_csv(std::slice::from_ref(&result))?.as_bytes(),
    )?;
    write_output(&cfg.out.join("clusters.json"), clusters.to_json_pretty().as_bytes())?;
    Ok(RunOutputs {
        sweep: result,
        summary,
        clusters,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDiff {
    pub i: usize,
    pub j: usize,
    pub a: f64,
    pub b: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixDiff {
    pub n: usize,
    pub engine_a: String,
    pub engine_b: String,
    pub tolerance: f64,
    pub max_abs_diff: f64,
    /// Pairs `i < j` whose scores differ by more than the tolerance.
    pub exceeding: usize,
    pub worst: Vec<PairDiff>,
}

/// Compare two matrices over the same documents, listing up to `top` of
/// the pairs that differ the most beyond `tolerance`.
pub fn compare(a: &SimilarityMatrix, b: &SimilarityMatrix, tolerance: f64, top: usize) -> Result<MatrixDiff> {
    if a.n() != b.n() {
        bail!("matrices cover {} and {} documents", a.n(), b.n());
    }
    let mut diffs = Vec::new();
    let mut max_abs_diff: f64 = 0.0;
    for i in 0..a.n() {
        for j in i + 1..a.n() {
            let diff = (a.get(i, j) - b.get(i, j)).abs();
            max_abs_diff = max_abs_diff.max(diff);
            if diff > tolerance {
                diffs.push(PairDiff {
                    i,
                    j,
                    a: a.get(i, j),
                    b: b.get(i, j),
                    diff,
                });
            }
        }
    }
    let exceeding = diffs.len();
    diffs.sort_by(|x, y| y.diff.total_cmp(&x.diff).then((x.i, x.j).cmp(&(y.i, y.j))));
    diffs.truncate(top);
    Ok(MatrixDiff {
        n: a.n(),
        engine_a: a.engine_tag().to_string(),
        engine_b: b.engine_tag().to_string(),
        tolerance,
        max_abs_diff,
        exceeding,
        worst: diffs,
    })
}
