//! Scoring predicted clusters against ground truth.
//!
//! A predicted cluster is a true positive only when the ground truth holds a
//! cluster with exactly the same findings. Predicted clusters without such
//! a twin are false positives, ground-truth clusters without one are false
//! negatives. True negatives play no part in the metrics.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{cluster, ClusterError, ClusterSet};
use crate::corpus::{Corpus, CorpusKind};
use crate::ingest::FindingId;
use crate::similarity::SimilarityMatrix;

#[derive(Debug, thiserror::Error)]
pub enum EvaluationError {
    #[error(
        "predicted and ground-truth clusters cover different findings \
         ({} only predicted, {} only in truth)",
        only_predicted.len(),
        only_truth.len()
    )]
    UniverseMismatch {
        only_predicted: Vec<FindingId>,
        only_truth: Vec<FindingId>,
    },
    #[error("invalid thresholds: {0}")]
    BadThresholds(String),
    #[error("nothing to export")]
    EmptySweeps,
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("malformed plot data: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Contingency counts and metrics of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub threshold: Option<f64>,
    pub engine_tag: String,
    pub corpus_kind: Option<CorpusKind>,
}

impl EvalResult {
    /// Metrics from raw counts; zero denominators give 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        EvalResult {
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f_score: ratio(2 * tp, 2 * tp + fp + fn_),
            threshold: None,
            engine_tag: String::new(),
            corpus_kind: None,
        }
    }
}

/// Count exact cluster matches between a prediction and the ground truth.
/// Both must partition the same findings.
pub fn evaluate(predicted: &ClusterSet, truth: &ClusterSet) -> Result<EvalResult, EvaluationError> {
    let (pu, tu) = (predicted.universe(), truth.universe());
    if pu != tu {
        return Err(EvaluationError::UniverseMismatch {
            only_predicted: pu.difference(&tu).copied().collect(),
            only_truth: tu.difference(&pu).copied().collect(),
        });
    }
    let truth_clusters: HashSet<&[FindingId]> = truth.clusters().iter().map(Vec::as_slice).collect();
    // clusters are canonical and disjoint, so equal sets compare equal as slices
    // and every truth cluster can match at most one predicted cluster
    let tp = predicted
        .clusters()
        .iter()
        .filter(|c| truth_clusters.contains(c.as_slice()))
        .count();
    let fp = predicted.len() - tp;
    let fn_ = truth.len() - tp;
    debug_assert_eq!(tp + fp, predicted.len());
    debug_assert_eq!(tp + fn_, truth.len());
    let mut result = EvalResult::from_counts(tp, fp, fn_);
    result.threshold = predicted.threshold;
    Ok(result)
}

/// Evaluations over increasing thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<EvalResult>,
    /// Index of the row with the highest F-score, lowest threshold on ties.
    pub best: usize,
}

impl SweepResult {
    /// Wrap rows, locating the best one. `None` when `rows` is empty.
    pub fn from_rows(rows: Vec<EvalResult>) -> Option<Self> {
        let mut best = 0;
        for (i, r) in rows.iter().enumerate() {
            if r.f_score > rows[best].f_score {
                best = i;
            }
        }
        (!rows.is_empty()).then_some(SweepResult { rows, best })
    }

    pub fn best_row(&self) -> &EvalResult {
        &self.rows[self.best]
    }
}

/// Thresholds `0.10, 0.15, …, 0.95`.
pub fn default_grid() -> Vec<f64> {
    (10..=95).step_by(5).map(|c| c as f64 / 100.0).collect()
}

/// Thresholds from `lo` to `hi` inclusive in steps of `step`, rounded to
/// 10 decimals so that decimal grids come out exact.
pub fn threshold_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, EvaluationError> {
    if !(step > 0.0) || !(lo <= hi) || lo < 0.0 || hi > 1.0 {
        return Err(EvaluationError::BadThresholds(format!("{lo}:{hi}:{step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((lo + i as f64 * step) * 1e10).round() / 1e10)
        .collect())
}

fn check_thresholds(thresholds: &[f64]) -> Result<(), EvaluationError> {
    if thresholds.is_empty() {
        return Err(EvaluationError::BadThresholds("no thresholds".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(EvaluationError::BadThresholds(format!("{t} outside [0, 1]")));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvaluationError::BadThresholds("not strictly increasing".into()));
    }
    Ok(())
}

/// Cluster at every threshold and evaluate each prediction against `truth`.
pub fn sweep(
    matrix: &SimilarityMatrix,
    corpus: &Corpus,
    truth: &ClusterSet,
    thresholds: &[f64],
) -> Result<SweepResult, EvaluationError> {
    check_thresholds(thresholds)?;
    let rows = thresholds
        .par_iter()
        .map(|&t| {
            let predicted = cluster(matrix, corpus, t)?;
            let mut row = evaluate(&predicted, truth)?;
            row.engine_tag = matrix.engine_tag().to_string();
            row.corpus_kind = matrix.corpus_kind().or(Some(corpus.kind));
            Ok(row)
        })
        .collect::<Result<Vec<_>, EvaluationError>>()?;
    Ok(SweepResult::from_rows(rows).expect("thresholds are non-empty"))
}

/// One line of the plot CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub engine_tag: String,
    pub corpus_kind: String,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl From<&EvalResult> for PlotRow {
    fn from(r: &EvalResult) -> Self {
        PlotRow {
            engine_tag: r.engine_tag.clone(),
            corpus_kind: r.corpus_kind.map(|k| k.to_string()).unwrap_or_default(),
            threshold: r.threshold.unwrap_or(f64::NAN),
            precision: r.precision,
            recall: r.recall,
            f_score: r.f_score,
        }
    }
}

pub fn plot_rows(sweeps: &[SweepResult]) -> Vec<PlotRow> {
    sweeps.iter().flat_map(|s| s.rows.iter().map(PlotRow::from)).collect()
}

/// Plot CSV text: header plus one line per sweep row.
pub fn plot_csv(sweeps: &[SweepResult]) -> Result<String, EvaluationError> {
    let rows = plot_rows(sweeps);
    if rows.is_empty() {
        return Err(EvaluationError::EmptySweeps);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| EvaluationError::Malformed(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| EvaluationError::Malformed(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

pub fn export_plot_data(sweeps: &[SweepResult], path: &Path) -> Result<(), EvaluationError> {
    let text = plot_csv(sweeps)?;
    crate::io::write_atomic(path, text.as_bytes()).map_err(|source| EvaluationError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_plot_data(text: &str) -> Result<Vec<PlotRow>, EvaluationError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<PlotRow>, _>>()
        .map_err(|e| EvaluationError::Malformed(e.to_string()))
}

pub fn read_plot_data(path: &Path) -> Result<Vec<PlotRow>, EvaluationError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvaluationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_plot_data(&text)
}

/// Best result per engine and corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub engine_tag: String,
    pub corpus_kind: Option<CorpusKind>,
    pub threshold: Option<f64>,
    pub f_score: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

/// Summary table of the best row of every sweep, ordered by engine tag
/// and corpus.
pub fn summarize(sweeps: &[SweepResult]) -> Summary {
    let mut rows: Vec<SummaryRow> = sweeps
        .iter()
        .map(|s| {
            let b = s.best_row();
            SummaryRow {
                engine_tag: b.engine_tag.clone(),
                corpus_kind: b.corpus_kind,
                threshold: b.threshold,
                f_score: b.f_score,
                precision: b.precision,
                recall: b.recall,
                tp: b.tp,
                fp: b.fp,
                fn_: b.fn_,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.engine_tag.as_str(), a.corpus_kind.map(|k| k.as_str()))
            .cmp(&(b.engine_tag.as_str(), b.corpus_kind.map(|k| k.as_str())))
    });
    Summary { rows }
}

/// Findings grouped the same way in both sets, as a quick diagnostic.
pub fn matched_clusters<'a>(predicted: &'a ClusterSet, truth: &ClusterSet) -> Vec<&'a [FindingId]> {
    let truth_clusters: BTreeSet<&[FindingId]> = truth.clusters().iter().map(Vec::as_slice).collect();
    predicted
        .clusters()
        .iter()
        .map(Vec::as_slice)
        .filter(|c| truth_clusters.contains(c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::ClusterOrigin;

    fn set(origin: ClusterOrigin, clusters: &[&[u64]]) -> ClusterSet {
        ClusterSet::new(
            origin,
            None,
            clusters
                .iter()
                .map(|c| c.iter().map(|&i| FindingId(i)).collect::<BTreeSet<_>>()),
        )
        .unwrap()
    }

    #[test]
    fn hand_example() {
        let truth = set(ClusterOrigin::GroundTruth, &[&[1, 2], &[3], &[4]]);
        let pred = set(ClusterOrigin::Predicted, &[&[1, 2], &[3, 4]]);
        let r = evaluate(&pred, &truth).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 2));
        assert_eq!(r.precision, 0.5);
        assert!((r.recall - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.f_score - 0.4).abs() < 1e-15);
    }

    #[test]
    fn identity_and_disjoint() {
        let truth = set(ClusterOrigin::GroundTruth, &[&[1, 2], &[3]]);
        let r = evaluate(&truth, &truth).unwrap();
        assert_eq!((r.precision, r.recall, r.f_score), (1.0, 1.0, 1.0));
        let pred = set(ClusterOrigin::Predicted, &[&[1, 3], &[2]]);
        let r = evaluate(&pred, &truth).unwrap();
        assert_eq!((r.tp, r.precision, r.recall, r.f_score), (0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn universe_mismatch() {
        let truth = set(ClusterOrigin::GroundTruth, &[&[1, 2]]);
        let pred = set(ClusterOrigin::Predicted, &[&[1, 3]]);
        match evaluate(&pred, &truth) {
            Err(EvaluationError::UniverseMismatch {
                only_predicted,
                only_truth,
            }) => {
                assert_eq!(only_predicted, vec![FindingId(3)]);
                assert_eq!(only_truth, vec![FindingId(2)]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grids() {
        let g = default_grid();
        assert_eq!(g.len(), 18);
        assert_eq!(g[0], 0.10);
        assert_eq!(g[1], 0.15);
        assert_eq!(g[17], 0.95);
        assert_eq!(threshold_grid(0.1, 0.95, 0.05).unwrap(), g);
        assert_eq!(threshold_grid(0.5, 0.5, 0.1).unwrap(), vec![0.5]);
        assert!(threshold_grid(0.5, 0.4, 0.1).is_err());
        assert!(threshold_grid(0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn best_row_prefers_lowest_threshold_on_ties() {
        let mut rows: Vec<EvalResult> = [(1, 1, 1), (2, 0, 0), (2, 0, 0)]
            .iter()
            .map(|&(tp, fp, fn_)| EvalResult::from_counts(tp, fp, fn_))
            .collect();
        for (i, r) in rows.iter_mut().enumerate() {
            r.threshold = Some(0.1 * (i + 1) as f64);
        }
        assert_eq!(SweepResult::from_rows(rows).unwrap().best, 1);
        assert!(SweepResult::from_rows(Vec::new()).is_none());
    }

    #[test]
    fn threshold_validation() {
        assert!(check_thresholds(&[]).is_err());
        assert!(check_thresholds(&[0.2, 0.2]).is_err());
        assert!(check_thresholds(&[0.2, 1.2]).is_err());
        assert!(check_thresholds(&[0.2, 0.3]).is_ok());
    }

    #[test]
    fn empty_export_is_an_error() {
        assert!(matches!(plot_csv(&[]), Err(EvaluationError::EmptySweeps)));
    }

    #[test]
    fn plot_csv_round_trip() {
        let mut r = EvalResult::from_counts(3, 1, 2);
        r.threshold = Some(0.35);
        r.engine_tag = "lsi-k4".into();
        r.corpus_kind = Some(CorpusKind::SastConcD);
        let s = SweepResult::from_rows(vec![r]).unwrap();
        let text = plot_csv(std::slice::from_ref(&s)).unwrap();
        assert!(text.starts_with("engine_tag,corpus_kind,threshold,precision,recall,f_score\n"));
        assert_eq!(parse_plot_data(&text).unwrap(), plot_rows(&[s]));
    }
}
