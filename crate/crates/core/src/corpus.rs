//! Finding-string corpora.
//!
//! A corpus turns each finding (or each group of findings) into one text
//! document for the similarity engines. Four kinds exist: SAST descriptions,
//! SAST descriptions concatenated across shared CVE identifiers, DAST
//! name/description/solution strings, and DAST descriptions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::UnionFind;
use crate::ingest::{Dataset, Feature, Finding, FindingId, TestingType};

pub const DEFAULT_SEPARATOR: &str = ". ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CorpusKind {
    #[serde(rename = "SAST_D")]
    SastD,
    #[serde(rename = "SAST_ConcD")]
    SastConcD,
    #[serde(rename = "DAST_NDS")]
    DastNds,
    #[serde(rename = "DAST_D")]
    DastD,
}

impl CorpusKind {
    pub const ALL: [CorpusKind; 4] = [
        CorpusKind::SastD,
        CorpusKind::SastConcD,
        CorpusKind::DastNds,
        CorpusKind::DastD,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorpusKind::SastD => "SAST_D",
            CorpusKind::SastConcD => "SAST_ConcD",
            CorpusKind::DastNds => "DAST_NDS",
            CorpusKind::DastD => "DAST_D",
        }
    }

    pub fn testing_type(self) -> TestingType {
        match self {
            CorpusKind::SastD | CorpusKind::SastConcD => TestingType::Sast,
            CorpusKind::DastNds | CorpusKind::DastD => TestingType::Dast,
        }
    }
}

impl fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorpusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.replace('-', "_");
        CorpusKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(&wanted))
            .ok_or_else(|| format!("unknown corpus `{s}` (expected SAST_D, SAST_ConcD, DAST_NDS or DAST_D)"))
    }
}

/// Which features make up a finding string and how they are joined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub kind: CorpusKind,
    pub feature_order: Vec<Feature>,
    pub separator: String,
}

impl CorpusSpec {
    /// The standard feature selection for `kind` with the default separator.
    pub fn new(kind: CorpusKind) -> Self {
        let feature_order = match kind {
            CorpusKind::DastNds => vec![Feature::Name, Feature::Description, Feature::Solution],
            _ => vec![Feature::Description],
        };
        CorpusSpec {
            kind,
            feature_order,
            separator: DEFAULT_SEPARATOR.to_string(),
        }
    }

    pub fn with_separator(mut self, separator: impl Into<String>) -> Self {
        self.separator = separator.into();
        self
    }

    fn finding_string(&self, finding: &Finding) -> String {
        let parts: Vec<&str> = self
            .feature_order
            .iter()
            .map(|&f| match f {
                // fall back to headline fields only when they are not emitted anyway
                Feature::Description => [Feature::Description, Feature::Title, Feature::Name]
                    .into_iter()
                    .filter(|&g| g == Feature::Description || !self.feature_order.contains(&g))
                    .map(|g| finding.feature(g))
                    .find(|t| !t.is_empty())
                    .unwrap_or(""),
                other => finding.feature(other),
            })
            .filter(|t| !t.is_empty())
            .collect();
        parts.join(&self.separator)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub doc_id: usize,
    /// Sorted ascending, never empty.
    pub finding_ids: Vec<FindingId>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub kind: CorpusKind,
    pub documents: Vec<CorpusDocument>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus {kind} needs a {expected} dataset, got {found}")]
    SpecMismatch {
        kind: CorpusKind,
        expected: TestingType,
        found: TestingType,
    },
    #[error("corpus does not partition the dataset: {0}")]
    NotAPartition(String),
    #[error("malformed corpus file: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Build the documents of one corpus from a dataset.
pub fn build_corpus(dataset: &Dataset, spec: &CorpusSpec) -> Result<Corpus, CorpusError> {
    let expected = spec.kind.testing_type();
    if dataset.testing_type != expected {
        return Err(CorpusError::SpecMismatch {
            kind: spec.kind,
            expected,
            found: dataset.testing_type,
        });
    }

    let documents = match spec.kind {
        CorpusKind::SastConcD => {
            let by_id: BTreeMap<FindingId, &Finding> = dataset.findings.iter().map(|f| (f.id, f)).collect();
            cve_grouping(&dataset.findings)
                .into_iter()
                .enumerate()
                .map(|(doc_id, group)| {
                    let mut texts: Vec<String> = Vec::new();
                    for id in &group {
                        let text = spec.finding_string(by_id[id]);
                        if !text.is_empty() && !texts.contains(&text) {
                            texts.push(text);
                        }
                    }
                    CorpusDocument {
                        doc_id,
                        finding_ids: group.into_iter().collect(),
                        text: texts.join(&spec.separator),
                    }
                })
                .collect()
        }
        _ => dataset
            .findings
            .iter()
            .enumerate()
            .map(|(doc_id, f)| CorpusDocument {
                doc_id,
                finding_ids: vec![f.id],
                text: spec.finding_string(f),
            })
            .collect(),
    };
    Ok(Corpus {
        kind: spec.kind,
        documents,
    })
}

/// Connected components of the "shares at least one CVE-ID" relation.
///
/// Findings without CVE-IDs end up as singletons. Groups are ordered by
/// their smallest finding ID.
pub fn cve_grouping(findings: &[Finding]) -> Vec<BTreeSet<FindingId>> {
    let mut uf = UnionFind::new(findings.len());
    let mut first_holder: BTreeMap<&str, usize> = BTreeMap::new();
    for (idx, f) in findings.iter().enumerate() {
        for cve in &f.cve_ids {
            match first_holder.get(cve.as_str()) {
                Some(&other) => {
                    uf.union(idx, other);
                }
                None => {
                    first_holder.insert(cve, idx);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<FindingId>> = BTreeMap::new();
    for (idx, f) in findings.iter().enumerate() {
        groups.entry(uf.find(idx)).or_default().insert(f.id);
    }
    let mut out: Vec<BTreeSet<FindingId>> = groups.into_values().collect();
    out.sort_by_key(|g| *g.first().expect("non-empty group"));
    out
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.documents.iter().map(|d| d.text.as_str()).collect()
    }

    /// Every finding of the universe appears in exactly one document and
    /// doc IDs are the positions `0..n`.
    pub fn check_partition(&self, universe: &BTreeSet<FindingId>) -> Result<(), CorpusError> {
        let mut seen = BTreeSet::new();
        for (pos, doc) in self.documents.iter().enumerate() {
            if doc.doc_id != pos {
                return Err(CorpusError::NotAPartition(format!(
                    "document at position {pos} has doc_id {}",
                    doc.doc_id
                )));
            }
            if doc.finding_ids.is_empty() {
                return Err(CorpusError::NotAPartition(format!("document {pos} is empty")));
            }
            for id in &doc.finding_ids {
                if !universe.contains(id) {
                    return Err(CorpusError::NotAPartition(format!("unknown finding {id}")));
                }
                if !seen.insert(*id) {
                    return Err(CorpusError::NotAPartition(format!(
                        "finding {id} in more than one document"
                    )));
                }
            }
        }
        if seen.len() != universe.len() {
            return Err(CorpusError::NotAPartition(format!(
                "{} findings not covered",
                universe.len() - seen.len()
            )));
        }
        Ok(())
    }

    /// All finding IDs covered by the corpus.
    pub fn finding_universe(&self) -> BTreeSet<FindingId> {
        self.documents
            .iter()
            .flat_map(|d| d.finding_ids.iter().copied())
            .collect()
    }

    pub fn from_json_str(s: &str) -> Result<Self, CorpusError> {
        let corpus: Corpus = serde_json::from_str(s).map_err(|e| CorpusError::Malformed(e.to_string()))?;
        let universe = corpus.finding_universe();
        corpus.check_partition(&universe)?;
        Ok(corpus)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finding(id: u64, tt: TestingType, feats: &[(Feature, &str)], cves: &[&str]) -> Finding {
        Finding {
            id: FindingId(id),
            tool: "t".into(),
            testing_type: tt,
            features: feats.iter().map(|(k, v)| (*k, v.to_string())).collect(),
            cve_ids: cves.iter().map(|s| s.to_string()).collect(),
            source_report: String::new(),
        }
    }

    fn dataset(tt: TestingType, findings: Vec<Finding>) -> Dataset {
        Dataset {
            testing_type: tt,
            findings,
        }
    }

    #[test]
    fn nds_concatenates_name_description_solution() {
        let ds = dataset(
            TestingType::Dast,
            vec![finding(
                1,
                TestingType::Dast,
                &[
                    (Feature::Name, "X"),
                    (Feature::Description, "Y"),
                    (Feature::Solution, "Z"),
                ],
                &[],
            )],
        );
        let spaced = CorpusSpec::new(CorpusKind::DastNds).with_separator(" ");
        assert_eq!(build_corpus(&ds, &spaced).unwrap().documents[0].text, "X Y Z");
        let default = CorpusSpec::new(CorpusKind::DastNds);
        assert_eq!(build_corpus(&ds, &default).unwrap().documents[0].text, "X. Y. Z");
    }

    #[test]
    fn nds_skips_missing_parts() {
        let ds = dataset(
            TestingType::Dast,
            vec![finding(
                1,
                TestingType::Dast,
                &[(Feature::Name, "X"), (Feature::Solution, "Z")],
                &[],
            )],
        );
        let c = build_corpus(&ds, &CorpusSpec::new(CorpusKind::DastNds)).unwrap();
        assert_eq!(c.documents[0].text, "X. Z");
    }

    #[test]
    fn concd_without_cve_is_singleton() {
        let ds = dataset(
            TestingType::Sast,
            vec![finding(
                5,
                TestingType::Sast,
                &[(Feature::Description, "hardcoded key")],
                &[],
            )],
        );
        let c = build_corpus(&ds, &CorpusSpec::new(CorpusKind::SastConcD)).unwrap();
        assert_eq!(c.documents.len(), 1);
        assert_eq!(c.documents[0].finding_ids, vec![FindingId(5)]);
        assert_eq!(c.documents[0].text, "hardcoded key");
    }

    #[test]
    fn concd_merges_shared_cve() {
        let ds = dataset(
            TestingType::Sast,
            vec![
                finding(
                    3,
                    TestingType::Sast,
                    &[(Feature::Description, "dA")],
                    &["CVE-2021-23337"],
                ),
                finding(5, TestingType::Sast, &[(Feature::Description, "other")], &[]),
                finding(
                    7,
                    TestingType::Sast,
                    &[(Feature::Description, "dB")],
                    &["CVE-2021-23337"],
                ),
            ],
        );
        let c = build_corpus(&ds, &CorpusSpec::new(CorpusKind::SastConcD)).unwrap();
        assert_eq!(c.documents.len(), 2);
        assert_eq!(c.documents[0].finding_ids, vec![FindingId(3), FindingId(7)]);
        assert_eq!(c.documents[0].text, "dA. dB");
        assert_eq!(c.documents[1].finding_ids, vec![FindingId(5)]);
    }

    #[test]
    fn concd_deduplicates_repeated_descriptions() {
        let ds = dataset(
            TestingType::Sast,
            vec![
                finding(
                    1,
                    TestingType::Sast,
                    &[(Feature::Description, "same")],
                    &["CVE-2020-0001"],
                ),
                finding(
                    2,
                    TestingType::Sast,
                    &[(Feature::Description, "same")],
                    &["CVE-2020-0001"],
                ),
                finding(
                    3,
                    TestingType::Sast,
                    &[(Feature::Description, "more")],
                    &["CVE-2020-0001"],
                ),
            ],
        );
        let c = build_corpus(&ds, &CorpusSpec::new(CorpusKind::SastConcD)).unwrap();
        assert_eq!(c.documents[0].text, "same. more");
    }

    #[test]
    fn kind_must_match_testing_type() {
        let ds = dataset(TestingType::Dast, vec![]);
        assert!(matches!(
            build_corpus(&ds, &CorpusSpec::new(CorpusKind::SastD)),
            Err(CorpusError::SpecMismatch { .. })
        ));
    }

    #[test]
    fn grouping_is_transitive() {
        let fs = vec![
            finding(1, TestingType::Sast, &[], &["CVE-2000-0001"]),
            finding(2, TestingType::Sast, &[], &["CVE-2000-0001", "CVE-2000-0002"]),
            finding(3, TestingType::Sast, &[], &["CVE-2000-0002"]),
        ];
        let groups = cve_grouping(&fs);
        assert_eq!(groups, vec![BTreeSet::from([FindingId(1), FindingId(2), FindingId(3)])]);
    }

    #[test]
    fn grouping_degenerate_cases() {
        let fs = vec![
            finding(1, TestingType::Sast, &[], &[]),
            finding(2, TestingType::Sast, &[], &[]),
        ];
        assert_eq!(cve_grouping(&fs).len(), 2);
        assert_eq!(cve_grouping(&fs[..1]), vec![BTreeSet::from([FindingId(1)])]);
    }

    #[test]
    fn kind_parsing_accepts_hyphenated_names() {
        assert_eq!("SAST-ConcD".parse::<CorpusKind>().unwrap(), CorpusKind::SastConcD);
        assert_eq!("dast_nds".parse::<CorpusKind>().unwrap(), CorpusKind::DastNds);
    }
}
