//! Normalization of heterogeneous scanner reports into findings.
//!
//! Every tool exports its findings under different property names; a
//! [`SchemaMapping`] tells the parser where the finding objects live and which
//! member carries which canonical [`Feature`]. The result of ingesting one
//! testing iteration is a [`Dataset`], whose JSON form is the interchange
//! format for every later stage.

mod catalog;
mod report;
pub mod selector;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use catalog::{builtin_catalog, load_schema_catalog, parse_schema_catalog, IdStrategy, SchemaMapping};
pub use report::{harvest_cve_ids, is_cve_id, normalize_text, parse_report, parse_report_value};
pub use selector::Selector;

/// Whether a tool inspects static artifacts or the running application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TestingType {
    #[serde(rename = "SAST")]
    Sast,
    #[serde(rename = "DAST")]
    Dast,
}

impl fmt::Display for TestingType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestingType::Sast => "SAST",
            TestingType::Dast => "DAST",
        })
    }
}

impl std::str::FromStr for TestingType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SAST" => Ok(TestingType::Sast),
            "DAST" => Ok(TestingType::Dast),
            other => Err(format!("unknown testing type `{other}` (expected SAST or DAST)")),
        }
    }
}

/// Dataset-scoped integer identifier of a finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FindingId(pub u64);

impl fmt::Display for FindingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for FindingId {
    fn from(v: u64) -> Self {
        FindingId(v)
    }
}

/// Canonical finding features a schema mapping can select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Description,
    Name,
    Solution,
    CveIds,
    Location,
    Title,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Description,
        Feature::Name,
        Feature::Solution,
        Feature::CveIds,
        Feature::Location,
        Feature::Title,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Description => "description",
            Feature::Name => "name",
            Feature::Solution => "solution",
            Feature::CveIds => "cve_ids",
            Feature::Location => "location",
            Feature::Title => "title",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown feature `{s}`"))
    }
}

/// One normalized scanner result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub id: FindingId,
    pub tool: String,
    pub testing_type: TestingType,
    pub features: BTreeMap<Feature, String>,
    #[serde(default)]
    pub cve_ids: Vec<String>,
    #[serde(default)]
    pub source_report: String,
}

impl Finding {
    /// Feature text, or the empty string when the tool did not provide it.
    pub fn feature(&self, feature: Feature) -> &str {
        self.features.get(&feature).map(String::as_str).unwrap_or("")
    }

    /// The text describing the problem: the description, falling back to the
    /// title and then the name for tools that only emit a headline.
    pub fn description_text(&self) -> &str {
        [Feature::Description, Feature::Title, Feature::Name]
            .into_iter()
            .map(|f| self.feature(f))
            .find(|t| !t.is_empty())
            .unwrap_or("")
    }
}

/// All findings of one testing iteration for a single testing type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Dataset {
    pub testing_type: TestingType,
    pub findings: Vec<Finding>,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed schema catalog: {0}")]
    MalformedCatalog(String),
    #[error("duplicate tool `{0}` in schema catalog")]
    DuplicateTool(String),
    #[error("malformed report {report}: {reason}")]
    MalformedReport { report: String, reason: String },
    #[error("findings path `{selector}` not found in {report} (missing key `{key}`)")]
    PathNotFound {
        report: String,
        selector: String,
        key: String,
    },
    #[error("finding id {0} occurs more than once")]
    DuplicateFindingId(FindingId),
    #[error("finding {id} from {tool} is {found}, dataset is {expected}")]
    MixedTestingType {
        id: FindingId,
        tool: String,
        expected: TestingType,
        found: TestingType,
    },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Concatenate per-tool finding lists into one dataset.
///
/// Findings keep tool order, then report order. IDs must be unique across the
/// whole dataset and every finding must carry `testing_type`.
pub fn assemble_dataset(
    parsed: Vec<(String, Vec<Finding>)>,
    testing_type: TestingType,
) -> Result<Dataset, IngestError> {
    let mut seen = BTreeSet::new();
    let mut findings = Vec::new();
    for (tool, batch) in parsed {
        for finding in batch {
            if finding.testing_type != testing_type {
                return Err(IngestError::MixedTestingType {
                    id: finding.id,
                    tool: tool.clone(),
                    expected: testing_type,
                    found: finding.testing_type,
                });
            }
            if !seen.insert(finding.id) {
                return Err(IngestError::DuplicateFindingId(finding.id));
            }
            findings.push(finding);
        }
    }
    Ok(Dataset { testing_type, findings })
}

#[derive(Deserialize)]
struct RawDataset {
    testing_type: TestingType,
    findings: Vec<RawFinding>,
}

#[derive(Deserialize)]
struct RawFinding {
    id: FindingId,
    tool: String,
    #[serde(default)]
    testing_type: Option<TestingType>,
    #[serde(default)]
    features: BTreeMap<Feature, Option<String>>,
    #[serde(default)]
    cve_ids: Vec<String>,
    #[serde(default)]
    source_report: String,
}

impl<'de> Deserialize<'de> for Dataset {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawDataset::deserialize(deserializer)?;
        let findings = raw
            .findings
            .into_iter()
            .map(|f| Finding {
                id: f.id,
                tool: f.tool,
                testing_type: f.testing_type.unwrap_or(raw.testing_type),
                features: f
                    .features
                    .into_iter()
                    .map(|(k, v)| (k, v.unwrap_or_default()))
                    .collect(),
                cve_ids: f.cve_ids,
                source_report: f.source_report,
            })
            .collect();
        Ok(Dataset {
            testing_type: raw.testing_type,
            findings,
        })
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.findings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<FindingId> {
        self.findings.iter().map(|f| f.id).collect()
    }

    pub fn get(&self, id: FindingId) -> Option<&Finding> {
        self.findings.iter().find(|f| f.id == id)
    }

    /// Check the dataset invariants: unique IDs, a single testing type and
    /// well-formed CVE identifiers.
    pub fn validate(&self) -> Result<(), IngestError> {
        let mut seen = BTreeSet::new();
        for f in &self.findings {
            if !seen.insert(f.id) {
                return Err(IngestError::DuplicateFindingId(f.id));
            }
            if f.testing_type != self.testing_type {
                return Err(IngestError::MixedTestingType {
                    id: f.id,
                    tool: f.tool.clone(),
                    expected: self.testing_type,
                    found: f.testing_type,
                });
            }
            if let Some(bad) = f.cve_ids.iter().find(|c| !is_cve_id(c)) {
                return Err(IngestError::InvalidDataset(format!(
                    "finding {} has malformed CVE id `{bad}`",
                    f.id
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, IngestError> {
        let ds: Dataset = serde_json::from_str(s).map_err(|e| IngestError::InvalidDataset(e.to_string()))?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finding(id: u64, tool: &str, tt: TestingType) -> Finding {
        Finding {
            id: FindingId(id),
            tool: tool.into(),
            testing_type: tt,
            features: BTreeMap::from([(Feature::Description, format!("finding {id}"))]),
            cve_ids: vec![],
            source_report: format!("{tool}.json"),
        }
    }

    #[test]
    fn assemble_keeps_tool_then_report_order() {
        let ds = assemble_dataset(
            vec![
                (
                    "trivy".into(),
                    vec![
                        finding(1, "trivy", TestingType::Sast),
                        finding(2, "trivy", TestingType::Sast),
                    ],
                ),
                ("semgrep".into(), vec![finding(3, "semgrep", TestingType::Sast)]),
            ],
            TestingType::Sast,
        )
        .unwrap();
        let ids: Vec<u64> = ds.findings.iter().map(|f| f.id.0).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn assemble_single_finding() {
        let ds = assemble_dataset(
            vec![("zap".into(), vec![finding(1, "zap", TestingType::Dast)])],
            TestingType::Dast,
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn assemble_rejects_repeated_id() {
        let err = assemble_dataset(
            vec![
                ("a".into(), vec![finding(42, "a", TestingType::Sast)]),
                ("b".into(), vec![finding(42, "b", TestingType::Sast)]),
            ],
            TestingType::Sast,
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::DuplicateFindingId(FindingId(42))));
    }

    #[test]
    fn assemble_rejects_mixed_types() {
        let err = assemble_dataset(
            vec![("zap".into(), vec![finding(1, "zap", TestingType::Dast)])],
            TestingType::Sast,
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::MixedTestingType { .. }));
    }

    #[test]
    fn dataset_json_fills_testing_type_and_null_features() {
        let json = r#"{"testing_type":"DAST","findings":[
            {"id":1,"tool":"zap","features":{"description":"d","solution":null},"cve_ids":[]}
        ]}"#;
        let ds = Dataset::from_json_str(json).unwrap();
        assert_eq!(ds.findings[0].testing_type, TestingType::Dast);
        assert_eq!(ds.findings[0].feature(Feature::Solution), "");
        assert_eq!(ds.findings[0].feature(Feature::Name), "");
    }

    #[test]
    fn dataset_json_rejects_bad_cve() {
        let json = r#"{"testing_type":"SAST","findings":[
            {"id":1,"tool":"trivy","features":{},"cve_ids":["GHSA-xxxx"]}
        ]}"#;
        assert!(matches!(
            Dataset::from_json_str(json),
            Err(IngestError::InvalidDataset(_))
        ));
    }

    #[test]
    fn description_falls_back_to_title() {
        let mut f = finding(1, "gitleaks", TestingType::Sast);
        f.features.clear();
        f.features.insert(Feature::Title, "AWS key".into());
        assert_eq!(f.description_text(), "AWS key");
    }
}
