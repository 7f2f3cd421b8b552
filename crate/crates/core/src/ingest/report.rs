use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde_json::Value;
use unicode_normalization::UnicodeNormalization;

use super::{Feature, Finding, FindingId, IdStrategy, IngestError, SchemaMapping};

static CVE_PATTERN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"CVE-\d{4}-\d{4,}").expect("valid regex"));
static CVE_EXACT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^CVE-\d{4}-\d{4,}$").expect("valid regex"));
static LINE_BREAKS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[ \t]*[\r\n\u{2028}\u{2029}][\s]*").expect("valid regex"));

pub fn is_cve_id(s: &str) -> bool {
    CVE_EXACT.is_match(s)
}

/// NFC-normalize, collapse line breaks (with surrounding blanks) into a
/// single space and trim.
pub fn normalize_text(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    LINE_BREAKS.replace_all(&nfc, " ").trim().to_string()
}

/// CVE identifiers occurring in the feature texts, in order of first
/// appearance. The `cve_ids` feature is scanned first, then the remaining
/// features in canonical order.
pub fn harvest_cve_ids(features: &BTreeMap<Feature, String>) -> Vec<String> {
    let ordered = features
        .get(&Feature::CveIds)
        .into_iter()
        .chain(features.iter().filter(|(k, _)| **k != Feature::CveIds).map(|(_, v)| v));
    let mut out: Vec<String> = Vec::new();
    for text in ordered {
        for m in CVE_PATTERN.find_iter(text) {
            if !out.iter().any(|c| c == m.as_str()) {
                out.push(m.as_str().to_string());
            }
        }
    }
    out
}

/// Parse one report file with `mapping`, numbering findings from `next_id`.
pub fn parse_report(report: &Path, mapping: &SchemaMapping, next_id: u64) -> Result<Vec<Finding>, IngestError> {
    let name = report
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| report.display().to_string());
    let text = std::fs::read_to_string(report).map_err(|e| IngestError::io(report, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| IngestError::MalformedReport {
        report: name.clone(),
        reason: e.to_string(),
    })?;
    parse_report_value(&doc, &name, mapping, next_id)
}

/// Parse an already-decoded report document. `source` names the report in
/// the resulting findings and in errors.
pub fn parse_report_value(
    doc: &Value,
    source: &str,
    mapping: &SchemaMapping,
    next_id: u64,
) -> Result<Vec<Finding>, IngestError> {
    let containers = mapping
        .findings_path
        .select_strict(doc)
        .map_err(|key| IngestError::PathNotFound {
            report: source.to_string(),
            selector: mapping.findings_path.to_string(),
            key,
        })?;

    let mut objects = Vec::new();
    for container in containers {
        match container {
            Value::Array(items) => objects.extend(items.iter()),
            // paths such as `entries[*].finding` reach one finding object each
            Value::Object(_) => objects.push(container),
            _ => {
                return Err(IngestError::MalformedReport {
                    report: source.to_string(),
                    reason: format!(
                        "findings path `{}` addresses neither an array nor an object",
                        mapping.findings_path
                    ),
                })
            }
        }
    }

    let mut findings = Vec::with_capacity(objects.len());
    for (offset, obj) in objects.into_iter().enumerate() {
        let features: BTreeMap<Feature, String> = mapping
            .feature_selectors
            .iter()
            .map(|(feature, selector)| {
                let joined = selector.select_text(obj).join(" ");
                (*feature, normalize_text(&joined))
            })
            .collect();
        let id = match &mapping.id_strategy {
            IdStrategy::Sequential => next_id + offset as u64,
            IdStrategy::FromField(selector) => read_id(obj, selector, source)?,
        };
        let cve_ids = harvest_cve_ids(&features);
        findings.push(Finding {
            id: FindingId(id),
            tool: mapping.tool_name.clone(),
            testing_type: mapping.testing_type,
            features,
            cve_ids,
            source_report: source.to_string(),
        });
    }
    Ok(findings)
}

fn read_id(obj: &Value, selector: &super::Selector, source: &str) -> Result<u64, IngestError> {
    let bad = |reason: String| IngestError::MalformedReport {
        report: source.to_string(),
        reason,
    };
    let value = selector
        .select(obj)
        .into_iter()
        .next()
        .ok_or_else(|| bad(format!("finding without id field `{selector}`")))?;
    match value {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .ok_or_else(|| bad(format!("id field `{selector}` is not a non-negative integer: {value}")))
}
