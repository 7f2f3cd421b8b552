use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Feature, IngestError, Selector, TestingType};

/// How finding IDs are assigned while parsing a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IdStrategy {
    /// Consecutive integers starting at the caller's `next_id`.
    #[default]
    Sequential,
    /// Integer read from a member of each finding object.
    FromField(Selector),
}

/// Where one tool keeps its findings and what it calls each feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaMapping {
    pub tool_name: String,
    pub testing_type: TestingType,
    pub findings_path: Selector,
    pub feature_selectors: BTreeMap<Feature, Selector>,
    #[serde(default)]
    pub id_strategy: IdStrategy,
}

impl SchemaMapping {
    fn check(&self) -> Result<(), IngestError> {
        if self.tool_name.trim().is_empty() {
            return Err(IngestError::MalformedCatalog("empty tool_name".into()));
        }
        if !self.feature_selectors.contains_key(&Feature::Description)
            && !self.feature_selectors.contains_key(&Feature::Title)
        {
            return Err(IngestError::MalformedCatalog(format!(
                "mapping for `{}` selects neither description nor title",
                self.tool_name
            )));
        }
        Ok(())
    }
}

/// Parse a catalog document: a JSON array of [`SchemaMapping`] entries.
pub fn parse_schema_catalog(text: &str) -> Result<Vec<SchemaMapping>, IngestError> {
    let mappings: Vec<SchemaMapping> =
        serde_json::from_str(text).map_err(|e| IngestError::MalformedCatalog(e.to_string()))?;
    let mut names = BTreeSet::new();
    for m in &mappings {
        m.check()?;
        if !names.insert(m.tool_name.as_str()) {
            return Err(IngestError::DuplicateTool(m.tool_name.clone()));
        }
    }
    Ok(mappings)
}

pub fn load_schema_catalog(path: &Path) -> Result<Vec<SchemaMapping>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    parse_schema_catalog(&text)
}

/// Mappings for the nine scanners the project ships presets for.
pub fn builtin_catalog() -> Vec<SchemaMapping> {
    parse_schema_catalog(include_str!("../../catalog/tools.json")).expect("bundled catalog is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_catalog_covers_nine_tools() {
        let catalog = builtin_catalog();
        assert_eq!(catalog.len(), 9);
        let sast = catalog.iter().filter(|m| m.testing_type == TestingType::Sast).count();
        assert_eq!(sast, 7);
    }

    #[test]
    fn empty_array_is_empty_catalog() {
        assert!(parse_schema_catalog("[]").unwrap().is_empty());
    }

    #[test]
    fn duplicate_tool_is_rejected() {
        let entry = r#"{"tool_name":"trivy","testing_type":"SAST",
            "findings_path":"Results[*].Vulnerabilities",
            "feature_selectors":{"description":"Description"}}"#;
        let err = parse_schema_catalog(&format!("[{entry},{entry}]")).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateTool(name) if name == "trivy"));
    }

    #[test]
    fn missing_keys_and_bad_json_are_malformed() {
        for text in [
            "{",
            r#"[{"tool_name":"x","testing_type":"SAST"}]"#,
            r#"[{"tool_name":"x","testing_type":"SAST","findings_path":"a",
                "feature_selectors":{"solution":"fix"}}]"#,
            r#"[{"tool_name":"x","testing_type":"SAST","findings_path":"a",
                "feature_selectors":{"colour":"c"}}]"#,
        ] {
            assert!(
                matches!(parse_schema_catalog(text), Err(IngestError::MalformedCatalog(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn from_field_strategy_parses() {
        let text = r#"[{"tool_name":"x","testing_type":"DAST","findings_path":"items",
            "feature_selectors":{"title":"t"},"id_strategy":{"from_field":"meta.id"}}]"#;
        let m = &parse_schema_catalog(text).unwrap()[0];
        assert_eq!(m.id_strategy, IdStrategy::FromField("meta.id".parse().unwrap()));
    }
}
