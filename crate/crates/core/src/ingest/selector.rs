//! Dot-path selectors into JSON report documents.
//!
//! A selector is a sequence of object keys separated by `.`. A key suffixed
//! with `[*]` flattens the array found under it, so
//! `Results[*].Vulnerabilities` visits the `Vulnerabilities` value of every
//! element of `Results`. The empty selector addresses the document root.
//! There are no filters or indices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Step {
    Key(String),
    Flatten,
}

/// A parsed dot-path selector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Selector {
    raw: String,
    steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid selector `{selector}`: {reason}")]
pub struct SelectorError {
    pub selector: String,
    pub reason: &'static str,
}

impl Selector {
    pub fn root() -> Self {
        Selector {
            raw: String::new(),
            steps: Vec::new(),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    /// All values the selector reaches, in document order.
    ///
    /// Missing keys contribute nothing; `[*]` applied to a non-array
    /// contributes nothing.
    pub fn select<'a>(&self, doc: &'a Value) -> Vec<&'a Value> {
        self.walk(doc).0
    }

    /// Like [`Selector::select`], but reports a key that is absent before any
    /// array has been flattened. Returns the offending key.
    ///
    /// Once a `[*]` step has run, missing keys are tolerated: sibling elements
    /// of real reports routinely omit optional members.
    pub fn select_strict<'a>(&self, doc: &'a Value) -> Result<Vec<&'a Value>, String> {
        match self.walk(doc) {
            (_, Some(key)) => Err(key.to_string()),
            (values, None) => Ok(values),
        }
    }

    fn walk<'a>(&self, doc: &'a Value) -> (Vec<&'a Value>, Option<&str>) {
        let mut current = vec![doc];
        let mut flattened = false;
        let mut missing = None;
        for step in &self.steps {
            let mut next = Vec::with_capacity(current.len());
            for value in &current {
                match step {
                    Step::Key(key) => {
                        if let Some(v) = value.as_object().and_then(|o| o.get(key)) {
                            next.push(v);
                        }
                    }
                    Step::Flatten => {
                        if let Some(items) = value.as_array() {
                            next.extend(items.iter());
                        }
                    }
                }
            }
            match step {
                Step::Key(key) if next.is_empty() && !flattened && missing.is_none() => missing = Some(key.as_str()),
                Step::Flatten => flattened = true,
                Step::Key(_) => {}
            }
            current = next;
        }
        (current, missing)
    }

    /// Values reached by the selector rendered as text.
    ///
    /// Scalars are stringified, arrays are flattened recursively, nulls and
    /// objects are skipped. Returns the individual pieces.
    pub fn select_text(&self, doc: &Value) -> Vec<String> {
        let mut out = Vec::new();
        for v in self.select(doc) {
            collect_text(v, &mut out);
        }
        out
    }
}

fn collect_text(value: &Value, out: &mut Vec<String>) {
    match value {
        Value::Null | Value::Object(_) => {}
        Value::Bool(b) => out.push(b.to_string()),
        Value::Number(n) => out.push(n.to_string()),
        Value::String(s) => out.push(s.clone()),
        Value::Array(items) => items.iter().for_each(|v| collect_text(v, out)),
    }
}

impl FromStr for Selector {
    type Err = SelectorError;

    fn from_str(raw: &str) -> Result<Self, Self::Err> {
        let err = |reason| SelectorError {
            selector: raw.to_string(),
            reason,
        };
        let mut steps = Vec::new();
        if raw.is_empty() {
            return Ok(Selector::root());
        }
        for segment in raw.split('.') {
            let mut key = segment;
            let mut flattens = 0;
            while let Some(stripped) = key.strip_suffix("[*]") {
                key = stripped;
                flattens += 1;
            }
            if key.contains('[') || key.contains(']') {
                return Err(err("only `[*]` array flattening is supported"));
            }
            if key.is_empty() && flattens == 0 {
                return Err(err("empty path segment"));
            }
            if !key.is_empty() {
                steps.push(Step::Key(key.to_string()));
            }
            steps.extend(std::iter::repeat_n(Step::Flatten, flattens));
        }
        Ok(Selector {
            raw: raw.to_string(),
            steps,
        })
    }
}

impl TryFrom<String> for Selector {
    type Error = SelectorError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Selector> for String {
    fn from(s: Selector) -> Self {
        s.raw
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}
