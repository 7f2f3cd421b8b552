//! Settings shared by all subcommands: a JSON config file overlaid with
//! command-line flags. Flags win.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use dedupsec::evaluation::threshold_grid;
use dedupsec::{default_grid, CorpusKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Lsi,
    /// Plain TF-IDF cosine, the full-rank reference for LSI.
    Tfidf,
    Graph,
    Embedding,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Lsi => "lsi",
            Engine::Tfidf => "tfidf",
            Engine::Graph => "graph",
            Engine::Embedding => "embedding",
        }
    }
}

/// A threshold grid written as `lo:hi:step` or as an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Thresholds {
    Range(String),
    List(Vec<f64>),
}

impl Thresholds {
    pub fn grid(&self) -> Result<Vec<f64>> {
        match self {
            Thresholds::List(v) => Ok(v.clone()),
            Thresholds::Range(s) => {
                let parts: Vec<&str> = s.split(':').collect();
                let [lo, hi, step] = parts.as_slice() else {
                    bail!("thresholds must look like lo:hi:step, got `{s}`");
                };
                let num = |x: &str| {
                    x.trim()
                        .parse::<f64>()
                        .with_context(|| format!("bad number `{x}` in `{s}`"))
                };
                Ok(threshold_grid(num(lo)?, num(hi)?, num(step)?)?)
            }
        }
    }
}

impl FromStr for Thresholds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.contains(':') {
            return Ok(Thresholds::Range(s.to_string()));
        }
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad threshold `{t}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Thresholds::List)
    }
}

/// Every setting a subcommand may take from the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub dataset: Option<PathBuf>,
    pub corpus: Option<CorpusKind>,
    pub separator: Option<String>,
    pub engine: Option<Engine>,
    pub k: Option<usize>,
    pub graph: Option<PathBuf>,
    /// A JSONL vector file or an `http(s)://` embedding service.
    pub embeddings: Option<String>,
    pub thresholds: Option<Thresholds>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub serve_addr: Option<String>,
    pub data_dir: Option<PathBuf>,
}

impl Settings {
    /// Read a config file. Relative paths in it are taken relative to the
    /// file's own directory.
    pub fn load(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut s: Settings =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut s.dataset,
            &mut s.graph,
            &mut s.truth,
            &mut s.out,
            &mut s.catalog,
            &mut s.data_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(e) = &mut s.embeddings {
            if !is_url(e) && Path::new(e).is_relative() {
                *e = base.join(&*e).to_string_lossy().into_owned();
            }
        }
        Ok(s)
    }

    /// `self` with every field set in `flags` replaced.
    pub fn overlay(self, flags: Settings) -> Settings {
        Settings {
            dataset: flags.dataset.or(self.dataset),
            corpus: flags.corpus.or(self.corpus),
            separator: flags.separator.or(self.separator),
            engine: flags.engine.or(self.engine),
            k: flags.k.or(self.k),
            graph: flags.graph.or(self.graph),
            embeddings: flags.embeddings.or(self.embeddings),
            thresholds: flags.thresholds.or(self.thresholds),
            truth: flags.truth.or(self.truth),
            out: flags.out.or(self.out),
            catalog: flags.catalog.or(self.catalog),
            serve_addr: flags.serve_addr.or(self.serve_addr),
            data_dir: flags.data_dir.or(self.data_dir),
        }
    }

    pub fn require<'a, T>(field: &'a Option<T>, name: &str) -> Result<&'a T> {
        field
            .as_ref()
            .with_context(|| format!("--{name} is required (flag or config file)"))
    }
}

pub fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

/// Similarity engine with the parameters it needs.
#[derive(Debug, Clone, PartialEq)]
pub enum EngineParams {
    Lsi { k: Option<usize> },
    Tfidf,
    Graph { graph: PathBuf },
    Embedding { source: String },
}

impl EngineParams {
    pub fn from_settings(s: &Settings) -> Result<EngineParams> {
        Ok(match Settings::require(&s.engine, "engine")? {
            Engine::Lsi => {
                if s.k == Some(0) {
                    bail!("--k must be positive");
                }
                EngineParams::Lsi { k: s.k }
            }
            Engine::Tfidf => EngineParams::Tfidf,
            Engine::Graph => EngineParams::Graph {
                graph: Settings::require(&s.graph, "graph")?.clone(),
            },
            Engine::Embedding => EngineParams::Embedding {
                source: Settings::require(&s.embeddings, "embeddings")?.clone(),
            },
        })
    }
}

/// Everything `run` needs, validated.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub corpus: CorpusKind,
    pub separator: Option<String>,
    pub engine: EngineParams,
    pub thresholds: Vec<f64>,
    pub truth: PathBuf,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<RunConfig> {
        let thresholds = match &s.thresholds {
            Some(t) => t.grid()?,
            None => default_grid(),
        };
        if thresholds.is_empty() || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            bail!("thresholds must be non-empty and within [0, 1]");
        }
        Ok(RunConfig {
            dataset: Settings::require(&s.dataset, "dataset")?.clone(),
            corpus: *Settings::require(&s.corpus, "corpus")?,
            separator: s.separator.clone(),
            engine: EngineParams::from_settings(s)?,
            thresholds,
            truth: Settings::require(&s.truth, "truth")?.clone(),
            out: Settings::require(&s.out, "out")?.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_config() {
        let file = Settings {
            engine: Some(Engine::Lsi),
            k: Some(50),
            truth: Some("t.json".into()),
            ..Settings::default()
        };
        let flags = Settings {
            k: Some(10),
            ..Settings::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.k, Some(10));
        assert_eq!(merged.engine, Some(Engine::Lsi));
        assert_eq!(merged.truth, Some("t.json".into()));
    }

    #[test]
    fn config_paths_are_relative_to_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(
            &path,
            r#"{"dataset":"d.json","embeddings":"http://localhost:9/embed","thresholds":"0.1:0.3:0.1","corpus":"SAST_ConcD"}"#,
        )
        .unwrap();
        let s = Settings::load(&path).unwrap();
        assert_eq!(s.dataset, Some(dir.path().join("d.json")));
        assert_eq!(s.embeddings.as_deref(), Some("http://localhost:9/embed"));
        assert_eq!(s.thresholds.unwrap().grid().unwrap(), vec![0.1, 0.2, 0.3]);
        assert_eq!(s.corpus, Some(CorpusKind::SastConcD));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"engin":"lsi"}"#).unwrap();
        assert!(Settings::load(&path).is_err());
    }

    #[test]
    fn engine_params_must_be_complete() {
        let s = Settings {
            engine: Some(Engine::Graph),
            ..Settings::default()
        };
        let err = EngineParams::from_settings(&s).unwrap_err().to_string();
        assert!(err.contains("--graph"), "{err}");
        let s = Settings {
            engine: Some(Engine::Embedding),
            ..Settings::default()
        };
        assert!(EngineParams::from_settings(&s).is_err());
    }

    #[test]
    fn threshold_forms() {
        assert_eq!("0.5,0.7".parse::<Thresholds>().unwrap().grid().unwrap(), vec![0.5, 0.7]);
        assert_eq!(
            "0.1:0.95:0.05".parse::<Thresholds>().unwrap().grid().unwrap(),
            default_grid()
        );
        assert!("0.1:2:0.1".parse::<Thresholds>().unwrap().grid().is_err());
        assert!("0.1:0.2".parse::<Thresholds>().unwrap().grid().is_err());
    }

    #[test]
    fn run_config_checks_the_grid() {
        let s = Settings {
            dataset: Some("d".into()),
            corpus: Some(CorpusKind::DastNds),
            engine: Some(Engine::Tfidf),
            truth: Some("t".into()),
            out: Some("o".into()),
            thresholds: Some(Thresholds::List(vec![0.5, 1.5])),
            ..Settings::default()
        };
        assert!(RunConfig::from_settings(&s).is_err());
        let ok = Settings { thresholds: None, ..s };
        assert_eq!(RunConfig::from_settings(&ok).unwrap().thresholds, default_grid());
    }
}
