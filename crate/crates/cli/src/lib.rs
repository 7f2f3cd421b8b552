//! The `dedupsec` command line: each pipeline stage as a subcommand, plus
//! `run` for the whole pipeline and `serve` for the annotation service.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dedupsec::evaluation::{plot_csv, summarize};
use dedupsec::{cluster, evaluate, sweep, ClusterSet, Corpus, CorpusKind, Dataset, SimilarityMatrix, TestingType};

use crate::config::{Engine, EngineParams, RunConfig, Settings, Thresholds};
use crate::pipeline::{to_json, write_output};

#[derive(Parser, Debug)]
#[command(
    name = "dedupsec",
    version,
    about = "Find duplicate findings across security-testing reports"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by all subcommands. Each may also come from `--config`.
#[derive(Args, Debug, Default)]
pub struct GlobalArgs {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// SAST_D, SAST_ConcD, DAST_NDS or DAST_D.
    #[arg(long, global = true)]
    pub corpus: Option<CorpusKind>,
    /// Joins the features of a finding string.
    #[arg(long, global = true)]
    pub separator: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub engine: Option<Engine>,
    /// LSI rank.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Lexical graph: a WordNet dict directory or a synset TSV.
    #[arg(long, global = true)]
    pub graph: Option<PathBuf>,
    /// Embedding vectors (JSONL file) or an embedding service URL.
    #[arg(long, global = true)]
    pub embeddings: Option<String>,
    /// `lo:hi:step` or a comma-separated list.
    #[arg(long, global = true)]
    pub thresholds: Option<Thresholds>,
    /// Ground-truth clusters.
    #[arg(long, global = true)]
    pub truth: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Report schema catalog; the bundled one by default.
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    #[arg(long, global = true, env = "DEDUPSEC_SERVE_ADDR")]
    pub serve_addr: Option<String>,
    #[arg(long, global = true, env = "DEDUPSEC_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
}

impl GlobalArgs {
    fn settings(&self) -> Result<Settings> {
        let flags = Settings {
            dataset: self.dataset.clone(),
            corpus: self.corpus,
            separator: self.separator.clone(),
            engine: self.engine,
            k: self.k,
            graph: self.graph.clone(),
            embeddings: self.embeddings.clone(),
            thresholds: self.thresholds.clone(),
            truth: self.truth.clone(),
            out: self.out.clone(),
            catalog: self.catalog.clone(),
            serve_addr: self.serve_addr.clone(),
            data_dir: self.data_dir.clone(),
        };
        let file = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        Ok(file.overlay(flags))
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse scanner reports into a dataset.
    Ingest {
        /// Report files (named after their tool, or `tool=path`) or directories.
        #[arg(required = true)]
        inputs: Vec<String>,
        #[arg(long = "type", value_parser = parse_testing_type)]
        testing_type: TestingType,
        /// ID of the first finding.
        #[arg(long, default_value_t = 1)]
        start_id: u64,
    },
    /// Build the finding strings of one corpus.
    Corpus,
    /// Score every document pair with one engine.
    Similarity {
        /// Corpus file; built from --dataset and --corpus when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Cluster a corpus at one threshold.
    Cluster {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        threshold: f64,
    },
    /// Score predicted clusters against the ground truth.
    Evaluate {
        #[arg(long)]
        predicted: PathBuf,
    },
    /// Evaluate one or more matrices over a threshold grid.
    Sweep {
        #[arg(long, required = true)]
        matrix: Vec<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Corpus, similarity and sweep in one go.
    Run,
    /// Start the annotation service.
    Serve,
    /// Report where two similarity matrices differ.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Pairs listed in the report.
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Exit with status 3 when any pair exceeds the tolerance.
        #[arg(long)]
        check: bool,
    },
}

fn parse_testing_type(s: &str) -> Result<TestingType, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_uppercase()))
        .map_err(|_| format!("unknown testing type `{s}` (expected SAST or DAST)"))
}

/// Exit status when `compare --check` finds differences.
pub const EXIT_DIFFERENT: u8 = 3;

/// Parse arguments, run, and map failures to an exit status.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .try_init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Write to `--out` when given, stdout otherwise.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_output(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn corpus_from(s: &Settings, input: Option<&Path>) -> Result<Corpus> {
    if let Some(path) = input {
        return Ok(Corpus::load(path)?);
    }
    let dataset = Dataset::load(Settings::require(&s.dataset, "dataset")?)?;
    pipeline::make_corpus(
        &dataset,
        *Settings::require(&s.corpus, "corpus")?,
        s.separator.as_deref(),
    )
}

fn execute(cli: Cli) -> Result<ExitCode> {
    let s = cli.global.settings()?;
    match cli.command {
        Command::Ingest {
            inputs,
            testing_type,
            start_id,
        } => {
            let catalog = pipeline::load_catalog(s.catalog.as_deref())?;
            let reports = pipeline::resolve_reports(&inputs, testing_type, &catalog)?;
            let dataset = pipeline::ingest(&reports, testing_type, &catalog, start_id)?;
            emit(s.out.as_deref(), &dataset.to_json_pretty())?;
        }
        Command::Corpus => {
            let corpus = corpus_from(&s, None)?;
            emit(s.out.as_deref(), &corpus.to_json_pretty())?;
        }
        Command::Similarity { input } => {
            let corpus = corpus_from(&s, input.as_deref())?;
            let matrix = pipeline::similarity(&corpus, &EngineParams::from_settings(&s)?)?;
            matrix.save(Settings::require(&s.out, "out")?)?;
        }
        Command::Cluster {
            matrix,
            input,
            threshold,
        } => {
            let corpus = corpus_from(&s, input.as_deref())?;
            let matrix = SimilarityMatrix::load(&matrix)?;
            check_matrix_fits(&matrix, &corpus)?;
            let clusters = cluster(&matrix, &corpus, threshold)?;
            emit(s.out.as_deref(), &clusters.to_json_pretty())?;
        }
        Command::Evaluate { predicted } => {
            let predicted = ClusterSet::load(&predicted)?;
            let truth = ClusterSet::load(Settings::require(&s.truth, "truth")?)?;
            let mut result = evaluate(&predicted, &truth)?;
            result.threshold = predicted.threshold;
            emit(s.out.as_deref(), &to_json(&result)?)?;
        }
        Command::Sweep { matrix, input } => {
            let corpus = corpus_from(&s, input.as_deref())?;
            let truth = ClusterSet::load(Settings::require(&s.truth, "truth")?)?;
            let grid = match &s.thresholds {
                Some(t) => t.grid()?,
                None => dedupsec::default_grid(),
            };
            let out = Settings::require(&s.out, "out")?;
            let mut sweeps = Vec::new();
            for path in &matrix {
                let m = SimilarityMatrix::load(path)?;
                check_matrix_fits(&m, &corpus).with_context(|| path.display().to_string())?;
                sweeps.push(sweep(&m, &corpus, &truth, &grid)?);
            }
            let summary = summarize(&sweeps);
            write_output(&out.join("sweep.json"), to_json(&sweeps)?.as_bytes())?;
            write_output(&out.join("plot.csv"), plot_csv(&sweeps)?.as_bytes())?;
            write_output(&out.join("summary.json"), to_json(&summary)?.as_bytes())?;
            print!("{}", to_json(&summary)?);
        }
        Command::Run => {
            let cfg = RunConfig::from_settings(&s)?;
            let outputs = pipeline::run(&cfg)?;
            print!("{}", to_json(&outputs.summary)?);
        }
        Command::Serve => {
            let addr = s.serve_addr.as_deref().unwrap_or("127.0.0.1:8080");
            let addr = addr.parse().with_context(|| format!("bad listen address `{addr}`"))?;
            let data_dir = s.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"));
            let catalog = pipeline::load_catalog(s.catalog.as_deref())?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(dedupsec_service::serve(addr, data_dir, catalog))?;
        }
        Command::Compare {
            a,
            b,
            tolerance,
            top,
            check,
        } => {
            if !(tolerance >= 0.0) {
                bail!("tolerance must be non-negative");
            }
            let diff = pipeline::compare(
                &SimilarityMatrix::load(&a)?,
                &SimilarityMatrix::load(&b)?,
                tolerance,
                top,
            )?;
            emit(s.out.as_deref(), &to_json(&diff)?)?;
            if check && diff.exceeding > 0 {
                return Ok(ExitCode::from(EXIT_DIFFERENT));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn check_matrix_fits(matrix: &SimilarityMatrix, corpus: &Corpus) -> Result<()> {
    if matrix.n() != corpus.documents.len() {
        bail!(
            "matrix covers {} documents, corpus has {}",
            matrix.n(),
            corpus.documents.len()
        );
    }
    Ok(())
}
