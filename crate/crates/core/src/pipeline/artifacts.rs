//! On-disk run layout: one directory per sample holding `results.jsonl`,
//! `trace.json`, `graph.json`, `graph.dot` and `checkpoint.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{PipelineError, Session, TurnResult};
use crate::agent::TurnExtraction;
use crate::backend::LedgerSnapshot;
use crate::graph::RelationGraph;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LEDGER_FILE: &str = "ledger.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> PipelineError + '_ {
    move |source| PipelineError::Json { path: path.display().to_string(), source }
}

/// Writes `contents` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("artifact serializes");
    out.push(b'\n');
    out
}

pub fn results_jsonl(results: &[TurnResult]) -> String {
    results
        .iter()
        .map(|r| serde_json::to_string(r).expect("turn result serializes") + "\n")
        .collect()
}

/// Writes every per-sample artifact for the session's current state.
pub fn write_sample_artifacts(dir: &Path, session: &Session) -> Result<(), PipelineError> {
    let traces: Vec<&TurnExtraction> = session.results.iter().map(|r| &r.extraction).collect();
    write_atomic(&dir.join(RESULTS_FILE), results_jsonl(&session.results).as_bytes())?;
    write_atomic(&dir.join("trace.json"), &pretty(&traces))?;
    write_atomic(&dir.join("graph.json"), &pretty(&session.state.graph))?;
    write_atomic(&dir.join("graph.dot"), session.state.graph.to_dot().as_bytes())?;
    write_atomic(&dir.join(CHECKPOINT_FILE), session.to_checkpoint().as_bytes())
}

/// Restores a session from `dir/checkpoint.json` if it exists.
pub fn load_session(dir: &Path) -> Result<Option<Session>, PipelineError> {
    let path = dir.join(CHECKPOINT_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Session::from_checkpoint(&text).map(Some).map_err(json_err(&path))
}

#[derive(Debug, Clone, Default)]
pub struct SampleArtifacts {
    pub results: Vec<TurnResult>,
    pub graph: RelationGraph,
}

/// Everything one pass directory holds.
#[derive(Debug, Clone, Default)]
pub struct PassArtifacts {
    pub samples: BTreeMap<String, SampleArtifacts>,
    pub ledger: Option<LedgerSnapshot>,
}

impl PassArtifacts {
    pub fn from_sessions<'a>(sessions: impl IntoIterator<Item = &'a Session>, ledger: Option<LedgerSnapshot>) -> Self {
        let samples = sessions
            .into_iter()
            .map(|s| {
                (s.id.clone(), SampleArtifacts { results: s.results.clone(), graph: s.state.graph.clone() })
            })
            .collect();
        Self { samples, ledger }
    }
}

pub fn load_pass(dir: &Path) -> Result<PassArtifacts, PipelineError> {
    let mut out = PassArtifacts::default();
    let ledger_path = dir.join(LEDGER_FILE);
    if ledger_path.exists() {
        let text = fs::read_to_string(&ledger_path).map_err(io_err(&ledger_path))?;
        out.ledger = Some(serde_json::from_str(&text).map_err(json_err(&ledger_path))?);
    }
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let sample_dir = entry.path();
        let results_path = sample_dir.join(RESULTS_FILE);
        if !results_path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&results_path).map_err(io_err(&results_path))?;
        let results = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<TurnResult>, _>>()
            .map_err(json_err(&results_path))?;
        let graph_path = sample_dir.join("graph.json");
        let graph = if graph_path.is_file() {
            let g = fs::read_to_string(&graph_path).map_err(io_err(&graph_path))?;
            serde_json::from_str(&g).map_err(json_err(&graph_path))?
        } else {
            RelationGraph::new()
        };
        let name = entry.file_name().to_string_lossy().into_owned();
        let id = load_session(&sample_dir)?.map_or(name, |s| s.id);
        out.samples.insert(id, SampleArtifacts { results, graph });
    }
    Ok(out)
}
