//! Line-oriented REPL: every input line is one user turn.

use std::io::{self, BufRead, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Result;
use graphif::agent::TurnExtraction;
use graphif::backend::LlmClient;
use graphif::pipeline::{Backends, Pipeline, Session};
use graphif::state::join_ids;

use crate::config::{FileConfig, Overrides, RunConfig};

const HELP: &str = "commands: /graph (DOT of the session graph), /state (topics, constraints, last notebook), /quit";

pub fn run(config: Option<&Path>, flags: Overrides) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(FileConfig::load(config)?, flags)?;
    let backend = cfg.backend.build()?;
    let pipeline = Pipeline::new(cfg.mode, cfg.pipeline.clone()).with_templates(cfg.templates()?);
    let backends = Backends::shared(LlmClient::new(Arc::clone(&backend), cfg.sampling.clone()));
    let stdin = io::stdin();
    let stdout = io::stdout();
    repl(&pipeline, &backends, stdin.lock(), &mut stdout.lock())
}

pub fn repl(pipeline: &Pipeline, backends: &Backends, input: impl BufRead, out: &mut impl Write) -> Result<ExitCode> {
    let mut session = Session::new("chat", pipeline.mode);
    writeln!(out, "graphif chat ({} mode). {HELP}", pipeline.mode)?;
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        match text {
            "" => continue,
            "/quit" | "/exit" => break,
            "/help" => writeln!(out, "{HELP}")?,
            "/graph" => write!(out, "{}", session.state.graph.to_dot())?,
            "/state" => writeln!(out, "{}", describe_state(&session))?,
            cmd if cmd.starts_with('/') => writeln!(out, "unknown command {cmd}. {HELP}")?,
            _ => match pipeline.process_turn(&mut session, text, backends) {
                Ok(r) => {
                    writeln!(out, "[turn {}] {}", r.turn, describe_extraction(&r.extraction))?;
                    writeln!(out, "{}", r.final_response)?;
                }
                Err(e) => {
                    writeln!(out, "error: {e}")?;
                    if session.next_turn() == 1 {
                        return Ok(ExitCode::FAILURE);
                    }
                }
            },
        }
        out.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn describe_extraction(x: &TurnExtraction) -> String {
    let mut parts = Vec::new();
    if !x.global_links.is_empty() {
        parts.push(format!("global constraints from turns [{}]", join_ids(&x.global_links)));
    }
    for s in &x.steps {
        parts.push(format!("{} -> [{}]", s.action, join_ids(&s.located)));
    }
    if parts.is_empty() {
        parts.push("no relations".into());
    }
    format!("{} ({:?})", parts.join("; "), x.terminated_by)
}

fn describe_state(s: &Session) -> String {
    let mut out = String::new();
    for t in s.state.topics.topics() {
        let marker = if s.state.topics.current_id() == Some(t.id) { " (current)" } else { "" };
        out.push_str(&format!("topic {}{marker}: turns [{}]\n", t.id, join_ids(&t.members)));
    }
    for g in s.state.global_constraints.entries() {
        out.push_str(&format!("global constraint from turn {}: {}\n", g.origin, g.text));
    }
    out.push_str(&format!("notebook for turn {}:\n{}", s.state.notebook.scope_turn(), s.state.notebook.render()));
    out
}
