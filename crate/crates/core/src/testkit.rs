//! Scripted backends derived from dataset samples, for offline runs and
//! tests.
//!
//! * [`cooperative_script`] answers every identification and execution
//!   prompt with the sample's ground-truth relations.
//! * [`faulty_generator_script`] produces initial responses that carry the
//!   turn's own code but a comma, no sentinel and no cross-turn content.
//! * [`ConstraintApplyingRewriter`] edits the initial response according to
//!   the `Response constraint:` lines of the rewrite prompt.
//! * [`one_shot_script`] answers one-shot extraction prompts, optionally
//!   keeping only the first relation of each turn.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::json;

use crate::backend::{BackendError, CallSite, ChatBackend, ChatRequest, ScriptEntry};
use crate::dataset::synth::CODE_PATTERN;
use crate::dataset::DialogueSample;
use crate::dialogue::TurnId;
use crate::graph::{AgentAction, RelationLabel};

/// One expected extraction step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectedStep {
    pub action: AgentAction,
    pub located: Vec<TurnId>,
}

/// Ground-truth steps for `turn`, in the order a cooperative agent takes
/// them: topic change, new standing rule, summary, modify, context-anchored.
pub fn expected_steps(sample: &DialogueSample, turn: TurnId) -> Vec<ExpectedStep> {
    let mut steps = Vec::new();
    if turn == 1 {
        return steps;
    }
    if sample.topic_boundaries.contains(&turn) {
        steps.push(ExpectedStep { action: AgentAction::NewTopic, located: Vec::new() });
    }
    if sample.ground_truth_global_origins().contains(&turn) {
        steps.push(ExpectedStep { action: AgentAction::IdentifyGlobalConstraint, located: vec![turn] });
    }
    let targets = |label: RelationLabel| -> Vec<TurnId> {
        sample
            .ground_truth_graph
            .edges_from(turn)
            .filter(|e| e.label == label)
            .map(|e| e.dst)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    };
    let summary = targets(RelationLabel::Summary);
    if !summary.is_empty() {
        steps.push(ExpectedStep { action: AgentAction::IdentifySummary, located: summary });
    }
    for k in targets(RelationLabel::Modify) {
        steps.push(ExpectedStep { action: AgentAction::IdentifyModify, located: vec![k] });
    }
    for k in targets(RelationLabel::ContextAnchored) {
        steps.push(ExpectedStep { action: AgentAction::IdentifyContextAnchored, located: vec![k] });
    }
    steps
}

fn execute_reply(step: &ExpectedStep) -> String {
    match step.action {
        AgentAction::NewTopic => json!({"topic": "new"}).to_string(),
        AgentAction::IdentifyGlobalConstraint => json!({"supersedes": []}).to_string(),
        _ => json!({"turn_ids": step.located}).to_string(),
    }
}

/// Identification and execution entries for the agent loop.
pub fn cooperative_script(sample: &DialogueSample) -> Vec<ScriptEntry> {
    let id = &sample.sample_id;
    let mut out = Vec::new();
    for turn in sample.turns.iter().map(|t| t.index).filter(|t| *t > 1) {
        let steps = expected_steps(sample, turn);
        for (i, step) in steps.iter().enumerate() {
            let s = i + 1;
            out.push(ScriptEntry::exact(
                format!("{id}/identify:turn{turn}:step{s}"),
                json!({"action": step.action.as_str()}).to_string(),
            ));
            out.push(ScriptEntry::exact(
                format!("{id}/execute:{}:turn{turn}:step{s}", step.action.slug()),
                execute_reply(step),
            ));
        }
        out.push(ScriptEntry::exact(
            format!("{id}/identify:turn{turn}:step{}", steps.len() + 1),
            json!({"action": "Done"}).to_string(),
        ));
    }
    out
}

/// One-shot extraction entries. With `first_only`, each turn reports only
/// its first relation, so later ones are missed.
pub fn one_shot_script(sample: &DialogueSample, first_only: bool) -> Vec<ScriptEntry> {
    let id = &sample.sample_id;
    sample
        .turns
        .iter()
        .map(|t| t.index)
        .filter(|t| *t > 1)
        .map(|turn| {
            let mut steps = expected_steps(sample, turn);
            if first_only {
                steps.truncate(1);
            }
            let relations: Vec<_> = steps
                .iter()
                .map(|s| match s.action {
                    AgentAction::NewTopic => json!({"action": s.action.as_str(), "topic": "new"}),
                    AgentAction::IdentifyGlobalConstraint => json!({"action": s.action.as_str(), "supersedes": []}),
                    _ => json!({"action": s.action.as_str(), "turn_ids": s.located}),
                })
                .collect();
            ScriptEntry::exact(format!("{id}/oneshot:turn{turn}"), json!({"relations": relations}).to_string())
        })
        .collect()
}

fn code_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(CODE_PATTERN).expect("valid regex"))
}

/// Initial response that answers only the instruction itself.
pub fn faulty_initial(instruction: &str, turn: TurnId) -> String {
    match code_re().find(instruction) {
        Some(code) => format!("Sure, here is part {turn} featuring {}.", code.as_str()),
        None => format!("Sure, here is part {turn}."),
    }
}

pub fn faulty_generator_script(sample: &DialogueSample) -> Vec<ScriptEntry> {
    sample
        .turns
        .iter()
        .map(|t| {
            ScriptEntry::exact(
                format!("{}/initial:turn{}", sample.sample_id, t.index),
                faulty_initial(&t.instruction, t.index),
            )
        })
        .collect()
}

/// Rewrite entries returning each turn's reference response.
pub fn reference_rewrite_script(sample: &DialogueSample) -> Vec<ScriptEntry> {
    sample
        .turns
        .iter()
        .filter_map(|t| {
            t.reference_response
                .as_ref()
                .map(|r| ScriptEntry::exact(format!("{}/rewrite:turn{}", sample.sample_id, t.index), r.clone()))
        })
        .collect()
}

/// Everything a scripted `graphif run` over `sample` needs.
pub fn fixture_script(sample: &DialogueSample) -> Vec<ScriptEntry> {
    let mut out = faulty_generator_script(sample);
    out.extend(cooperative_script(sample));
    out.extend(one_shot_script(sample, false));
    out.extend(reference_rewrite_script(sample));
    out
}

/// Writes one `<sample_id>.json` fixture file per sample.
pub fn write_fixture_dir(dir: &Path, samples: &[DialogueSample]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for s in samples {
        let text = serde_json::to_string_pretty(&fixture_script(s)).expect("entries serialize");
        fs::write(dir.join(format!("{}.json", s.sample_id)), text + "\n")?;
    }
    Ok(())
}

/// Programmatic rewriter that follows the rewrite prompt's constraint lines.
///
/// Context-anchored and modify constraints add the reference codes found in
/// the quoted user turns of their section; summary constraints add a
/// `Turn a / Turn b` listing; standing rules add the quoted closing sentence
/// last and strip commas. Sections without a constraint line (relation-free
/// prompts) only contribute their quoted codes.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstraintApplyingRewriter;

impl ConstraintApplyingRewriter {
    pub fn rewrite(prompt: &str) -> Option<String> {
        let notes_start = prompt.find("Relation notes:\n")? + "Relation notes:\n".len();
        let notes_end = prompt.rfind("\n\nCurrent instruction:\n")?;
        let notes = prompt.get(notes_start..notes_end)?;
        let init_start = prompt.rfind("\nInitial response:\n")? + "\nInitial response:\n".len();
        let init_end = prompt.rfind("\n\nReply with the rewritten response only")?;
        let initial = prompt.get(init_start..init_end)?.trim();

        static SENTENCE: OnceLock<Regex> = OnceLock::new();
        let sentence = SENTENCE.get_or_init(|| Regex::new(r#"sentence "([^"]+)""#).expect("valid regex"));

        let mut extras: Vec<String> = Vec::new();
        let mut closing: Option<String> = None;
        let mut no_commas = false;
        for section in notes.split("\nSection ").filter(|s| !s.trim().is_empty()) {
            let constraint = section
                .lines()
                .find_map(|l| l.strip_prefix("Response constraint: "));
            let quoted_codes = || -> Vec<String> {
                section
                    .lines()
                    .filter(|l| l.starts_with("[Turn ") && l.contains("] User: "))
                    .flat_map(|l| code_re().find_iter(l).map(|m| m.as_str().to_string()).collect::<Vec<_>>())
                    .collect()
            };
            match constraint {
                Some(c) if c.starts_with("the response must satisfy: ") => {
                    if c.to_lowercase().contains("comma") {
                        no_commas = true;
                    }
                    if let Some(m) = sentence.captures(c) {
                        closing = Some(m[1].to_string());
                    }
                }
                Some(c) if c.starts_with("the response must summarize turns ") => {
                    let ids = &c["the response must summarize turns ".len()..];
                    extras.push(
                        ids.split(',')
                            .map(|s| format!("Turn {}", s.trim()))
                            .collect::<Vec<_>>()
                            .join(" / "),
                    );
                }
                _ => extras.extend(quoted_codes()),
            }
        }
        let mut out = initial.trim_end_matches('.').to_string();
        let mut seen = BTreeSet::new();
        for e in extras {
            if seen.insert(e.clone()) {
                out.push_str(" / ");
                out.push_str(&e);
            }
        }
        out.push('.');
        if let Some(c) = closing {
            out.push(' ');
            out.push_str(&c);
        }
        if no_commas {
            out = out.replace(',', "");
        }
        Some(out)
    }
}

impl ChatBackend for ConstraintApplyingRewriter {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if request.site != CallSite::Rewrite {
            return Err(BackendError::UnscriptedPrompt(request.probe.clone()));
        }
        let prompt = request.messages.last().map(|m| m.content.as_str()).unwrap_or_default();
        Self::rewrite(prompt).ok_or_else(|| BackendError::MalformedResponse("rewrite prompt has no recognizable layout".into()))
    }
}
