//! Prompt templates and the relation graph prompt.
//!
//! Templates are plain text with `{slot}` placeholders, where a slot name is
//! lowercase ASCII letters, digits and underscores starting with a letter.
//! Any other brace sequence (for example the JSON answer formats) is
//! literal. Substitution is single-pass, so slot values are never rescanned.

mod graph_prompt;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use graph_prompt::{
    build_graph_prompt, definition, render_history, truncate_head_tail, GraphPrompt, PromptMode,
    PromptSection, QuotedTurn, RelationDefinition, DEFAULT_TURN_CHAR_BUDGET, RELATION_DEFINITIONS,
};

/// Bumped whenever a built-in template text changes.
pub const TEMPLATE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template `{kind}` needs slot `{slot}`")]
    MissingSlot { kind: TemplateKind, slot: String },
    #[error("turn {0} is referenced by a relation but has no stored content")]
    MissingTurnContent(u32),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template override {path}: {reason}")]
    Override { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    ActionIdentification,
    LocateContextOrModify,
    ChooseTopic,
    LocateSummary,
    Rewrite,
    ResolveGlobalConstraint,
    SelectGlobalConstraints,
    OneShotExtraction,
    Judge,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 9] = [
        TemplateKind::ActionIdentification,
        TemplateKind::LocateContextOrModify,
        TemplateKind::ChooseTopic,
        TemplateKind::LocateSummary,
        TemplateKind::Rewrite,
        TemplateKind::ResolveGlobalConstraint,
        TemplateKind::SelectGlobalConstraints,
        TemplateKind::OneShotExtraction,
        TemplateKind::Judge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::ActionIdentification => "action_identification",
            TemplateKind::LocateContextOrModify => "locate_context_or_modify",
            TemplateKind::ChooseTopic => "choose_topic",
            TemplateKind::LocateSummary => "locate_summary",
            TemplateKind::Rewrite => "rewrite",
            TemplateKind::ResolveGlobalConstraint => "resolve_global_constraint",
            TemplateKind::SelectGlobalConstraints => "select_global_constraints",
            TemplateKind::OneShotExtraction => "one_shot_extraction",
            TemplateKind::Judge => "judge",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateKind::ActionIdentification => include_str!("../../templates/action_identification.txt"),
            TemplateKind::LocateContextOrModify => include_str!("../../templates/locate_context_or_modify.txt"),
            TemplateKind::ChooseTopic => include_str!("../../templates/choose_topic.txt"),
            TemplateKind::LocateSummary => include_str!("../../templates/locate_summary.txt"),
            TemplateKind::Rewrite => include_str!("../../templates/rewrite.txt"),
            TemplateKind::ResolveGlobalConstraint => include_str!("../../templates/resolve_global_constraint.txt"),
            TemplateKind::SelectGlobalConstraints => include_str!("../../templates/select_global_constraints.txt"),
            TemplateKind::OneShotExtraction => include_str!("../../templates/one_shot_extraction.txt"),
            TemplateKind::Judge => include_str!("../../templates/judge.txt"),
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplateKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

/// Slot values for one render.
#[derive(Debug, Clone, Default)]
pub struct Slots(BTreeMap<String, String>);

impl Slots {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, name: &str, value: impl ToString) -> Self {
        self.0.insert(name.to_string(), value.to_string());
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_slot_name(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn parse(template: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_slot_name(&after[..close]) => {
                if open > 0 {
                    pieces.push(Piece::Text(&rest[..open]));
                }
                pieces.push(Piece::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                pieces.push(Piece::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest));
    }
    pieces
}

/// Placeholder names used by `template`.
pub fn placeholders(template: &str) -> BTreeSet<String> {
    parse(template)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Slot(s) => Some(s.to_string()),
            Piece::Text(_) => None,
        })
        .collect()
}

/// The full template collection, built-in or overridden from a directory.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    texts: BTreeMap<TemplateKind, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            texts: TemplateKind::ALL
                .into_iter()
                .map(|k| (k, k.builtin().to_string()))
                .collect(),
        }
    }

    /// Built-ins replaced by any `<kind>.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for kind in TemplateKind::ALL {
            let path = dir.join(format!("{}.txt", kind.name()));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Override {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                set.texts.insert(kind, text);
            }
        }
        Ok(set)
    }

    pub fn text(&self, kind: TemplateKind) -> &str {
        &self.texts[&kind]
    }

    pub fn render(&self, kind: TemplateKind, slots: &Slots) -> Result<String, PromptError> {
        let mut out = String::new();
        for piece in parse(self.text(kind)) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => {
                    let v = slots.get(name).ok_or_else(|| PromptError::MissingSlot {
                        kind,
                        slot: name.to_string(),
                    })?;
                    out.push_str(v);
                }
            }
        }
        Ok(out)
    }
}

/// Renders a built-in template.
pub fn render_template(kind: TemplateKind, slots: &Slots) -> Result<String, PromptError> {
    TemplateSet::builtin().render(kind, slots)
}
