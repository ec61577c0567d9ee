//! Dataset schema, validating loader and template synthesizer.

mod import;
pub mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dialogue::TurnId;
use crate::eval::{Checker, ConstraintSpec, Rule, Scope};
use crate::graph::{RelationGraph, RelationLabel};

pub use import::{import_chat_jsonl, ImportError};
pub use synth::{synthesize, GcKind, GraphTemplate, TemplateError, TEMPLATE_NAMES};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema error at {location}: {reason}")]
    Schema { location: String, reason: String },
}

impl DatasetError {
    fn schema(location: impl Into<String>, reason: impl Into<String>) -> Self {
        DatasetError::Schema { location: location.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTurn {
    pub index: TurnId,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_response: Option<String>,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSample {
    pub sample_id: String,
    pub turns: Vec<SampleTurn>,
    pub ground_truth_graph: RelationGraph,
    pub topic_boundaries: Vec<TurnId>,
}

impl DialogueSample {
    pub fn ground_truth_global_origins(&self) -> BTreeSet<TurnId> {
        self.ground_truth_graph
            .edges()
            .iter()
            .filter(|e| e.label == RelationLabel::GlobalConstraint)
            .map(|e| e.dst)
            .collect()
    }

    /// Checks every invariant; `location` prefixes reported paths.
    pub fn validate(&self, location: &str) -> Result<(), DatasetError> {
        if self.sample_id.trim().is_empty() {
            return Err(DatasetError::schema(format!("{location}.sample_id"), "must not be empty"));
        }
        if self.turns.is_empty() {
            return Err(DatasetError::schema(format!("{location}.turns"), "must not be empty"));
        }
        let n = self.turns.len() as TurnId;
        for (i, turn) in self.turns.iter().enumerate() {
            let at = format!("{location}.turns[{i}]");
            if turn.index != i as TurnId + 1 {
                return Err(DatasetError::schema(
                    format!("{at}.index"),
                    format!("expected {}, found {}", i + 1, turn.index),
                ));
            }
            if turn.instruction.trim().is_empty() {
                return Err(DatasetError::schema(format!("{at}.instruction"), "must not be empty"));
            }
            let mut ids = BTreeSet::new();
            for (j, c) in turn.constraints.iter().enumerate() {
                validate_constraint(c, turn.index, &format!("{at}.constraints[{j}]"))?;
                if !ids.insert(c.id.as_str()) {
                    return Err(DatasetError::schema(
                        format!("{at}.constraints[{j}].id"),
                        format!("duplicate id `{}`", c.id),
                    ));
                }
            }
        }
        for (i, node) in self.ground_truth_graph.nodes().iter().enumerate() {
            if *node > n {
                return Err(DatasetError::schema(
                    format!("{location}.ground_truth_graph.nodes[{i}]"),
                    format!("turn {node} beyond the sample's {n} turns"),
                ));
            }
        }
        match self.topic_boundaries.first() {
            Some(1) => {}
            _ => {
                return Err(DatasetError::schema(
                    format!("{location}.topic_boundaries"),
                    "must start with turn 1",
                ))
            }
        }
        for (i, w) in self.topic_boundaries.windows(2).enumerate() {
            if w[1] <= w[0] || w[1] > n {
                return Err(DatasetError::schema(
                    format!("{location}.topic_boundaries[{}]", i + 1),
                    format!("{} must be increasing and within 1..={n}", w[1]),
                ));
            }
        }
        Ok(())
    }
}

fn validate_constraint(c: &ConstraintSpec, turn: TurnId, at: &str) -> Result<(), DatasetError> {
    if c.id.trim().is_empty() {
        return Err(DatasetError::schema(format!("{at}.id"), "must not be empty"));
    }
    if let Some(w) = c.weight {
        if !(w.is_finite() && w > 0.0) {
            return Err(DatasetError::schema(format!("{at}.weight"), format!("{w} is not a positive number")));
        }
    }
    match (c.scope, c.relation) {
        (Scope::InterTurn, None) => {
            return Err(DatasetError::schema(format!("{at}.relation"), "required for inter_turn constraints"))
        }
        (Scope::IntraTurn, Some(_)) => {
            return Err(DatasetError::schema(format!("{at}.relation"), "only allowed on inter_turn constraints"))
        }
        _ => {}
    }
    let rule_at = format!("{at}.checker.rule");
    match &c.checker {
        Checker::Judge { question } if question.trim().is_empty() => {
            Err(DatasetError::schema(format!("{at}.checker.judge.question"), "must not be empty"))
        }
        Checker::Judge { .. } => Ok(()),
        Checker::Rule(Rule::EndsWith { text } | Rule::StartsWith { text } | Rule::ForbidsSubstring { text })
            if text.is_empty() =>
        {
            Err(DatasetError::schema(format!("{rule_at}.text"), "must not be empty"))
        }
        Checker::Rule(Rule::ContainsAllKeywords { keywords }) if keywords.is_empty() || keywords.iter().any(|k| k.is_empty()) => {
            Err(DatasetError::schema(format!("{rule_at}.keywords"), "must be a non-empty list of non-empty strings"))
        }
        Checker::Rule(Rule::ContainsTurnIdsInOrder { turn_ids }) => {
            if turn_ids.is_empty() {
                return Err(DatasetError::schema(format!("{rule_at}.turn_ids"), "must not be empty"));
            }
            match turn_ids.iter().position(|&k| k == 0 || k >= turn) {
                Some(p) => Err(DatasetError::schema(
                    format!("{rule_at}.turn_ids[{p}]"),
                    format!("turn {} is not earlier than turn {turn}", turn_ids[p]),
                )),
                None => Ok(()),
            }
        }
        Checker::Rule(_) => Ok(()),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<DialogueSample>,
}

impl Dataset {
    pub fn total_turns(&self) -> usize {
        self.samples.iter().map(|s| s.turns.len()).sum()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut ids = BTreeSet::new();
        for (i, s) in self.samples.iter().enumerate() {
            let at = format!("samples[{i}]");
            s.validate(&at)?;
            if !ids.insert(s.sample_id.as_str()) {
                return Err(DatasetError::schema(
                    format!("{at}.sample_id"),
                    format!("duplicate sample id `{}`", s.sample_id),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes") + "\n"
    }

    /// Parses and validates. Structural errors name the failing sample.
    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let root: serde_json::Value =
            serde_json::from_str(text).map_err(|e| DatasetError::schema("$", e.to_string()))?;
        let samples = root
            .get("samples")
            .and_then(|s| s.as_array())
            .ok_or_else(|| DatasetError::schema("$.samples", "missing or not an array"))?;
        let mut out = Vec::with_capacity(samples.len());
        for (i, raw) in samples.iter().enumerate() {
            let sample: DialogueSample = DialogueSample::deserialize(raw).map_err(|e| {
                let id = raw.get("sample_id").and_then(|v| v.as_str()).unwrap_or("?");
                DatasetError::schema(format!("samples[{i}] (sample_id `{id}`)"), e.to_string())
            })?;
            out.push(sample);
        }
        let dataset = Dataset { samples: out };
        dataset.validate()?;
        Ok(dataset)
    }
}

pub fn load_dataset(path: &Path) -> Result<Vec<DialogueSample>, DatasetError> {
    let text = fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    Ok(Dataset::from_json(&text)?.samples)
}

pub fn save_dataset(path: &Path, samples: &[DialogueSample]) -> Result<(), DatasetError> {
    let dataset = Dataset { samples: samples.to_vec() };
    dataset.validate()?;
    fs::write(path, dataset.to_json())
        .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })
}
