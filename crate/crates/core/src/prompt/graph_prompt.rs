use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::agent::TurnExtraction;
use crate::dialogue::{DialogueTurn, TurnId};
use crate::graph::{AgentAction, RelationLabel};
use crate::state::{join_ids, ExtractionState};

pub const DEFAULT_TURN_CHAR_BUDGET: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationDefinition {
    pub label: RelationLabel,
    pub title: &'static str,
    pub formal_definition: &'static str,
    /// Prefix of the constraint line; the target description follows it.
    pub constraint_phrasing: &'static str,
}

pub const RELATION_DEFINITIONS: [RelationDefinition; 5] = [
    RelationDefinition {
        label: RelationLabel::GlobalConstraint,
        title: "Global Constraint",
        formal_definition: "an earlier instruction set a rule that every subsequent response must follow until it is replaced.",
        constraint_phrasing: "the response must satisfy: ",
    },
    RelationDefinition {
        label: RelationLabel::ContextAnchored,
        title: "Context Anchored",
        formal_definition: "the current instruction relies on or logically connects to the content of a specific earlier turn.",
        constraint_phrasing: "the response must stay consistent with: ",
    },
    RelationDefinition {
        label: RelationLabel::Modify,
        title: "Modify",
        formal_definition: "the current instruction refines, changes, or extends the content of a specific earlier turn.",
        constraint_phrasing: "the response must apply the requested change to: ",
    },
    RelationDefinition {
        label: RelationLabel::Summary,
        title: "Summary",
        formal_definition: "the current instruction asks for a summary of a set of earlier turns.",
        constraint_phrasing: "the response must summarize turns ",
    },
    RelationDefinition {
        label: RelationLabel::NewTopic,
        title: "New Topic",
        formal_definition: "the current instruction starts a topic unconnected to the preceding context.",
        constraint_phrasing: "the response must not depend on content outside the current topic: ",
    },
];

pub fn definition(label: RelationLabel) -> &'static RelationDefinition {
    RELATION_DEFINITIONS
        .iter()
        .find(|d| d.label == label)
        .expect("every label has a definition")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    Graph,
    /// Dialogue content only, without relation explanations.
    RelationFree,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotedTurn {
    pub index: TurnId,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSection {
    /// Extraction step the relation came from; 0 for global-constraint links.
    pub step: u32,
    pub label: RelationLabel,
    pub targets: Vec<TurnId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<String>,
    pub content: Vec<QuotedTurn>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphPrompt {
    pub mode: PromptMode,
    pub sections: Vec<PromptSection>,
}

impl GraphPrompt {
    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("Section {} (turns {})\n", i + 1, join_ids(&s.targets)));
            if let Some(d) = &s.definition {
                out.push_str(&format!("Relation: {d}\n"));
            }
            if let Some(c) = &s.constraint {
                out.push_str(&format!("Response constraint: {c}\n"));
            }
            out.push_str("Dialogue content:\n");
            for q in &s.content {
                push_quoted(&mut out, q.index, "User", &q.instruction);
                if let Some(r) = &q.response {
                    push_quoted(&mut out, q.index, "Assistant", r);
                }
            }
        }
        out
    }
}

/// Continuation lines are indented so no quoted line can be mistaken for a
/// section field.
fn push_quoted(out: &mut String, index: TurnId, speaker: &str, text: &str) {
    let mut lines = text.lines();
    out.push_str(&format!("[Turn {index}] {speaker}: {}\n", lines.next().unwrap_or("")));
    for l in lines {
        out.push_str("    ");
        out.push_str(l);
        out.push('\n');
    }
}

/// Plain-text rendering of dialogue turns for agent prompts.
pub fn render_history(turns: &[DialogueTurn], budget: usize) -> String {
    if turns.is_empty() {
        return "(no earlier turns)".to_string();
    }
    let mut out = String::new();
    for t in turns {
        push_quoted(&mut out, t.index, "User", &truncate_head_tail(&t.instruction, budget));
        if let Some(r) = &t.response {
            push_quoted(&mut out, t.index, "Assistant", &truncate_head_tail(r, budget));
        }
    }
    out.truncate(out.trim_end().len());
    out
}

/// Keeps the first and last `budget / 2` characters when `text` is longer
/// than `budget` characters.
pub fn truncate_head_tail(text: &str, budget: usize) -> String {
    let n = text.chars().count();
    if n <= budget {
        return text.to_string();
    }
    let half = budget / 2;
    let head: String = text.chars().take(half).collect();
    let tail: String = text.chars().skip(n - half).collect();
    format!("{head} [...] {tail}")
}

/// Turns the relations extracted for one turn into the graph prompt.
///
/// Global-constraint links come first, followed by the agent's steps in
/// order. Steps that locate no earlier content (a new global constraint, a
/// topic change) contribute no section.
pub fn build_graph_prompt(
    extraction: &TurnExtraction,
    state: &ExtractionState,
    history: &[DialogueTurn],
    mode: PromptMode,
    budget: usize,
) -> Result<GraphPrompt, PromptError> {
    let find = |i: TurnId| -> Result<&DialogueTurn, PromptError> {
        history
            .iter()
            .find(|t| t.index == i)
            .ok_or(PromptError::MissingTurnContent(i))
    };
    let quote_full = |i: TurnId| -> Result<QuotedTurn, PromptError> {
        let t = find(i)?;
        let response = t.response.as_deref().ok_or(PromptError::MissingTurnContent(i))?;
        Ok(QuotedTurn {
            index: i,
            instruction: truncate_head_tail(&t.instruction, budget),
            response: Some(truncate_head_tail(response, budget)),
        })
    };
    let graph_mode = mode == PromptMode::Graph;
    let section = |step: u32, label: RelationLabel, targets: Vec<TurnId>, target_text: String, content| {
        let def = definition(label);
        PromptSection {
            step,
            label,
            targets,
            definition: graph_mode.then(|| format!("{}. {}", def.title, def.formal_definition)),
            constraint: graph_mode.then(|| format!("{}{}", def.constraint_phrasing, target_text)),
            content,
        }
    };

    let mut sections = Vec::new();
    for &origin in &extraction.global_links {
        let t = find(origin)?;
        let rule = state
            .global_constraints
            .get(origin)
            .map_or(t.instruction.as_str(), |g| g.text.as_str());
        sections.push(section(
            0,
            RelationLabel::GlobalConstraint,
            vec![origin],
            rule.to_string(),
            vec![QuotedTurn {
                index: origin,
                instruction: truncate_head_tail(&t.instruction, budget),
                response: None,
            }],
        ));
    }
    for entry in &extraction.steps {
        match entry.action {
            AgentAction::IdentifyContextAnchored | AgentAction::IdentifyModify => {
                let label = entry.action.label().expect("non-terminal action");
                for &k in &entry.located {
                    sections.push(section(entry.step, label, vec![k], format!("Turn {k}"), vec![quote_full(k)?]));
                }
            }
            AgentAction::IdentifySummary if !entry.located.is_empty() => {
                let targets: Vec<_> = entry.located.iter().copied().collect();
                let content = targets.iter().map(|&k| quote_full(k)).collect::<Result<Vec<_>, _>>()?;
                sections.push(section(entry.step, RelationLabel::Summary, targets.clone(), join_ids(&targets), content));
            }
            _ => {}
        }
    }
    Ok(GraphPrompt { mode, sections })
}
