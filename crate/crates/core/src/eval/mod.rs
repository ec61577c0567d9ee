//! Constraint checking and the CSR / ISR / DRFR / WCSR metrics.

mod metrics;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{CallSite, ChatMessage, EnvelopeError, LlmClient};
use crate::dataset::DialogueSample;
use crate::dialogue::TurnId;
use crate::graph::RelationLabel;
use crate::pipeline::PassArtifacts;
use crate::prompt::{PromptError, Slots, TemplateKind, TemplateSet};

pub use metrics::{compute_metrics, evaluate_run, MetricsReport, RationalMetrics};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no evaluation results")]
    EmptyResults,
    #[error("sample `{sample}` turn {turn} has no constraints")]
    EmptyOutcomes { sample: String, turn: TurnId },
    #[error("constraint `{0}` needs a judge backend but none is configured")]
    JudgeUnavailable(String),
    #[error("judge failed on constraint `{constraint}`: {source}")]
    Judge { constraint: String, source: EnvelopeError },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("run does not cover {} dataset turn(s): {}", .0.len(), format_gaps(.0))]
    CoverageGap(Vec<(String, TurnId)>),
    #[error("passes must be >= 1")]
    NoPasses,
}

fn format_gaps(gaps: &[(String, TurnId)]) -> String {
    let shown: Vec<String> = gaps.iter().take(10).map(|(s, t)| format!("{s}#{t}")).collect();
    let more = if gaps.len() > 10 { format!(" and {} more", gaps.len() - 10) } else { String::new() };
    format!("{}{more}", shown.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    IntraTurn,
    InterTurn,
}

impl Scope {
    pub fn default_weight(self) -> f64 {
        match self {
            Scope::IntraTurn => 1.0,
            Scope::InterTurn => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    EndsWith { text: String },
    StartsWith { text: String },
    ContainsAllKeywords { keywords: Vec<String> },
    ForbidsSubstring { text: String },
    WordCountMax { limit: usize },
    WordCountMin { limit: usize },
    ContainsTurnIdsInOrder { turn_ids: Vec<TurnId> },
}

impl Rule {
    pub fn kind(&self) -> &'static str {
        match self {
            Rule::EndsWith { .. } => "ends_with",
            Rule::StartsWith { .. } => "starts_with",
            Rule::ContainsAllKeywords { .. } => "contains_all_keywords",
            Rule::ForbidsSubstring { .. } => "forbids_substring",
            Rule::WordCountMax { .. } => "word_count_max",
            Rule::WordCountMin { .. } => "word_count_min",
            Rule::ContainsTurnIdsInOrder { .. } => "contains_turn_ids_in_order",
        }
    }

    /// Pure check of `response` against the rule.
    pub fn check(&self, response: &str) -> bool {
        match self {
            Rule::EndsWith { text } => {
                let r = response.trim_end();
                !r.is_empty() && r.ends_with(text.trim())
            }
            Rule::StartsWith { text } => {
                let r = response.trim_start();
                !r.is_empty() && r.starts_with(text.trim())
            }
            Rule::ContainsAllKeywords { keywords } => {
                let r = response.to_lowercase();
                keywords.iter().all(|k| r.contains(&k.to_lowercase()))
            }
            Rule::ForbidsSubstring { text } => !response.contains(text.as_str()),
            Rule::WordCountMax { limit } => response.split_whitespace().count() <= *limit,
            Rule::WordCountMin { limit } => response.split_whitespace().count() >= *limit,
            Rule::ContainsTurnIdsInOrder { turn_ids } => contains_turn_ids_in_order(response, turn_ids),
        }
    }
}

fn turn_mention() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bturn\s+(\d+)\b").expect("valid regex"))
}

/// Every id appears as a "Turn k" mention, first mentions in the given order.
fn contains_turn_ids_in_order(response: &str, ids: &[TurnId]) -> bool {
    let mut mentions = turn_mention()
        .captures_iter(response)
        .filter_map(|c| c[1].parse::<TurnId>().ok());
    ids.iter().all(|id| mentions.any(|m| m == *id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checker {
    Rule(Rule),
    Judge { question: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub id: String,
    pub scope: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<RelationLabel>,
    pub checker: Checker,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl ConstraintSpec {
    pub fn rule(id: impl Into<String>, scope: Scope, relation: Option<RelationLabel>, rule: Rule) -> Self {
        Self { id: id.into(), scope, relation, checker: Checker::Rule(rule), weight: None }
    }

    pub fn effective_weight(&self) -> f64 {
        self.weight.unwrap_or(self.scope.default_weight())
    }

    /// Grouping key for per-type breakdowns.
    pub fn constraint_type(&self) -> String {
        match (self.scope, self.relation) {
            (Scope::InterTurn, Some(label)) => label.as_str().to_string(),
            (Scope::InterTurn, None) => "inter_turn".to_string(),
            (Scope::IntraTurn, _) => "intra_turn".to_string(),
        }
    }
}

#[derive(Deserialize)]
struct Verdict {
    satisfied: bool,
}

/// Judge-backed checking.
pub struct Judge<'a> {
    pub client: &'a LlmClient,
    pub templates: &'a TemplateSet,
}

pub fn check_constraint(
    spec: &ConstraintSpec,
    response: &str,
    probe: &str,
    judge: Option<&Judge<'_>>,
) -> Result<bool, EvalError> {
    match &spec.checker {
        Checker::Rule(rule) => Ok(rule.check(response)),
        Checker::Judge { question } => {
            let judge = judge.ok_or_else(|| EvalError::JudgeUnavailable(spec.id.clone()))?;
            let prompt = judge
                .templates
                .render(TemplateKind::Judge, &Slots::new().set("question", question).set("response", response))?;
            judge
                .client
                .complete_json(CallSite::Judge, probe, vec![ChatMessage::user(prompt)], |v: Verdict| Ok(v.satisfied))
                .map_err(|source| EvalError::Judge { constraint: spec.id.clone(), source })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintOutcome {
    pub id: String,
    pub constraint_type: String,
    pub weight: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnEvalResult {
    pub sample_id: String,
    pub turn: TurnId,
    pub outcomes: Vec<ConstraintOutcome>,
}

/// Checks every declared constraint of one turn, in declaration order.
pub fn evaluate_turn(
    sample_id: &str,
    turn: TurnId,
    specs: &[ConstraintSpec],
    response: &str,
    judge: Option<&Judge<'_>>,
) -> Result<TurnEvalResult, EvalError> {
    let outcomes = specs
        .iter()
        .map(|spec| {
            let probe = format!("judge:{sample_id}:turn{turn}:{}", spec.id);
            Ok(ConstraintOutcome {
                id: spec.id.clone(),
                constraint_type: spec.constraint_type(),
                weight: spec.effective_weight(),
                satisfied: check_constraint(spec, response, &probe, judge)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(TurnEvalResult { sample_id: sample_id.to_string(), turn, outcomes })
}

/// Checks the final responses of one pass against the dataset. Turns that
/// declare no constraints are skipped.
pub fn evaluate_pass(
    pass: &PassArtifacts,
    dataset: &[DialogueSample],
    judge: Option<&Judge<'_>>,
) -> Result<Vec<TurnEvalResult>, EvalError> {
    let mut gaps = Vec::new();
    let mut out = Vec::new();
    for sample in dataset {
        let results: BTreeMap<TurnId, &str> = pass
            .samples
            .get(&sample.sample_id)
            .map(|s| s.results.iter().map(|r| (r.turn, r.final_response.as_str())).collect())
            .unwrap_or_default();
        for turn in &sample.turns {
            match results.get(&turn.index) {
                None => gaps.push((sample.sample_id.clone(), turn.index)),
                Some(_) if turn.constraints.is_empty() => {}
                Some(resp) => out.push(evaluate_turn(&sample.sample_id, turn.index, &turn.constraints, resp, judge)?),
            }
        }
    }
    if !gaps.is_empty() {
        return Err(EvalError::CoverageGap(gaps));
    }
    Ok(out)
}

/// Per-outcome CSV rows with a header line.
pub fn outcomes_csv(passes: &[Vec<TurnEvalResult>]) -> String {
    let mut out = String::from("pass,sample_id,turn,constraint_id,constraint_type,weight,satisfied\n");
    for (p, results) in passes.iter().enumerate() {
        for r in results {
            for o in &r.outcomes {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    p + 1,
                    csv_field(&r.sample_id),
                    r.turn,
                    csv_field(&o.id),
                    o.constraint_type,
                    o.weight,
                    o.satisfied
                ));
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
