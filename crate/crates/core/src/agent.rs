//! Iterative relation extraction.
//!
//! Each turn alternates action identification and action execution. The
//! identified action selects an executor; the executor locates the earlier
//! turns the relation points to, and the result is written to the notebook
//! and the graph. The loop stops at `Done` or after `max_iterations`
//! executed steps.

use std::cell::RefCell;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, CallSite, ChatMessage, EnvelopeError, LlmClient};
use crate::dialogue::{DialogueTurn, TurnId};
use crate::graph::{AgentAction, GraphError, RelationLabel};
use crate::prompt::{definition, render_history, PromptError, Slots, TemplateKind, TemplateSet};
use crate::state::{
    join_ids, ConflictOracle, ExtractionState, GlobalConstraint, NotebookEntry, RuleConflictOracle,
    TopicId,
};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("could not parse action: {0}")]
    ActionParse(String),
    #[error("could not parse located turns: {0}")]
    LocationParse(String),
    #[error("located turn {located} out of range for current turn {current}")]
    LocatedTurnOutOfRange { current: TurnId, located: TurnId },
    #[error("no unrecorded candidate turn left for {action} at turn {turn}")]
    NoCandidateTurn { action: AgentAction, turn: TurnId },
    #[error("could not parse topic decision: {0}")]
    TopicParse(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl AgentError {
    /// Backend failures abort the dialogue; everything else degrades the turn.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            AgentError::Backend(
                BackendError::BackendUnavailable { .. }
                    | BackendError::Rejected { .. }
                    | BackendError::InvalidRequest(_)
            )
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    #[default]
    Iterative,
    OneShot,
}

/// How turns get linked to active global constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalLinking {
    /// Every turn links to every active origin without an LLM call.
    #[default]
    Mechanical,
    /// One call per turn selects the applicable origins.
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictPolicy {
    #[default]
    Llm,
    Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub max_iterations: u32,
    pub allow_repeat_labels: bool,
    pub extraction_mode: ExtractionMode,
    pub global_linking: GlobalLinking,
    pub conflict_policy: ConflictPolicy,
    /// Per-turn character budget when rendering history into agent prompts.
    pub history_char_budget: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_iterations: 6,
            allow_repeat_labels: true,
            extraction_mode: ExtractionMode::Iterative,
            global_linking: GlobalLinking::Mechanical,
            conflict_policy: ConflictPolicy::Llm,
            history_char_budget: crate::prompt::DEFAULT_TURN_CHAR_BUDGET,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 {
            return Err("max_iterations must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Done,
    IterationCap,
    OneShot,
    /// Extraction was not run for this turn (first turn, LLM-only mode).
    Skipped,
    /// A non-fatal agent error ended extraction early; steps so far are kept.
    Failed(String),
}

/// Extraction trace of one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnExtraction {
    pub turn: TurnId,
    /// Active global-constraint origins this turn was linked to.
    #[serde(default)]
    pub global_links: Vec<TurnId>,
    pub steps: Vec<NotebookEntry>,
    pub terminated_by: Termination,
}

impl TurnExtraction {
    pub fn skipped(turn: TurnId) -> Self {
        Self { turn, global_links: Vec::new(), steps: Vec::new(), terminated_by: Termination::Skipped }
    }

    /// Reads the turn's trace back out of the state.
    pub fn from_state(state: &ExtractionState, terminated_by: Termination) -> Self {
        let turn = state.notebook.scope_turn();
        let global_links = state
            .graph
            .edges_from(turn)
            .filter(|e| e.label == RelationLabel::GlobalConstraint)
            .map(|e| e.dst)
            .collect();
        Self { turn, global_links, steps: state.notebook.entries().to_vec(), terminated_by }
    }

    pub fn is_empty(&self) -> bool {
        self.global_links.is_empty() && self.steps.is_empty()
    }
}

/// Topic executor outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicDecision {
    RevertTo(TopicId),
    NewTopic,
}

#[derive(Deserialize)]
struct TurnIdsReply {
    turn_ids: Vec<TurnId>,
}

#[derive(Deserialize)]
struct SupersedesReply {
    supersedes: Vec<TurnId>,
}

#[derive(Deserialize)]
struct TopicReply {
    topic: serde_json::Value,
}

#[derive(Deserialize)]
struct OneShotReply {
    relations: Vec<OneShotRelation>,
}

#[derive(Deserialize)]
struct OneShotRelation {
    action: String,
    #[serde(default)]
    turn_ids: Vec<TurnId>,
    #[serde(default)]
    topic: Option<serde_json::Value>,
    #[serde(default)]
    supersedes: Vec<TurnId>,
}

/// Parses `{"action": ...}`, or a bare action name as the whole reply.
pub fn parse_action_reply(reply: &str) -> Result<AgentAction, String> {
    if let Some(v) = crate::backend::extract_json_object(reply) {
        let name = v
            .get("action")
            .and_then(|a| a.as_str())
            .ok_or("reply object has no string field `action`")?;
        return name.parse().map_err(|e: GraphError| e.to_string());
    }
    reply
        .trim()
        .trim_matches(|c| c == '`' || c == '"')
        .parse()
        .map_err(|_| format!("`{}` is not a JSON envelope or action name", reply.trim()))
}

fn parse_topic_value(v: &serde_json::Value) -> Result<Option<TopicId>, String> {
    match v {
        serde_json::Value::String(s) if s.eq_ignore_ascii_case("new") => Ok(None),
        serde_json::Value::String(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("topic `{s}` is neither \"new\" nor an id")),
        serde_json::Value::Number(n) => n
            .as_u64()
            .and_then(|n| TopicId::try_from(n).ok())
            .map(Some)
            .ok_or_else(|| format!("topic {n} is not a valid id")),
        other => Err(format!("unexpected topic value {other}")),
    }
}

/// Why a located-turn reply was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rejection {
    Parse,
    OutOfRange(TurnId),
    Recorded,
}

/// Drives the extraction prompts for one dialogue session.
pub struct ExtractionAgent<'a> {
    client: &'a LlmClient,
    templates: &'a TemplateSet,
    config: &'a AgentConfig,
    probe_prefix: String,
}

impl<'a> ExtractionAgent<'a> {
    pub fn new(client: &'a LlmClient, templates: &'a TemplateSet, config: &'a AgentConfig) -> Self {
        Self { client, templates, config, probe_prefix: String::new() }
    }

    /// Prefix for every probe key, usually the session id.
    pub fn with_session(mut self, session: &str) -> Self {
        self.probe_prefix = if session.is_empty() { String::new() } else { format!("{session}/") };
        self
    }

    fn probe(&self, body: String) -> String {
        format!("{}{body}", self.probe_prefix)
    }

    fn history_text(&self, visible: &[DialogueTurn]) -> String {
        render_history(visible, self.config.history_char_budget)
    }

    pub fn identify_action(
        &self,
        turn: TurnId,
        instruction: &str,
        visible: &[DialogueTurn],
        state: &ExtractionState,
    ) -> Result<AgentAction, AgentError> {
        let step = state.notebook.next_step();
        let prompt = self.templates.render(
            TemplateKind::ActionIdentification,
            &Slots::new()
                .set("turn", turn)
                .set("step", step)
                .set("history", self.history_text(visible))
                .set("notebook", state.notebook.render())
                .set("instruction", instruction),
        )?;
        let probe = self.probe(format!("identify:turn{turn}:step{step}"));
        self.client
            .complete_parsed(CallSite::ActionIdentification, &probe, vec![ChatMessage::user(prompt)], parse_action_reply)
            .map_err(|e| match e {
                EnvelopeError::Backend(b) => AgentError::Backend(b),
                EnvelopeError::Invalid { reason, .. } => AgentError::ActionParse(reason),
            })
    }

    /// Runs the executor for `action` and records the result. Returns the
    /// located turns (`E_ts`).
    pub fn execute_action(
        &self,
        action: AgentAction,
        instruction: &str,
        visible: &[DialogueTurn],
        state: &mut ExtractionState,
    ) -> Result<BTreeSet<TurnId>, AgentError> {
        let turn = state.notebook.scope_turn();
        match action {
            AgentAction::Done => Ok(BTreeSet::new()),
            AgentAction::IdentifyGlobalConstraint => {
                self.exec_global_constraint(turn, instruction, state)?;
                let located = BTreeSet::from([turn]);
                state.notebook.record(action, located.clone())?;
                Ok(located)
            }
            AgentAction::IdentifyContextAnchored | AgentAction::IdentifyModify => {
                let label = action.label().expect("non-terminal");
                let k = self.exec_anchor(label, turn, instruction, visible, state)?;
                let located = BTreeSet::from([k]);
                state.add_relation(turn, label, &located)?;
                Ok(located)
            }
            AgentAction::IdentifySummary => {
                let located = self.exec_summary(turn, instruction, visible, state)?;
                state.add_relation(turn, RelationLabel::Summary, &located)?;
                Ok(located)
            }
            AgentAction::NewTopic => {
                self.exec_new_topic(turn, instruction, state)?;
                state.notebook.record(action, BTreeSet::new())?;
                Ok(BTreeSet::new())
            }
        }
    }

    /// Adds the current instruction to the global constraint set after
    /// conflict resolution.
    pub fn exec_global_constraint(
        &self,
        turn: TurnId,
        instruction: &str,
        state: &mut ExtractionState,
    ) -> Result<(), AgentError> {
        if state.global_constraints.is_active(turn) {
            return Ok(());
        }
        let candidate = GlobalConstraint { origin: turn, text: instruction.to_string() };
        match self.config.conflict_policy {
            ConflictPolicy::Rule => {
                state.global_constraints.resolve(candidate, &RuleConflictOracle)?;
            }
            ConflictPolicy::Llm => {
                let oracle = LlmConflictOracle { agent: self, turn, step: state.notebook.next_step() };
                state.global_constraints.resolve(candidate, &oracle)?;
            }
        }
        Ok(())
    }

    /// Locates the single most relevant unrecorded turn for a context-anchored
    /// or modify relation.
    pub fn exec_anchor(
        &self,
        label: RelationLabel,
        turn: TurnId,
        instruction: &str,
        visible: &[DialogueTurn],
        state: &ExtractionState,
    ) -> Result<TurnId, AgentError> {
        let action = label.action();
        let recorded = state.notebook.anchored_turns();
        let candidates: Vec<TurnId> = visible
            .iter()
            .map(|t| t.index)
            .filter(|i| *i < turn && !recorded.contains(i))
            .collect();
        if candidates.is_empty() {
            return Err(AgentError::NoCandidateTurn { action, turn });
        }
        let step = state.notebook.next_step();
        let def = definition(label);
        let prompt = self.templates.render(
            TemplateKind::LocateContextOrModify,
            &Slots::new()
                .set("turn", turn)
                .set("step", step)
                .set("relation", def.title)
                .set("relation_definition", def.formal_definition)
                .set("history", self.history_text(visible))
                .set("notebook", state.notebook.render())
                .set("instruction", instruction)
                .set("candidates", join_ids(&candidates)),
        )?;
        let rejection = RefCell::new(Rejection::Parse);
        let notebook = state.notebook.render();
        let probe = self.probe(format!("execute:{}:turn{turn}:step{step}", label.as_str()));
        let result = self.client.complete_json(
            CallSite::ActionExecution,
            &probe,
            vec![ChatMessage::user(prompt)],
            |r: TurnIdsReply| {
                let [k] = r.turn_ids[..] else {
                    *rejection.borrow_mut() = Rejection::Parse;
                    return Err(format!("expected exactly one turn id, got {:?}", r.turn_ids));
                };
                if recorded.contains(&k) {
                    *rejection.borrow_mut() = Rejection::Recorded;
                    return Err(format!(
                        "turn {k} is already recorded. Notebook:\n{notebook}\nChoose one of [{}].",
                        join_ids(&candidates)
                    ));
                }
                if !candidates.contains(&k) {
                    *rejection.borrow_mut() = if k == 0 || k >= turn {
                        Rejection::OutOfRange(k)
                    } else {
                        Rejection::Parse
                    };
                    return Err(format!("turn {k} is not one of [{}]", join_ids(&candidates)));
                }
                Ok(k)
            },
        );
        result.map_err(|e| match e {
            EnvelopeError::Backend(b) => AgentError::Backend(b),
            EnvelopeError::Invalid { reason, .. } => match *rejection.borrow() {
                Rejection::Recorded => AgentError::NoCandidateTurn { action, turn },
                Rejection::OutOfRange(k) => AgentError::LocatedTurnOutOfRange { current: turn, located: k },
                Rejection::Parse => AgentError::LocationParse(reason),
            },
        })
    }

    /// Locates every turn the instruction asks to summarize.
    pub fn exec_summary(
        &self,
        turn: TurnId,
        instruction: &str,
        visible: &[DialogueTurn],
        state: &ExtractionState,
    ) -> Result<BTreeSet<TurnId>, AgentError> {
        let candidates: Vec<TurnId> = visible.iter().map(|t| t.index).filter(|i| *i < turn).collect();
        let step = state.notebook.next_step();
        let prompt = self.templates.render(
            TemplateKind::LocateSummary,
            &Slots::new()
                .set("turn", turn)
                .set("history", self.history_text(visible))
                .set("notebook", state.notebook.render())
                .set("instruction", instruction)
                .set("candidates", join_ids(&candidates)),
        )?;
        let rejection = RefCell::new(Rejection::Parse);
        let probe = self.probe(format!("execute:summary:turn{turn}:step{step}"));
        self.client
            .complete_json(CallSite::ActionExecution, &probe, vec![ChatMessage::user(prompt)], |r: TurnIdsReply| {
                if let Some(&bad) = r.turn_ids.iter().find(|k| !candidates.contains(k)) {
                    *rejection.borrow_mut() = if bad == 0 || bad >= turn {
                        Rejection::OutOfRange(bad)
                    } else {
                        Rejection::Parse
                    };
                    return Err(format!("turn {bad} is not one of [{}]", join_ids(&candidates)));
                }
                Ok(r.turn_ids.into_iter().collect())
            })
            .map_err(|e| match e {
                EnvelopeError::Backend(b) => AgentError::Backend(b),
                EnvelopeError::Invalid { reason, .. } => match *rejection.borrow() {
                    Rejection::OutOfRange(k) => AgentError::LocatedTurnOutOfRange { current: turn, located: k },
                    _ => AgentError::LocationParse(reason),
                },
            })
    }

    /// Moves the topic pointer: back to an earlier topic or to a new one.
    pub fn exec_new_topic(
        &self,
        turn: TurnId,
        instruction: &str,
        state: &mut ExtractionState,
    ) -> Result<TopicDecision, AgentError> {
        let earlier: Vec<_> = state
            .topics
            .topics()
            .iter()
            .filter(|t| t.members.iter().any(|m| *m < turn))
            .collect();
        if earlier.is_empty() {
            state.topics.start_new_topic(turn);
            return Ok(TopicDecision::NewTopic);
        }
        let topics_text = earlier
            .iter()
            .map(|t| format!("- Topic {}: turns [{}]", t.id, join_ids(t.members.iter().filter(|m| **m < turn))))
            .collect::<Vec<_>>()
            .join("\n");
        let known: Vec<TopicId> = earlier.iter().map(|t| t.id).collect();
        let step = state.notebook.next_step();
        let prompt = self.templates.render(
            TemplateKind::ChooseTopic,
            &Slots::new().set("turn", turn).set("topics", topics_text).set("instruction", instruction),
        )?;
        let probe = self.probe(format!("execute:new_topic:turn{turn}:step{step}"));
        let choice = self
            .client
            .complete_json(CallSite::ActionExecution, &probe, vec![ChatMessage::user(prompt)], |r: TopicReply| {
                match parse_topic_value(&r.topic)? {
                    Some(id) if !known.contains(&id) => Err(format!("topic {id} does not exist")),
                    other => Ok(other),
                }
            })
            .map_err(|e| match e {
                EnvelopeError::Backend(b) => AgentError::Backend(b),
                EnvelopeError::Invalid { reason, .. } => AgentError::TopicParse(reason),
            })?;
        Ok(match choice {
            Some(id) => {
                state.topics.revert_to(id, turn)?;
                TopicDecision::RevertTo(id)
            }
            None => {
                state.topics.start_new_topic(turn);
                TopicDecision::NewTopic
            }
        })
    }

    /// Links the current turn to active global constraints.
    pub fn link_global_constraints(&self, turn: TurnId, instruction: &str, state: &mut ExtractionState) -> Result<(), AgentError> {
        let active: Vec<GlobalConstraint> = state
            .global_constraints
            .entries()
            .iter()
            .filter(|g| g.origin < turn)
            .cloned()
            .collect();
        if active.is_empty() {
            return Ok(());
        }
        let origins: BTreeSet<TurnId> = match self.config.global_linking {
            GlobalLinking::Mechanical => active.iter().map(|g| g.origin).collect(),
            GlobalLinking::Llm => {
                let prompt = self.templates.render(
                    TemplateKind::SelectGlobalConstraints,
                    &Slots::new()
                        .set("turn", turn)
                        .set("constraints", render_constraints(&active))
                        .set("instruction", instruction),
                )?;
                let allowed: Vec<TurnId> = active.iter().map(|g| g.origin).collect();
                self.client
                    .complete_json(
                        CallSite::ActionIdentification,
                        &self.probe(format!("link:turn{turn}")),
                        vec![ChatMessage::user(prompt)],
                        |r: TurnIdsReply| match r.turn_ids.iter().find(|k| !allowed.contains(k)) {
                            Some(bad) => Err(format!("turn {bad} is not an active constraint")),
                            None => Ok(r.turn_ids.into_iter().collect()),
                        },
                    )
                    .map_err(|e| match e {
                        EnvelopeError::Backend(b) => AgentError::Backend(b),
                        EnvelopeError::Invalid { reason, .. } => AgentError::LocationParse(reason),
                    })?
            }
        };
        state.link(turn, RelationLabel::GlobalConstraint, &origins)?;
        Ok(())
    }

    /// Full iterative extraction for the turn the state's notebook is scoped
    /// to. `history` holds the turns before it.
    pub fn extract_relations(
        &self,
        instruction: &str,
        history: &[DialogueTurn],
        state: &mut ExtractionState,
    ) -> Result<TurnExtraction, AgentError> {
        let turn = state.notebook.scope_turn();
        self.link_global_constraints(turn, instruction, state)?;
        let mut terminated_by = Termination::IterationCap;
        let mut executed = 0;
        while executed < self.config.max_iterations {
            let visible = prior_visible(state, history, turn);
            let action = self.identify_action(turn, instruction, &visible, state)?;
            if action == AgentAction::Done {
                terminated_by = Termination::Done;
                break;
            }
            if !self.config.allow_repeat_labels && state.notebook.entries().iter().any(|e| e.action == action) {
                log::debug!("turn {turn}: repeated {action} treated as Done");
                terminated_by = Termination::Done;
                break;
            }
            self.execute_action(action, instruction, &visible, state)?;
            executed += 1;
        }
        Ok(TurnExtraction::from_state(state, terminated_by))
    }

    /// Ablation: all relations from a single call, applied atomically.
    pub fn one_shot_extract(
        &self,
        instruction: &str,
        history: &[DialogueTurn],
        state: &mut ExtractionState,
    ) -> Result<TurnExtraction, AgentError> {
        let turn = state.notebook.scope_turn();
        self.link_global_constraints(turn, instruction, state)?;
        let visible = prior_visible(state, history, turn);
        let prompt = self.templates.render(
            TemplateKind::OneShotExtraction,
            &Slots::new()
                .set("turn", turn)
                .set("history", self.history_text(&visible))
                .set("instruction", instruction),
        )?;
        let probe = self.probe(format!("oneshot:turn{turn}"));
        let base = state.clone();
        let staged = self
            .client
            .complete_json(CallSite::ActionExecution, &probe, vec![ChatMessage::user(prompt)], |r: OneShotReply| {
                let mut trial = base.clone();
                apply_one_shot(&mut trial, turn, instruction, r.relations).map(|_| trial)
            })
            .map_err(|e| match e {
                EnvelopeError::Backend(b) => AgentError::Backend(b),
                EnvelopeError::Invalid { reason, .. } => AgentError::LocationParse(reason),
            })?;
        *state = staged;
        Ok(TurnExtraction::from_state(state, Termination::OneShot))
    }
}

fn prior_visible(state: &ExtractionState, history: &[DialogueTurn], turn: TurnId) -> Vec<DialogueTurn> {
    let prior: Vec<DialogueTurn> = history.iter().filter(|t| t.index < turn).cloned().collect();
    state.visible_history(&prior)
}

fn render_constraints(active: &[GlobalConstraint]) -> String {
    if active.is_empty() {
        return "(none)".to_string();
    }
    active
        .iter()
        .map(|g| format!("- Turn {}: {}", g.origin, g.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn apply_one_shot(
    state: &mut ExtractionState,
    turn: TurnId,
    instruction: &str,
    relations: Vec<OneShotRelation>,
) -> Result<(), String> {
    for rel in relations {
        let action: AgentAction = rel.action.parse().map_err(|e: GraphError| e.to_string())?;
        match action {
            AgentAction::Done => {}
            AgentAction::IdentifyGlobalConstraint => {
                if !state.global_constraints.is_active(turn) {
                    state
                        .global_constraints
                        .apply(GlobalConstraint { origin: turn, text: instruction.to_string() }, &rel.supersedes)
                        .map_err(|e| e.to_string())?;
                }
                state.notebook.record(action, BTreeSet::from([turn])).map_err(|e| e.to_string())?;
            }
            AgentAction::NewTopic => {
                match rel.topic.as_ref().map(parse_topic_value).transpose()?.flatten() {
                    Some(id) => state.topics.revert_to(id, turn).map_err(|e| e.to_string())?,
                    None => {
                        state.topics.start_new_topic(turn);
                    }
                }
                state.notebook.record(action, BTreeSet::new()).map_err(|e| e.to_string())?;
            }
            AgentAction::IdentifyContextAnchored | AgentAction::IdentifyModify | AgentAction::IdentifySummary => {
                if rel.turn_ids.is_empty() {
                    return Err(format!("{action} needs at least one turn id"));
                }
                let label = action.label().expect("non-terminal");
                let located: BTreeSet<TurnId> = rel.turn_ids.into_iter().collect();
                state.add_relation(turn, label, &located).map_err(|e| e.to_string())?;
            }
        }
    }
    Ok(())
}

/// Conflict oracle backed by the `resolve_global_constraint` prompt.
struct LlmConflictOracle<'a, 'b> {
    agent: &'b ExtractionAgent<'a>,
    turn: TurnId,
    step: u32,
}

impl ConflictOracle for LlmConflictOracle<'_, '_> {
    fn superseded(&self, active: &[GlobalConstraint], candidate: &GlobalConstraint) -> Result<Vec<TurnId>, String> {
        let prompt = self
            .agent
            .templates
            .render(
                TemplateKind::ResolveGlobalConstraint,
                &Slots::new()
                    .set("turn", self.turn)
                    .set("constraints", render_constraints(active))
                    .set("instruction", &candidate.text),
            )
            .map_err(|e| e.to_string())?;
        let allowed: Vec<TurnId> = active.iter().map(|g| g.origin).collect();
        let probe = self
            .agent
            .probe(format!("execute:global_constraint:turn{}:step{}", self.turn, self.step));
        self.agent
            .client
            .complete_json(CallSite::ActionExecution, &probe, vec![ChatMessage::user(prompt)], |r: SupersedesReply| {
                match r.supersedes.iter().find(|k| !allowed.contains(k)) {
                    Some(bad) => Err(format!("turn {bad} is not an active constraint")),
                    None => Ok(r.supersedes),
                }
            })
            .map_err(|e| e.to_string())
    }
}
