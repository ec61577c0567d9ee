//! Per-turn orchestration: initial generation, relation extraction, graph
//! prompt construction and rewriting.

mod artifacts;

use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, AgentError, ExtractionAgent, ExtractionMode, Termination, TurnExtraction};
use crate::backend::{diff_counts, BackendError, CallCounts, CallSite, ChatMessage, LlmClient};
use crate::dataset::DialogueSample;
use crate::dialogue::{DialogueHistory, DialogueTurn, TurnId};
use crate::graph::{GraphError, RelationLabel};
use crate::prompt::{
    build_graph_prompt, render_history, GraphPrompt, PromptError, PromptMode, Slots, TemplateKind, TemplateSet,
};
use crate::state::{is_persistent_directive, ExtractionState, GlobalConstraint};

pub use artifacts::{load_pass, load_session, write_atomic, write_sample_artifacts, PassArtifacts, SampleArtifacts};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("unknown pipeline mode `{0}` (expected graphif, llm_only, no_agent or no_graph_prompt)")]
    UnknownMode(String),
    #[error("checkpoint for `{found}` cannot resume sample `{expected}`")]
    CheckpointMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    #[default]
    Graphif,
    LlmOnly,
    /// Relations from one extraction call instead of the agent loop.
    NoAgent,
    /// Graph prompt without relation definitions or response constraints.
    NoGraphPrompt,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 4] = [Self::Graphif, Self::LlmOnly, Self::NoAgent, Self::NoGraphPrompt];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Graphif => "graphif",
            Self::LlmOnly => "llm_only",
            Self::NoAgent => "no_agent",
            Self::NoGraphPrompt => "no_graph_prompt",
        }
    }
}

impl std::fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| PipelineError::UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub agent: AgentConfig,
    /// Skip the rewrite call when the graph prompt has no sections.
    pub skip_empty_rewrite: bool,
    /// Also pass the visible history to the rewrite call.
    pub rewrite_with_history: bool,
    /// Register a first-turn standing rule as a global constraint using the
    /// rule classifier (no LLM call).
    pub seed_first_turn_constraint: bool,
    /// Per-turn character budget for quoted content in graph prompts.
    pub prompt_char_budget: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            agent: AgentConfig::default(),
            skip_empty_rewrite: true,
            rewrite_with_history: false,
            seed_first_turn_constraint: true,
            prompt_char_budget: crate::prompt::DEFAULT_TURN_CHAR_BUDGET,
        }
    }
}

/// LLM clients for the three roles of a turn.
#[derive(Debug, Clone)]
pub struct Backends {
    pub generator: LlmClient,
    pub agent: LlmClient,
    pub rewriter: LlmClient,
}

impl Backends {
    /// One client for every role.
    pub fn shared(client: LlmClient) -> Self {
        Self { generator: client.fork(), agent: client.fork(), rewriter: client }
    }

    /// Same backends with fresh per-session ledgers.
    pub fn fork(&self) -> Self {
        Self { generator: self.generator.fork(), agent: self.agent.fork(), rewriter: self.rewriter.fork() }
    }

    fn counts(&self) -> CallCounts {
        let mut out = CallCounts::new();
        for c in [&self.generator, &self.agent, &self.rewriter] {
            for (site, n) in c.ledger().counts() {
                *out.entry(site).or_default() += n;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnResult {
    pub turn: TurnId,
    pub initial_response: String,
    pub final_response: String,
    pub extraction: TurnExtraction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_prompt: Option<GraphPrompt>,
    pub calls_used: CallCounts,
}

impl TurnResult {
    pub fn total_calls(&self) -> u64 {
        self.calls_used.values().sum()
    }

    /// False when the rewrite failed and the initial response was kept.
    pub fn rewritten(&self) -> bool {
        self.calls_used.contains_key(&CallSite::Rewrite) && self.final_response != self.initial_response
    }
}

/// One dialogue in progress. Serializable as a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub mode: PipelineMode,
    pub history: DialogueHistory,
    pub state: ExtractionState,
    pub results: Vec<TurnResult>,
}

impl Session {
    pub fn new(id: impl Into<String>, mode: PipelineMode) -> Self {
        Self {
            id: id.into(),
            mode,
            history: DialogueHistory::new(),
            state: ExtractionState::new(),
            results: Vec::new(),
        }
    }

    pub fn next_turn(&self) -> TurnId {
        self.history.next_index()
    }

    pub fn to_checkpoint(&self) -> String {
        serde_json::to_string(self).expect("session serializes")
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Outcome of running one sample. `error` is set when a fatal failure
/// stopped the dialogue; `session.results` then holds the completed prefix.
#[derive(Debug)]
pub struct DialogueRun {
    pub session: Session,
    pub error: Option<PipelineError>,
}

/// One-message-per-turn concatenation of the full history plus the new
/// instruction.
pub fn initial_messages(history: &[DialogueTurn], instruction: &str) -> Vec<ChatMessage> {
    let mut messages = Vec::with_capacity(history.len() * 2 + 1);
    for t in history {
        messages.push(ChatMessage::user(t.instruction.clone()));
        messages.push(ChatMessage::assistant(t.response.clone().unwrap_or_default()));
    }
    messages.push(ChatMessage::user(instruction));
    messages
}

pub struct Pipeline {
    pub mode: PipelineMode,
    pub config: PipelineConfig,
    pub templates: TemplateSet,
}

impl Pipeline {
    pub fn new(mode: PipelineMode, config: PipelineConfig) -> Self {
        Self { mode, config, templates: TemplateSet::builtin() }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn generate_initial(
        &self,
        session: &Session,
        instruction: &str,
        client: &LlmClient,
    ) -> Result<String, BackendError> {
        let turn = session.next_turn();
        client.complete(
            CallSite::InitialGeneration,
            format!("{}/initial:turn{turn}", session.id),
            initial_messages(session.history.turns(), instruction),
        )
    }

    /// Rewrites `initial` under `prompt`; any failure keeps `initial`.
    pub fn rewrite_response(
        &self,
        session: &Session,
        initial: &str,
        prompt: &GraphPrompt,
        instruction: &str,
        client: &LlmClient,
    ) -> String {
        let turn = session.next_turn();
        let context = if self.config.rewrite_with_history {
            let prior = session.history.turns();
            let visible = session.state.visible_history(prior);
            format!("\nConversation so far:\n{}\n", render_history(&visible, self.config.prompt_char_budget))
        } else {
            String::new()
        };
        let text = match self.templates.render(
            TemplateKind::Rewrite,
            &Slots::new()
                .set("context", context)
                .set("graph_prompt", prompt.render())
                .set("instruction", instruction)
                .set("initial_response", initial),
        ) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("{}: turn {turn}: rewrite prompt failed ({e}); keeping initial response", session.id);
                return initial.to_string();
            }
        };
        match client.complete(
            CallSite::Rewrite,
            format!("{}/rewrite:turn{turn}", session.id),
            vec![ChatMessage::user(text)],
        ) {
            Ok(r) if !r.trim().is_empty() => r,
            Ok(_) => {
                log::warn!("{}: turn {turn}: empty rewrite; keeping initial response", session.id);
                initial.to_string()
            }
            Err(e) => {
                log::warn!("{}: turn {turn}: rewrite failed ({e}); keeping initial response", session.id);
                initial.to_string()
            }
        }
    }

    /// Runs one turn end to end and appends it to the session.
    pub fn process_turn(
        &self,
        session: &mut Session,
        instruction: &str,
        backends: &Backends,
    ) -> Result<TurnResult, PipelineError> {
        let turn = session.next_turn();
        let pending = DialogueTurn::new(turn, instruction)?;
        let before = backends.counts();

        let initial = self.generate_initial(session, instruction, &backends.generator)?;
        session.state.begin_turn(turn)?;

        let (extraction, graph_prompt, final_response) = if turn == 1 {
            if self.config.seed_first_turn_constraint && is_persistent_directive(instruction) {
                session
                    .state
                    .global_constraints
                    .apply(GlobalConstraint { origin: 1, text: instruction.to_string() }, &[])?;
            }
            (TurnExtraction::skipped(1), None, initial.clone())
        } else if self.mode == PipelineMode::LlmOnly {
            (TurnExtraction::skipped(turn), None, initial.clone())
        } else {
            let extraction = self.extract(session, instruction, &backends.agent)?;
            let mode = match self.mode {
                PipelineMode::NoGraphPrompt => PromptMode::RelationFree,
                _ => PromptMode::Graph,
            };
            let prompt = build_graph_prompt(
                &extraction,
                &session.state,
                session.history.turns(),
                mode,
                self.config.prompt_char_budget,
            )?;
            let final_response = if prompt.is_empty() && self.config.skip_empty_rewrite {
                initial.clone()
            } else {
                self.rewrite_response(session, &initial, &prompt, instruction, &backends.rewriter)
            };
            (extraction, Some(prompt), final_response)
        };

        session.history.push(pending.with_response(final_response.clone()))?;
        let result = TurnResult {
            turn,
            initial_response: initial,
            final_response,
            extraction,
            graph_prompt,
            calls_used: diff_counts(&before, &backends.counts()),
        };
        session.results.push(result.clone());
        Ok(result)
    }

    fn extract(&self, session: &mut Session, instruction: &str, client: &LlmClient) -> Result<TurnExtraction, PipelineError> {
        let mut agent_config = self.config.agent.clone();
        if self.mode == PipelineMode::NoAgent {
            agent_config.extraction_mode = ExtractionMode::OneShot;
        }
        let agent = ExtractionAgent::new(client, &self.templates, &agent_config).with_session(&session.id);
        let history = session.history.turns().to_vec();
        let outcome = match agent_config.extraction_mode {
            ExtractionMode::Iterative => agent.extract_relations(instruction, &history, &mut session.state),
            ExtractionMode::OneShot => agent.one_shot_extract(instruction, &history, &mut session.state),
        };
        match outcome {
            Ok(x) => Ok(x),
            Err(e) if e.is_fatal() => Err(e.into()),
            Err(e) => {
                log::warn!("{}: turn {}: extraction degraded: {e}", session.id, session.next_turn());
                Ok(TurnExtraction::from_state(&session.state, Termination::Failed(e.to_string())))
            }
        }
    }

    /// Processes the sample's remaining turns in order, continuing `session`
    /// if it already holds a prefix. `on_turn` runs after every turn (used
    /// for checkpointing).
    pub fn resume_dialogue(
        &self,
        mut session: Session,
        sample: &DialogueSample,
        backends: &Backends,
        mut on_turn: impl FnMut(&Session, &TurnResult),
    ) -> DialogueRun {
        if session.id != sample.sample_id {
            let found = session.id.clone();
            return DialogueRun {
                session,
                error: Some(PipelineError::CheckpointMismatch { expected: sample.sample_id.clone(), found }),
            };
        }
        let done = session.history.len();
        for turn in sample.turns.iter().skip(done) {
            match self.process_turn(&mut session, &turn.instruction, backends) {
                Ok(r) => on_turn(&session, &r),
                Err(e) => {
                    log::error!("{}: turn {}: {e}", session.id, turn.index);
                    return DialogueRun { session, error: Some(e) };
                }
            }
        }
        DialogueRun { session, error: None }
    }

    pub fn run_dialogue(&self, sample: &DialogueSample, backends: &Backends) -> DialogueRun {
        let session = Session::new(sample.sample_id.clone(), self.mode);
        self.resume_dialogue(session, sample, &backends.fork(), |_, _| {})
    }

    /// Runs samples on up to `parallel` threads; results keep sample order.
    pub fn run_many(
        &self,
        samples: &[DialogueSample],
        backends: &Backends,
        parallel: usize,
        start: impl Fn(&DialogueSample) -> Session + Sync,
        on_turn: impl Fn(&Session, &TurnResult) + Sync,
    ) -> Vec<DialogueRun> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<DialogueRun>>> = samples.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..parallel.clamp(1, samples.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(sample) = samples.get(i) else { break };
                    let run = self.resume_dialogue(start(sample), sample, &backends.fork(), &on_turn);
                    *slots[i].lock().expect("slot lock") = Some(run);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every sample ran"))
            .collect()
    }
}

/// Edges of `state`'s graph excluding topic edges, for comparison against a
/// ground-truth graph.
pub fn relation_edges(graph: &crate::graph::RelationGraph) -> Vec<(TurnId, RelationLabel, TurnId)> {
    graph
        .edges()
        .iter()
        .filter(|e| e.label != RelationLabel::NewTopic)
        .map(|e| (e.src, e.label, e.dst))
        .collect()
}
