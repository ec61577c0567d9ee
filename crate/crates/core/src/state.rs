//! Per-dialogue extraction state: the notebook, the global constraint set,
//! the topic tracker, and the graph they feed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dialogue::{DialogueTurn, TurnId};
use crate::graph::{AgentAction, GraphError, RelationGraph, RelationLabel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotebookEntry {
    pub step: u32,
    pub action: AgentAction,
    pub located: BTreeSet<TurnId>,
}

/// Memory of the relations already extracted for the turn in scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notebook {
    scope_turn: TurnId,
    entries: Vec<NotebookEntry>,
}

impl Notebook {
    pub fn new(scope_turn: TurnId) -> Self {
        Self {
            scope_turn,
            entries: Vec::new(),
        }
    }

    pub fn scope_turn(&self) -> TurnId {
        self.scope_turn
    }

    pub fn entries(&self) -> &[NotebookEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_step(&self) -> u32 {
        self.entries.last().map_or(1, |e| e.step + 1)
    }

    /// Turns already located by a context-anchored or modify step.
    pub fn anchored_turns(&self) -> BTreeSet<TurnId> {
        self.entries
            .iter()
            .filter(|e| is_anchor_like(e.action))
            .flat_map(|e| e.located.iter().copied())
            .collect()
    }

    pub fn is_recorded(&self, turn: TurnId) -> bool {
        self.anchored_turns().contains(&turn)
    }

    pub fn record(
        &mut self,
        action: AgentAction,
        located: BTreeSet<TurnId>,
    ) -> Result<&NotebookEntry, GraphError> {
        if action == AgentAction::Done {
            return Err(GraphError::DoneRecorded);
        }
        if is_anchor_like(action) {
            let seen = self.anchored_turns();
            if let Some(&turn) = located.iter().find(|t| seen.contains(t)) {
                return Err(GraphError::AlreadyRecorded { action, turn });
            }
        }
        let step = self.next_step();
        self.entries.push(NotebookEntry {
            step,
            action,
            located,
        });
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Numbered plain-text list of `(action, turns)` pairs.
    pub fn render(&self) -> String {
        if self.entries.is_empty() {
            return "(empty)".to_string();
        }
        self.entries
            .iter()
            .map(|e| {
                let turns = if e.located.is_empty() {
                    "none".to_string()
                } else {
                    join_ids(&e.located)
                };
                format!("{}. {} -> turns [{}]", e.step, e.action, turns)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn is_anchor_like(action: AgentAction) -> bool {
    matches!(
        action,
        AgentAction::IdentifyContextAnchored | AgentAction::IdentifyModify
    )
}

pub fn join_ids<'a>(ids: impl IntoIterator<Item = &'a TurnId>) -> String {
    ids.into_iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalConstraint {
    pub origin: TurnId,
    pub text: String,
}

/// Decides which active constraints a new one conflicts with or updates.
pub trait ConflictOracle {
    /// Origins of the entries in `active` that `candidate` supersedes.
    fn superseded(
        &self,
        active: &[GlobalConstraint],
        candidate: &GlobalConstraint,
    ) -> Result<Vec<TurnId>, String>;
}

/// Coarse constraint families used by [`RuleConflictOracle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintCategory {
    Ending,
    Beginning,
    Punctuation,
    Length,
    Casing,
    Language,
    Format,
}

impl ConstraintCategory {
    pub fn classify(text: &str) -> Option<Self> {
        let t = text.to_ascii_lowercase();
        let has = |needles: &[&str]| needles.iter().any(|n| t.contains(n));
        if has(&["end with", "ends with", "end every", "end all", "end each", "ending with"]) {
            Some(Self::Ending)
        } else if has(&["begin with", "begins with", "start with", "starts with", "beginning with"]) {
            Some(Self::Beginning)
        } else if has(&["comma", "punctuation", "exclamation", "semicolon"]) {
            Some(Self::Punctuation)
        } else if has(&["words", "word count", "sentences", "characters long"]) {
            Some(Self::Length)
        } else if has(&["uppercase", "lowercase", "capital letters"]) {
            Some(Self::Casing)
        } else if has(&["in french", "in spanish", "in german", "in chinese", "in english", "language"]) {
            Some(Self::Language)
        } else if has(&["json", "bullet", "markdown", "numbered list", "table"]) {
            Some(Self::Format)
        } else {
            None
        }
    }
}

/// Whether `text` reads as a standing rule for all later responses: a scope
/// cue ("from now on", "all subsequent responses", ...) plus a recognizable
/// constraint category. Used where no LLM call is made, such as the first
/// turn of a dialogue.
pub fn is_persistent_directive(text: &str) -> bool {
    let t = text.to_ascii_lowercase();
    let scoped = [
        "from now on",
        "all subsequent",
        "all future",
        "every response",
        "all your responses",
        "all of your responses",
        "for the rest of",
        "going forward",
    ]
    .iter()
    .any(|cue| t.contains(cue));
    scoped && ConstraintCategory::classify(text).is_some()
}

/// Same category means conflict; unclassifiable constraints never conflict.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleConflictOracle;

impl ConflictOracle for RuleConflictOracle {
    fn superseded(
        &self,
        active: &[GlobalConstraint],
        candidate: &GlobalConstraint,
    ) -> Result<Vec<TurnId>, String> {
        let Some(cat) = ConstraintCategory::classify(&candidate.text) else {
            return Ok(Vec::new());
        };
        Ok(active
            .iter()
            .filter(|g| ConstraintCategory::classify(&g.text) == Some(cat))
            .map(|g| g.origin)
            .collect())
    }
}

/// Active global constraints, ordered by origin turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalConstraintSet {
    entries: Vec<GlobalConstraint>,
}

impl GlobalConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[GlobalConstraint] {
        &self.entries
    }

    pub fn origins(&self) -> impl Iterator<Item = TurnId> + '_ {
        self.entries.iter().map(|g| g.origin)
    }

    pub fn is_active(&self, origin: TurnId) -> bool {
        self.entries.iter().any(|g| g.origin == origin)
    }

    pub fn get(&self, origin: TurnId) -> Option<&GlobalConstraint> {
        self.entries.iter().find(|g| g.origin == origin)
    }

    /// Inserts `candidate`, first removing whatever the oracle reports as
    /// superseded. Returns the removed entries.
    pub fn resolve(
        &mut self,
        candidate: GlobalConstraint,
        oracle: &dyn ConflictOracle,
    ) -> Result<Vec<GlobalConstraint>, GraphError> {
        if let Some(latest) = self.entries.last() {
            if candidate.origin <= latest.origin {
                return Err(GraphError::StaleConstraint {
                    candidate: candidate.origin,
                    latest: latest.origin,
                });
            }
        }
        let superseded = oracle
            .superseded(&self.entries, &candidate)
            .map_err(GraphError::OracleFailure)?;
        self.apply(candidate, &superseded)
    }

    /// Inserts `candidate` after removing the listed origins (ids not in the
    /// set are ignored).
    pub fn apply(
        &mut self,
        candidate: GlobalConstraint,
        superseded: &[TurnId],
    ) -> Result<Vec<GlobalConstraint>, GraphError> {
        if let Some(latest) = self.entries.last() {
            if candidate.origin <= latest.origin {
                return Err(GraphError::StaleConstraint {
                    candidate: candidate.origin,
                    latest: latest.origin,
                });
            }
        }
        let (removed, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut self.entries)
            .into_iter()
            .partition(|g| superseded.contains(&g.origin));
        self.entries = kept;
        self.entries.push(candidate);
        Ok(removed)
    }
}

pub type TopicId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub id: TopicId,
    pub members: BTreeSet<TurnId>,
}

/// Partition of processed turns into topics plus the current-topic pointer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicTracker {
    topics: Vec<Topic>,
    current: Option<TopicId>,
}

impl TopicTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    pub fn current_id(&self) -> Option<TopicId> {
        self.current
    }

    pub fn current(&self) -> Option<&Topic> {
        self.current.and_then(|id| self.topic(id))
    }

    pub fn topic(&self, id: TopicId) -> Option<&Topic> {
        self.topics.iter().find(|t| t.id == id)
    }

    pub fn topic_of(&self, turn: TurnId) -> Option<TopicId> {
        self.topics
            .iter()
            .find(|t| t.members.contains(&turn))
            .map(|t| t.id)
    }

    /// First turn of every topic, in topic order.
    pub fn topic_starts(&self) -> Vec<TurnId> {
        self.topics
            .iter()
            .filter_map(|t| t.members.first().copied())
            .collect()
    }

    /// Places `turn` in the current topic, opening topic 1 if none exists.
    pub fn assign_current(&mut self, turn: TurnId) {
        if self.topic_of(turn).is_some() {
            return;
        }
        match self.current {
            Some(id) => {
                let topic = self.topic_mut(id).expect("pointer refers to a topic");
                topic.members.insert(turn);
            }
            None => {
                self.open(turn);
            }
        }
    }

    /// Moves `turn` into a fresh topic and points at it. A turn that is alone
    /// in its topic already starts a topic, so nothing changes.
    pub fn start_new_topic(&mut self, turn: TurnId) -> TopicId {
        if let Some(id) = self.topic_of(turn) {
            if self.topic(id).is_some_and(|t| t.members.len() == 1) {
                self.current = Some(id);
                return id;
            }
            self.detach(turn);
        }
        self.open(turn)
    }

    /// Moves `turn` into the existing topic `target` and points at it.
    pub fn revert_to(&mut self, target: TopicId, turn: TurnId) -> Result<(), GraphError> {
        if self.topic(target).is_none() {
            return Err(GraphError::UnknownTopic(target));
        }
        if self.topic_of(turn) != Some(target) {
            self.detach(turn);
            self.topic_mut(target)
                .ok_or(GraphError::UnknownTopic(target))?
                .members
                .insert(turn);
        }
        self.current = Some(target);
        Ok(())
    }

    fn open(&mut self, turn: TurnId) -> TopicId {
        let id = self.topics.iter().map(|t| t.id).max().unwrap_or(0) + 1;
        self.topics.push(Topic {
            id,
            members: BTreeSet::from([turn]),
        });
        self.current = Some(id);
        id
    }

    fn detach(&mut self, turn: TurnId) {
        for t in &mut self.topics {
            t.members.remove(&turn);
        }
        self.topics.retain(|t| !t.members.is_empty());
        if self.current.is_some_and(|id| self.topic(id).is_none()) {
            self.current = self.topics.last().map(|t| t.id);
        }
    }

    fn topic_mut(&mut self, id: TopicId) -> Option<&mut Topic> {
        self.topics.iter_mut().find(|t| t.id == id)
    }
}

/// Everything the extraction agent carries across the turns of one dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionState {
    pub graph: RelationGraph,
    pub global_constraints: GlobalConstraintSet,
    pub topics: TopicTracker,
    pub notebook: Notebook,
}

impl Default for ExtractionState {
    fn default() -> Self {
        Self::new()
    }
}

impl ExtractionState {
    pub fn new() -> Self {
        Self {
            graph: RelationGraph::new(),
            global_constraints: GlobalConstraintSet::new(),
            topics: TopicTracker::new(),
            notebook: Notebook::new(0),
        }
    }

    /// Registers `turn` as a node, assigns it to the current topic, and
    /// resets the notebook.
    pub fn begin_turn(&mut self, turn: TurnId) -> Result<(), GraphError> {
        self.graph.add_node(turn)?;
        self.topics.assign_current(turn);
        self.notebook = Notebook::new(turn);
        Ok(())
    }

    /// Adds one `(current, label, i)` edge per located turn and records the
    /// step in the notebook.
    pub fn add_relation(
        &mut self,
        current: TurnId,
        label: RelationLabel,
        located: &BTreeSet<TurnId>,
    ) -> Result<(), GraphError> {
        self.check_location(current, located)?;
        if self.notebook.scope_turn() != current {
            return Err(GraphError::WrongScope {
                scope: self.notebook.scope_turn(),
                turn: current,
            });
        }
        self.notebook.record(label.action(), located.clone())?;
        for &dst in located {
            self.graph.insert_edge(current, label, dst)?;
        }
        Ok(())
    }

    /// Adds edges without a notebook entry (framework-derived links).
    pub fn link(
        &mut self,
        current: TurnId,
        label: RelationLabel,
        located: &BTreeSet<TurnId>,
    ) -> Result<(), GraphError> {
        self.check_location(current, located)?;
        for &dst in located {
            self.graph.insert_edge(current, label, dst)?;
        }
        Ok(())
    }

    fn check_location(&self, current: TurnId, located: &BTreeSet<TurnId>) -> Result<(), GraphError> {
        if !self.graph.contains_node(current) {
            return Err(GraphError::UnknownNode(current));
        }
        if let Some(&bad) = located.iter().find(|&&i| i == 0 || i >= current) {
            return Err(GraphError::LocatedTurnOutOfRange {
                current,
                located: bad,
            });
        }
        Ok(())
    }

    /// Turns of the current topic plus origins of active global constraints,
    /// in original order.
    pub fn visible_history(&self, history: &[DialogueTurn]) -> Vec<DialogueTurn> {
        let topic = self.topics.current();
        history
            .iter()
            .filter(|t| {
                topic.is_some_and(|tp| tp.members.contains(&t.index))
                    || self.global_constraints.is_active(t.index)
            })
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[TurnId]) -> BTreeSet<TurnId> {
        v.iter().copied().collect()
    }

    fn state_through(n: TurnId) -> ExtractionState {
        let mut s = ExtractionState::new();
        for t in 1..=n {
            s.begin_turn(t).unwrap();
        }
        s
    }

    fn history(n: TurnId) -> Vec<DialogueTurn> {
        (1..=n)
            .map(|i| {
                DialogueTurn::new(i, format!("i{i}"))
                    .unwrap()
                    .with_response(format!("r{i}"))
            })
            .collect()
    }

    #[test]
    fn persistent_directives() {
        assert!(is_persistent_directive(
            "All subsequent responses should end with \"Is there anything else I can help you with?\""
        ));
        assert!(is_persistent_directive("From now on, don't use any commas in your answers."));
        assert!(!is_persistent_directive("Write a story that ends with a twist."));
        assert!(!is_persistent_directive("From now on, be nice."));
    }

    #[test]
    fn add_relation_global_constraint_edge() {
        let mut s = state_through(10);
        s.add_relation(10, RelationLabel::GlobalConstraint, &ids(&[1])).unwrap();
        let edges: Vec<_> = s.graph.edges().iter().map(|e| (e.src, e.label, e.dst)).collect();
        assert_eq!(edges, vec![(10, RelationLabel::GlobalConstraint, 1)]);
        assert_eq!(s.notebook.entries().len(), 1);
    }

    #[test]
    fn add_relation_empty_set_only_touches_notebook() {
        let mut s = state_through(4);
        let before = s.graph.clone();
        s.add_relation(4, RelationLabel::Summary, &BTreeSet::new()).unwrap();
        assert_eq!(s.graph, before);
        assert_eq!(s.notebook.entries().len(), 1);
    }

    #[test]
    fn add_relation_summary_fan_out() {
        let mut s = state_through(24);
        let range: BTreeSet<_> = (14..=23).collect();
        s.add_relation(24, RelationLabel::Summary, &range).unwrap();
        assert_eq!(s.graph.edges_from(24).count(), 10);
    }

    #[test]
    fn add_relation_out_of_range() {
        let mut s = state_through(5);
        for bad in [0, 5, 6] {
            let err = s.add_relation(5, RelationLabel::Modify, &ids(&[bad])).unwrap_err();
            assert!(matches!(err, GraphError::LocatedTurnOutOfRange { current: 5, .. }));
        }
    }

    #[test]
    fn add_relation_duplicate_triple_via_link_is_idempotent() {
        let mut s = state_through(3);
        s.link(3, RelationLabel::GlobalConstraint, &ids(&[1])).unwrap();
        s.link(3, RelationLabel::GlobalConstraint, &ids(&[1])).unwrap();
        assert_eq!(s.graph.edges().len(), 1);
    }

    #[test]
    fn notebook_unrecorded_rule() {
        let mut nb = Notebook::new(9);
        nb.record(AgentAction::IdentifyContextAnchored, ids(&[2])).unwrap();
        let err = nb.record(AgentAction::IdentifyModify, ids(&[2])).unwrap_err();
        assert!(matches!(err, GraphError::AlreadyRecorded { turn: 2, .. }));
        nb.record(AgentAction::IdentifySummary, ids(&[1, 2])).unwrap();
        assert!(nb.record(AgentAction::Done, BTreeSet::new()).is_err());
        let steps: Vec<_> = nb.entries().iter().map(|e| e.step).collect();
        assert_eq!(steps, vec![1, 2]);
        assert_eq!(
            nb.render(),
            "1. Identify_Context_Anchored -> turns [2]\n2. Identify_Summary -> turns [1, 2]"
        );
    }

    #[test]
    fn resolve_into_empty_set() {
        let mut set = GlobalConstraintSet::new();
        let removed = set
            .resolve(
                GlobalConstraint { origin: 1, text: "end with X".into() },
                &RuleConflictOracle,
            )
            .unwrap();
        assert!(removed.is_empty());
        assert_eq!(set.origins().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn resolve_latest_takes_precedence() {
        let mut set = GlobalConstraintSet::new();
        set.resolve(
            GlobalConstraint { origin: 3, text: "All responses must begin with letter A".into() },
            &RuleConflictOracle,
        )
        .unwrap();
        let removed = set
            .resolve(
                GlobalConstraint { origin: 7, text: "Now begin with letter T instead".into() },
                &RuleConflictOracle,
            )
            .unwrap();
        assert_eq!(removed.len(), 1);
        assert_eq!(set.origins().collect::<Vec<_>>(), vec![7]);
    }

    #[test]
    fn resolve_disjoint_categories_keep_both() {
        let mut set = GlobalConstraintSet::new();
        set.resolve(GlobalConstraint { origin: 1, text: "end with X".into() }, &RuleConflictOracle)
            .unwrap();
        set.resolve(GlobalConstraint { origin: 9, text: "no commas".into() }, &RuleConflictOracle)
            .unwrap();
        assert_eq!(set.origins().collect::<Vec<_>>(), vec![1, 9]);
    }

    #[test]
    fn resolve_propagates_oracle_failure_and_rejects_stale() {
        struct Broken;
        impl ConflictOracle for Broken {
            fn superseded(&self, _: &[GlobalConstraint], _: &GlobalConstraint) -> Result<Vec<TurnId>, String> {
                Err("judge offline".into())
            }
        }
        let mut set = GlobalConstraintSet::new();
        let err = set
            .resolve(GlobalConstraint { origin: 2, text: "x".into() }, &Broken)
            .unwrap_err();
        assert!(matches!(err, GraphError::OracleFailure(_)));
        set.resolve(GlobalConstraint { origin: 4, text: "x".into() }, &RuleConflictOracle).unwrap();
        let err = set
            .resolve(GlobalConstraint { origin: 4, text: "y".into() }, &RuleConflictOracle)
            .unwrap_err();
        assert!(matches!(err, GraphError::StaleConstraint { .. }));
    }

    #[test]
    fn visible_history_mteval_turn_20() {
        // Turn 1 is a global constraint; turn 19 opens the second story.
        let mut s = ExtractionState::new();
        for t in 1..=20 {
            s.begin_turn(t).unwrap();
            if t == 1 {
                s.global_constraints
                    .apply(GlobalConstraint { origin: 1, text: "end with X".into() }, &[])
                    .unwrap();
            }
            if t == 19 {
                s.topics.start_new_topic(19);
            }
        }
        let visible: Vec<_> = s.visible_history(&history(19)).iter().map(|t| t.index).collect();
        assert_eq!(visible, vec![1, 19]);
    }

    #[test]
    fn visible_history_structflow_turn_15() {
        let mut s = ExtractionState::new();
        for t in 1..=15 {
            s.begin_turn(t).unwrap();
            if t == 5 {
                s.global_constraints
                    .apply(GlobalConstraint { origin: 5, text: "end with X".into() }, &[])
                    .unwrap();
            }
            if t == 14 {
                s.topics.start_new_topic(14);
            }
        }
        let visible: Vec<_> = s.visible_history(&history(14)).iter().map(|t| t.index).collect();
        assert_eq!(visible, vec![5, 14]);
    }

    #[test]
    fn visible_history_single_topic_is_full() {
        let s = state_through(6);
        assert_eq!(s.visible_history(&history(5)), history(5));
    }

    #[test]
    fn topic_tracker_new_and_revert() {
        let mut tt = TopicTracker::new();
        tt.assign_current(1);
        assert_eq!(tt.start_new_topic(1), 1, "first turn already starts a topic");
        for t in 2..=18 {
            tt.assign_current(t);
        }
        tt.assign_current(19);
        let t2 = tt.start_new_topic(19);
        assert_eq!(t2, 2);
        assert_eq!(tt.topic_starts(), vec![1, 19]);
        tt.assign_current(20);
        tt.assign_current(21);
        tt.revert_to(1, 21).unwrap();
        assert_eq!(tt.current_id(), Some(1));
        assert_eq!(tt.topic_of(21), Some(1));
        assert_eq!(tt.topic_of(20), Some(2));
        assert!(tt.revert_to(7, 22).is_err());
    }

    proptest! {
        #[test]
        fn resolve_keeps_origins_increasing(texts in prop::collection::vec(0usize..8, 1..30)) {
            let pool = ["end with A", "begin with B", "no commas", "under 50 words",
                        "uppercase only", "answer in French", "use bullet points", "be polite"];
            let mut set = GlobalConstraintSet::new();
            for (i, k) in texts.iter().enumerate() {
                set.resolve(
                    GlobalConstraint { origin: i as TurnId + 1, text: pool[*k].to_string() },
                    &RuleConflictOracle,
                ).unwrap();
                let origins: Vec<_> = set.origins().collect();
                prop_assert!(origins.windows(2).all(|w| w[0] < w[1]));
                // After resolution no two active entries share a category.
                let cats: Vec<_> = set.entries().iter()
                    .filter_map(|g| ConstraintCategory::classify(&g.text)).collect();
                for (a, ca) in cats.iter().enumerate() {
                    prop_assert!(!cats[a + 1..].contains(ca));
                }
            }
        }

        #[test]
        fn visible_history_is_subsequence(n in 2u32..30, starts in prop::collection::btree_set(2u32..30, 0..4),
                                          gc in prop::collection::btree_set(1u32..30, 0..3)) {
            let mut s = ExtractionState::new();
            for t in 1..=n {
                s.begin_turn(t).unwrap();
                if starts.contains(&t) { s.topics.start_new_topic(t); }
                if gc.contains(&t) {
                    s.global_constraints.apply(GlobalConstraint { origin: t, text: "x".into() }, &[]).unwrap();
                }
            }
            let h = history(n - 1);
            let vis = s.visible_history(&h);
            let mut it = h.iter();
            for v in &vis {
                prop_assert!(it.any(|t| t == v));
            }
        }
    }
}
