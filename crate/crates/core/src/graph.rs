//! Relation labels, agent actions, and the directed relation graph.
//!
//! Every edge points from a later turn to a strictly earlier one, so the
//! graph is acyclic by construction. Nodes and edges are kept in ordered
//! sets; exports are therefore deterministic.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dialogue::TurnId;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("turn index must be >= 1, got {0}")]
    InvalidTurnIndex(TurnId),
    #[error("turn {0} has an empty instruction")]
    EmptyInstruction(TurnId),
    #[error("history not contiguous: expected turn {expected}, found {found}")]
    NonContiguousHistory { expected: TurnId, found: TurnId },
    #[error("turn {0} has no response but is followed by other turns")]
    MissingResponse(TurnId),
    #[error("located turn {located} out of range for current turn {current}")]
    LocatedTurnOutOfRange { current: TurnId, located: TurnId },
    #[error("turn {0} is not a node of the graph")]
    UnknownNode(TurnId),
    #[error("edge {src} -> {dst} does not point to a strictly earlier turn")]
    BackwardEdge { src: TurnId, dst: TurnId },
    #[error("turn {turn} already recorded for {action} in this turn's notebook")]
    AlreadyRecorded { action: AgentAction, turn: TurnId },
    #[error("notebook entry for {0} must locate at least one turn")]
    EmptyLocation(AgentAction),
    #[error("Done is a terminal marker and cannot be recorded")]
    DoneRecorded,
    #[error("notebook is scoped to turn {scope}, not {turn}")]
    WrongScope { scope: TurnId, turn: TurnId },
    #[error("global constraint origin {candidate} must be later than {latest}")]
    StaleConstraint { candidate: TurnId, latest: TurnId },
    #[error("unknown topic {0}")]
    UnknownTopic(u32),
    #[error("conflict oracle failed: {0}")]
    OracleFailure(String),
    #[error("unknown relation label `{0}`")]
    UnknownLabel(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("graph json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Closed set of inter-turn relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationLabel {
    GlobalConstraint,
    ContextAnchored,
    Modify,
    Summary,
    NewTopic,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 5] = [
        RelationLabel::GlobalConstraint,
        RelationLabel::ContextAnchored,
        RelationLabel::Modify,
        RelationLabel::Summary,
        RelationLabel::NewTopic,
    ];

    /// Wire name used in dataset and graph json.
    pub fn as_str(self) -> &'static str {
        match self {
            RelationLabel::GlobalConstraint => "global_constraint",
            RelationLabel::ContextAnchored => "context_anchored",
            RelationLabel::Modify => "modify",
            RelationLabel::Summary => "summary",
            RelationLabel::NewTopic => "new_topic",
        }
    }

    /// CamelCase name used in DOT labels.
    pub fn display_name(self) -> &'static str {
        match self {
            RelationLabel::GlobalConstraint => "GlobalConstraint",
            RelationLabel::ContextAnchored => "ContextAnchored",
            RelationLabel::Modify => "Modify",
            RelationLabel::Summary => "Summary",
            RelationLabel::NewTopic => "NewTopic",
        }
    }

    pub fn action(self) -> AgentAction {
        match self {
            RelationLabel::GlobalConstraint => AgentAction::IdentifyGlobalConstraint,
            RelationLabel::ContextAnchored => AgentAction::IdentifyContextAnchored,
            RelationLabel::Modify => AgentAction::IdentifyModify,
            RelationLabel::Summary => AgentAction::IdentifySummary,
            RelationLabel::NewTopic => AgentAction::NewTopic,
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationLabel {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim();
        RelationLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == key || l.display_name() == key)
            .ok_or_else(|| GraphError::UnknownLabel(s.to_string()))
    }
}

/// The agent's action space: one action per relation plus the terminal `Done`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentAction {
    #[serde(rename = "Identify_Global_Constraint")]
    IdentifyGlobalConstraint,
    #[serde(rename = "Identify_Context_Anchored")]
    IdentifyContextAnchored,
    #[serde(rename = "Identify_Modify")]
    IdentifyModify,
    #[serde(rename = "Identify_Summary")]
    IdentifySummary,
    #[serde(rename = "New_Topic")]
    NewTopic,
    #[serde(rename = "Done")]
    Done,
}

impl AgentAction {
    pub const ALL: [AgentAction; 6] = [
        AgentAction::IdentifyGlobalConstraint,
        AgentAction::IdentifyContextAnchored,
        AgentAction::IdentifyModify,
        AgentAction::IdentifySummary,
        AgentAction::NewTopic,
        AgentAction::Done,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentAction::IdentifyGlobalConstraint => "Identify_Global_Constraint",
            AgentAction::IdentifyContextAnchored => "Identify_Context_Anchored",
            AgentAction::IdentifyModify => "Identify_Modify",
            AgentAction::IdentifySummary => "Identify_Summary",
            AgentAction::NewTopic => "New_Topic",
            AgentAction::Done => "Done",
        }
    }

    /// The relation this action extracts; `None` for `Done`.
    pub fn label(self) -> Option<RelationLabel> {
        match self {
            AgentAction::IdentifyGlobalConstraint => Some(RelationLabel::GlobalConstraint),
            AgentAction::IdentifyContextAnchored => Some(RelationLabel::ContextAnchored),
            AgentAction::IdentifyModify => Some(RelationLabel::Modify),
            AgentAction::IdentifySummary => Some(RelationLabel::Summary),
            AgentAction::NewTopic => Some(RelationLabel::NewTopic),
            AgentAction::Done => None,
        }
    }

    pub fn slug(self) -> &'static str {
        match self.label() {
            Some(l) => l.as_str(),
            None => "done",
        }
    }
}

impl fmt::Display for AgentAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentAction {
    type Err = GraphError;

    /// Accepts the canonical names case-insensitively, with `-`, `_` or
    /// spaces as separators.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = |x: &str| {
            x.chars()
                .filter(|c| c.is_ascii_alphanumeric())
                .collect::<String>()
                .to_ascii_lowercase()
        };
        let key = norm(s);
        AgentAction::ALL
            .into_iter()
            .find(|a| norm(a.as_str()) == key)
            .ok_or_else(|| GraphError::UnknownAction(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationEdge {
    pub src: TurnId,
    pub label: RelationLabel,
    pub dst: TurnId,
}

impl RelationEdge {
    pub fn new(src: TurnId, label: RelationLabel, dst: TurnId) -> Result<Self, GraphError> {
        if dst == 0 || src <= dst {
            return Err(GraphError::BackwardEdge { src, dst });
        }
        Ok(Self { src, label, dst })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphDocument", into = "GraphDocument")]
pub struct RelationGraph {
    nodes: BTreeSet<TurnId>,
    edges: BTreeSet<RelationEdge>,
}

/// Wire form: `{"nodes":[int...], "edges":[{"src","label","dst"}...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphDocument {
    nodes: Vec<TurnId>,
    edges: Vec<RelationEdge>,
}

impl TryFrom<GraphDocument> for RelationGraph {
    type Error = GraphError;

    fn try_from(doc: GraphDocument) -> Result<Self, Self::Error> {
        let mut g = RelationGraph::new();
        for n in doc.nodes {
            g.add_node(n)?;
        }
        for e in doc.edges {
            g.insert_edge(e.src, e.label, e.dst)?;
        }
        Ok(g)
    }
}

impl From<RelationGraph> for GraphDocument {
    fn from(g: RelationGraph) -> Self {
        GraphDocument {
            nodes: g.nodes.into_iter().collect(),
            edges: g.edges.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(ExportFormat::Dot),
            "json" => Ok(ExportFormat::Json),
            other => Err(format!("unknown graph format `{other}` (expected dot or json)")),
        }
    }
}

impl RelationGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, turn: TurnId) -> Result<(), GraphError> {
        if turn == 0 {
            return Err(GraphError::InvalidTurnIndex(turn));
        }
        self.nodes.insert(turn);
        Ok(())
    }

    /// Inserts `(src, label, dst)`. Both endpoints must already be nodes.
    /// Returns `false` when the triple was already present.
    pub fn insert_edge(
        &mut self,
        src: TurnId,
        label: RelationLabel,
        dst: TurnId,
    ) -> Result<bool, GraphError> {
        let edge = RelationEdge::new(src, label, dst)?;
        for n in [src, dst] {
            if !self.nodes.contains(&n) {
                return Err(GraphError::UnknownNode(n));
            }
        }
        Ok(self.edges.insert(edge))
    }

    pub fn nodes(&self) -> &BTreeSet<TurnId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<RelationEdge> {
        &self.edges
    }

    pub fn contains_node(&self, turn: TurnId) -> bool {
        self.nodes.contains(&turn)
    }

    pub fn edges_from(&self, src: TurnId) -> impl Iterator<Item = &RelationEdge> {
        self.edges.iter().filter(move |e| e.src == src)
    }

    /// Copy of the graph with every edge of `label` removed.
    pub fn without_label(&self, label: RelationLabel) -> RelationGraph {
        RelationGraph {
            nodes: self.nodes.clone(),
            edges: self.edges.iter().filter(|e| e.label != label).copied().collect(),
        }
    }

    pub fn export(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::Json => self.to_json(),
            ExportFormat::Dot => self.to_dot(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph relations {\n  rankdir=RL;\n");
        for n in &self.nodes {
            out.push_str(&format!("  {n} [label=\"Turn {n}\"];\n"));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "  {} -> {} [label=\"{}\"];\n",
                e.src,
                e.dst,
                e.label.display_name()
            ));
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn actions_and_labels_are_bijective() {
        for label in RelationLabel::ALL {
            assert_eq!(label.action().label(), Some(label));
        }
        let non_done: Vec<_> = AgentAction::ALL
            .into_iter()
            .filter(|a| *a != AgentAction::Done)
            .collect();
        assert_eq!(non_done.len(), RelationLabel::ALL.len());
        assert_eq!(AgentAction::Done.label(), None);
    }

    #[test]
    fn action_parsing_is_tolerant() {
        assert_eq!(
            "identify global constraint".parse::<AgentAction>().unwrap(),
            AgentAction::IdentifyGlobalConstraint
        );
        assert_eq!("DONE".parse::<AgentAction>().unwrap(), AgentAction::Done);
        assert_eq!("New-Topic".parse::<AgentAction>().unwrap(), AgentAction::NewTopic);
        assert!("Identify_Everything".parse::<AgentAction>().is_err());
    }

    #[test]
    fn edges_point_backwards_only() {
        assert!(RelationEdge::new(3, RelationLabel::Modify, 3).is_err());
        assert!(RelationEdge::new(3, RelationLabel::Modify, 4).is_err());
        assert!(RelationEdge::new(3, RelationLabel::Modify, 0).is_err());
        assert!(RelationEdge::new(4, RelationLabel::Modify, 3).is_ok());
    }

    #[test]
    fn duplicate_edges_are_noops() {
        let mut g = RelationGraph::new();
        g.add_node(1).unwrap();
        g.add_node(10).unwrap();
        assert!(g.insert_edge(10, RelationLabel::GlobalConstraint, 1).unwrap());
        assert!(!g.insert_edge(10, RelationLabel::GlobalConstraint, 1).unwrap());
        assert_eq!(g.edges().len(), 1);
        assert!(matches!(
            g.insert_edge(10, RelationLabel::Modify, 5),
            Err(GraphError::UnknownNode(5))
        ));
    }

    #[test]
    fn empty_graph_json() {
        let json = RelationGraph::new().export(ExportFormat::Json);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["edges"].as_array().unwrap().len(), 0);
        assert_eq!(v["nodes"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn dot_has_one_labeled_line_per_edge() {
        let mut g = RelationGraph::new();
        g.add_node(1).unwrap();
        g.add_node(10).unwrap();
        g.insert_edge(10, RelationLabel::GlobalConstraint, 1).unwrap();
        let dot = g.export(ExportFormat::Dot);
        let edge_lines: Vec<_> = dot.lines().filter(|l| l.contains("->")).collect();
        assert_eq!(edge_lines, vec!["  10 -> 1 [label=\"GlobalConstraint\"];"]);
    }

    #[test]
    fn import_rejects_invalid_documents() {
        let forward = r#"{"nodes":[1,2],"edges":[{"src":1,"label":"modify","dst":2}]}"#;
        assert!(RelationGraph::from_json(forward).is_err());
        let dangling = r#"{"nodes":[2],"edges":[{"src":2,"label":"modify","dst":1}]}"#;
        assert!(RelationGraph::from_json(dangling).is_err());
        let bad_label = r#"{"nodes":[1,2],"edges":[{"src":2,"label":"rephrase","dst":1}]}"#;
        assert!(RelationGraph::from_json(bad_label).is_err());
    }

    fn arb_graph() -> impl Strategy<Value = RelationGraph> {
        (1u32..40, prop::collection::vec((any::<u32>(), 0usize..5, any::<u32>()), 0..60)).prop_map(
            |(n, raw)| {
                let mut g = RelationGraph::new();
                for i in 1..=n {
                    g.add_node(i).unwrap();
                }
                for (a, l, b) in raw {
                    let src = a % n + 1;
                    if src < 2 {
                        continue;
                    }
                    let dst = b % (src - 1) + 1;
                    g.insert_edge(src, RelationLabel::ALL[l], dst).unwrap();
                }
                g
            },
        )
    }

    proptest! {
        #[test]
        fn json_round_trip(g in arb_graph()) {
            let back = RelationGraph::from_json(&g.to_json()).unwrap();
            prop_assert_eq!(back, g);
        }

        #[test]
        fn every_edge_points_backwards(g in arb_graph()) {
            for e in g.edges() {
                prop_assert!(e.src > e.dst);
                prop_assert!(g.contains_node(e.src) && g.contains_node(e.dst));
            }
        }
    }
}
