//! Template-driven synthetic dialogues with exact ground-truth graphs.
//!
//! Text is generated from word lists under a seeded RNG. Every turn carries
//! a unique entity code such as `KESTREL-4821`; the intra-turn constraint
//! asks for the turn's own code, and context-anchored or modify relations
//! ask for the code of the turn they point to. Global constraints are
//! checked with `ends_with` on a sentinel sentence or `forbids_substring`
//! on commas. Summaries are checked with `contains_turn_ids_in_order`.
//!
//! Reference responses satisfy every constraint. The anchor/modify chains
//! of the built-in templates are invented; the global-constraint, summary
//! and topic structure follow the two benchmark descriptions.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DialogueSample, SampleTurn};
use crate::dialogue::TurnId;
use crate::eval::{ConstraintSpec, Rule, Scope};
use crate::graph::{RelationGraph, RelationLabel};

pub const TEMPLATE_NAMES: [&str; 3] = ["mteval_star", "structflow_star", "single_chain"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("unknown template `{0}` (expected one of mteval_star, structflow_star, single_chain)")]
    Unknown(String),
    #[error("template `{template}`: {reason}")]
    Invalid { template: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcKind {
    /// Every later response ends with a seeded sentinel sentence.
    EndsWithSentinel,
    /// No later response contains a comma.
    NoCommas,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarySpec {
    pub turn: TurnId,
    pub from: TurnId,
    pub to: TurnId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLink {
    pub turn: TurnId,
    pub label: RelationLabel,
    pub targets: Vec<TurnId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphTemplate {
    pub name: String,
    pub num_turns: TurnId,
    pub global_constraints: Vec<(TurnId, GcKind)>,
    pub summaries: Vec<SummarySpec>,
    pub topic_starts: Vec<TurnId>,
    pub chain: Vec<ChainLink>,
}

fn link(turn: TurnId, label: RelationLabel, targets: &[TurnId]) -> ChainLink {
    ChainLink { turn, label, targets: targets.to_vec() }
}

impl GraphTemplate {
    pub fn by_name(name: &str) -> Result<Self, TemplateError> {
        match name {
            "mteval_star" => Ok(Self::mteval_star()),
            "structflow_star" => Ok(Self::structflow_star()),
            "single_chain" => Ok(Self::single_chain(24)),
            other => Err(TemplateError::Unknown(other.to_string())),
        }
    }

    /// 23 turns: a standing rule at turn 1, story A from turn 2, story B
    /// from turn 19.
    pub fn mteval_star() -> Self {
        use RelationLabel::{ContextAnchored as Ca, Modify as M};
        let mut chain = vec![link(3, Ca, &[2]), link(4, M, &[3]), link(5, Ca, &[2, 3]), link(6, Ca, &[5])];
        for k in [7, 11, 15] {
            chain.push(link(k, Ca, &[2]));
            chain.push(link(k + 1, M, &[k]));
            chain.push(link(k + 2, Ca, &[2, k]));
            chain.push(link(k + 3, Ca, &[k + 2]));
        }
        chain.push(link(20, Ca, &[19]));
        chain.push(link(21, M, &[20]));
        chain.push(link(22, Ca, &[19, 21]));
        chain.push(link(23, M, &[22]));
        Self {
            name: "mteval_star".into(),
            num_turns: 23,
            global_constraints: vec![(1, GcKind::EndsWithSentinel)],
            summaries: Vec::new(),
            topic_starts: vec![1, 19],
            chain,
        }
    }

    /// 24 turns: standing rules at 5 and 17, summaries at 13 and 24, a new
    /// topic at 14.
    pub fn structflow_star() -> Self {
        use RelationLabel::{ContextAnchored as Ca, Modify as M};
        Self {
            name: "structflow_star".into(),
            num_turns: 24,
            global_constraints: vec![(5, GcKind::EndsWithSentinel), (17, GcKind::NoCommas)],
            summaries: vec![SummarySpec { turn: 13, from: 1, to: 12 }, SummarySpec { turn: 24, from: 14, to: 23 }],
            topic_starts: vec![1, 14],
            chain: vec![
                link(2, Ca, &[1]),
                link(3, M, &[2]),
                link(4, Ca, &[1, 3]),
                link(6, Ca, &[4]),
                link(7, M, &[6]),
                link(8, Ca, &[1]),
                link(9, M, &[8]),
                link(10, Ca, &[1, 9]),
                link(11, Ca, &[10]),
                link(12, M, &[11]),
                link(15, Ca, &[14]),
                link(16, M, &[15]),
                link(18, Ca, &[14]),
                link(19, M, &[18]),
                link(20, Ca, &[14, 19]),
                link(21, Ca, &[20]),
                link(22, M, &[21]),
                link(23, Ca, &[14]),
            ],
        }
    }

    /// Every turn after the first is context-anchored to its predecessor.
    pub fn single_chain(num_turns: TurnId) -> Self {
        Self {
            name: "single_chain".into(),
            num_turns,
            global_constraints: Vec::new(),
            summaries: Vec::new(),
            topic_starts: vec![1],
            chain: (2..=num_turns).map(|t| link(t, RelationLabel::ContextAnchored, &[t - 1])).collect(),
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> TemplateError {
        TemplateError::Invalid { template: self.name.clone(), reason: reason.into() }
    }

    /// Topic segment start for `turn`.
    fn topic_start_of(&self, turn: TurnId) -> TurnId {
        self.topic_starts.iter().copied().filter(|s| *s <= turn).max().unwrap_or(1)
    }

    fn gc_active_at(&self, turn: TurnId) -> Vec<(TurnId, GcKind)> {
        self.global_constraints.iter().copied().filter(|(g, _)| *g < turn).collect()
    }

    /// Targets must be earlier turns that an extractor can still see:
    /// inside the current topic segment, or the origin of an active rule.
    pub fn validate(&self) -> Result<(), TemplateError> {
        let n = self.num_turns;
        if n == 0 {
            return Err(self.invalid("num_turns must be >= 1"));
        }
        if self.topic_starts.first() != Some(&1) || self.topic_starts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(self.invalid("topic_starts must begin with 1 and increase"));
        }
        let in_range = |t: TurnId| (1..=n).contains(&t);
        if let Some(t) = self.topic_starts.iter().find(|t| !in_range(**t)) {
            return Err(self.invalid(format!("topic start {t} outside 1..={n}")));
        }
        let mut kinds = BTreeSet::new();
        let mut gc_turns = BTreeSet::new();
        for (g, kind) in &self.global_constraints {
            if !in_range(*g) || !gc_turns.insert(*g) {
                return Err(self.invalid(format!("global constraint turn {g} invalid or repeated")));
            }
            if !kinds.insert(format!("{kind:?}")) {
                return Err(self.invalid(format!("two global constraints of kind {kind:?} would supersede each other")));
            }
        }
        let visible = |turn: TurnId, k: TurnId| {
            k >= 1 && k < turn && (k >= self.topic_start_of(turn) || gc_turns.contains(&k))
        };
        let mut seen = BTreeSet::new();
        for l in &self.chain {
            if !matches!(l.label, RelationLabel::ContextAnchored | RelationLabel::Modify) {
                return Err(self.invalid(format!("turn {}: chain links must be context_anchored or modify", l.turn)));
            }
            if !in_range(l.turn) || l.targets.is_empty() {
                return Err(self.invalid(format!("chain link at turn {} is malformed", l.turn)));
            }
            if gc_turns.contains(&l.turn) || !seen.insert(l.turn) {
                return Err(self.invalid(format!("turn {} has more than one role", l.turn)));
            }
            if let Some(k) = l.targets.iter().find(|k| !visible(l.turn, **k)) {
                return Err(self.invalid(format!("turn {} targets turn {k}, which is not visible from it", l.turn)));
            }
        }
        for s in &self.summaries {
            if !in_range(s.turn) || s.from > s.to || s.from == 0 || !(s.from..=s.to).all(|k| visible(s.turn, k)) {
                return Err(self.invalid(format!("summary at turn {} has an invalid range", s.turn)));
            }
            if gc_turns.contains(&s.turn) || !seen.insert(s.turn) {
                return Err(self.invalid(format!("turn {} has more than one role", s.turn)));
            }
        }
        Ok(())
    }

    /// Ground-truth edges, including topic edges from each later topic start
    /// back to every earlier turn.
    pub fn edges(&self) -> BTreeSet<(TurnId, RelationLabel, TurnId)> {
        let mut out = BTreeSet::new();
        for (g, _) in &self.global_constraints {
            for t in g + 1..=self.num_turns {
                out.insert((t, RelationLabel::GlobalConstraint, *g));
            }
        }
        for l in &self.chain {
            for k in &l.targets {
                out.insert((l.turn, l.label, *k));
            }
        }
        for s in &self.summaries {
            for k in s.from..=s.to {
                out.insert((s.turn, RelationLabel::Summary, k));
            }
        }
        for &s in self.topic_starts.iter().skip(1) {
            for k in 1..s {
                out.insert((s, RelationLabel::NewTopic, k));
            }
        }
        out
    }
}

const CODE_WORDS: &[&str] = &[
    "KESTREL", "MARLIN", "OSPREY", "BASALT", "CEDAR", "QUARTZ", "HERON", "JUNIPER", "COBALT", "FALCON",
    "GRANITE", "LARCH", "MAGPIE", "NICKEL", "ORCHID", "PLOVER", "RAVEN", "SORREL", "TUNDRA", "WILLOW",
    "ZEPHYR", "BRAMBLE", "CONDOR", "DAHLIA", "EMBER", "FJORD", "GLACIER", "HAZEL", "IBIS", "JASPER",
];

const CHARACTERS: &[&str] = &[
    "a lighthouse keeper", "a retired astronaut", "a young baker", "a travelling clockmaker",
    "a stubborn goat farmer", "a shy librarian", "a river ferry captain", "an amateur beekeeper",
    "a night-shift nurse", "a street violinist", "a curious fox", "a mapmaker's apprentice",
];

const SETTINGS: &[&str] = &[
    "a fishing village", "an abandoned observatory", "a floating market", "a desert railway station",
    "a mountain monastery", "a flooded city", "an island orchard", "a snowed-in inn",
];

const ELEMENTS: &[&str] = &[
    "a missing key", "an unsigned letter", "a broken compass", "a locked greenhouse", "a stray kite",
    "a forgotten recipe", "a flickering lantern", "a borrowed umbrella", "a cracked teacup",
    "a folded map", "a silver button", "a humming radio", "a torn photograph", "a wooden whistle",
];

const SENTINELS: &[&str] = &[
    "Is there anything else I can help you with?",
    "Let me know if you would like another version.",
    "I hope this helps with your project.",
    "Feel free to ask for further changes.",
];

const CA_VERBS: &[&str] = &["Continue", "Describe what happens next in", "Add a new scene to", "Explain the consequences of"];
const MODIFY_VERBS: &[&str] = &[
    "Rewrite it in the style of a formal scientific report",
    "Shorten it to a few plain sentences",
    "Retell it from a different character's point of view",
    "Rewrite it as a diary entry",
];

struct TurnPlan {
    code: String,
    element: String,
}

/// Builds one sample from a template. Deterministic in `seed`.
pub fn synthesize(template: &GraphTemplate, seed: u64) -> Result<DialogueSample, TemplateError> {
    template.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = template.num_turns;

    let mut words: Vec<&str> = CODE_WORDS.to_vec();
    words.shuffle(&mut rng);
    let mut used = BTreeSet::new();
    let plans: BTreeMap<TurnId, TurnPlan> = (1..=n)
        .map(|t| {
            let code = loop {
                let word = words[(t as usize - 1) % words.len()];
                let c = format!("{word}-{}", rng.gen_range(100..10_000));
                if used.insert(c.clone()) {
                    break c;
                }
            };
            let element = ELEMENTS.choose(&mut rng).expect("non-empty").to_string();
            (t, TurnPlan { code, element })
        })
        .collect();
    let sentinel = SENTINELS.choose(&mut rng).expect("non-empty").to_string();
    let stories: BTreeMap<TurnId, (String, String)> = template
        .topic_starts
        .iter()
        .map(|&s| {
            let who = CHARACTERS.choose(&mut rng).expect("non-empty").to_string();
            let place = SETTINGS.choose(&mut rng).expect("non-empty").to_string();
            (s, (who, place))
        })
        .collect();

    let gc_kind: BTreeMap<TurnId, GcKind> = template.global_constraints.iter().copied().collect();
    let chain: BTreeMap<TurnId, &ChainLink> = template.chain.iter().map(|l| (l.turn, l)).collect();
    let summaries: BTreeMap<TurnId, &SummarySpec> = template.summaries.iter().map(|s| (s.turn, s)).collect();

    let mut turns = Vec::with_capacity(n as usize);
    for t in 1..=n {
        let plan = &plans[&t];
        let code_clause = format!("Mention the reference code {} in your answer.", plan.code);
        let mut constraints = vec![ConstraintSpec::rule(
            format!("t{t}-own-code"),
            Scope::IntraTurn,
            None,
            Rule::ContainsAllKeywords { keywords: vec![plan.code.clone()] },
        )];
        let mut extras: Vec<String> = Vec::new();

        let body = if let Some(kind) = gc_kind.get(&t) {
            let rule = match kind {
                GcKind::EndsWithSentinel => {
                    format!("From now on, end every response with the sentence \"{sentinel}\"")
                }
                GcKind::NoCommas => "From now on, do not use any commas in your responses.".to_string(),
            };
            let rule = if rule.ends_with('.') { rule } else { format!("{rule}.") };
            format!("{rule} To confirm, introduce {} that will matter later. {code_clause}", plan.element)
        } else if let Some(s) = summaries.get(&t) {
            let ids: Vec<TurnId> = (s.from..=s.to).collect();
            constraints.push(ConstraintSpec::rule(
                format!("t{t}-summary"),
                Scope::InterTurn,
                Some(RelationLabel::Summary),
                Rule::ContainsTurnIdsInOrder { turn_ids: ids.clone() },
            ));
            extras.push(ids.iter().map(|k| format!("Turn {k}")).collect::<Vec<_>>().join(" / "));
            format!(
                "Summarize what we discussed from turn {} to turn {}, going through the turns in order. {code_clause}",
                s.from, s.to
            )
        } else if let Some(l) = chain.get(&t) {
            for k in &l.targets {
                let tag = if l.label == RelationLabel::Modify { "modify" } else { "anchor" };
                constraints.push(ConstraintSpec::rule(
                    format!("t{t}-{tag}-{k}"),
                    Scope::InterTurn,
                    Some(l.label),
                    Rule::ContainsAllKeywords { keywords: vec![plans[k].code.clone()] },
                ));
                extras.push(plans[k].code.clone());
            }
            let refs: Vec<String> = l.targets.iter().map(|k| format!("the part with {}", plans[k].element)).collect();
            let refs = refs.join(" and ");
            if l.label == RelationLabel::Modify {
                let verb = MODIFY_VERBS.choose(&mut rng).expect("non-empty");
                format!("Take {refs}. {verb} and work in {}. {code_clause}", plan.element)
            } else if l.targets.len() > 1 {
                format!("Connect {refs} through {}. {code_clause}", plan.element)
            } else {
                let verb = CA_VERBS.choose(&mut rng).expect("non-empty");
                format!("{verb} {refs} and bring in {}. {code_clause}", plan.element)
            }
        } else {
            let start = template.topic_start_of(t);
            let (who, place) = &stories[&start];
            if template.topic_starts.contains(&t) && t > 1 {
                format!(
                    "Let's switch to something different. Write a short story about {who} in {place} involving {}. {code_clause}",
                    plan.element
                )
            } else {
                format!("Write a short story about {who} in {place} involving {}. {code_clause}", plan.element)
            }
        };

        let active = template.gc_active_at(t);
        for (g, kind) in &active {
            let rule = match kind {
                GcKind::EndsWithSentinel => Rule::EndsWith { text: sentinel.clone() },
                GcKind::NoCommas => Rule::ForbidsSubstring { text: ",".into() },
            };
            constraints.push(ConstraintSpec::rule(
                format!("t{t}-rule-{g}"),
                Scope::InterTurn,
                Some(RelationLabel::GlobalConstraint),
                rule,
            ));
        }

        let mut reference = format!("Here is part {t} about {} with code {}", plan.element, plan.code);
        for e in &extras {
            reference.push_str(" / ");
            reference.push_str(e);
        }
        reference.push('.');
        if active.iter().any(|(_, k)| *k == GcKind::EndsWithSentinel) || gc_kind.get(&t) == Some(&GcKind::EndsWithSentinel) {
            reference.push(' ');
            reference.push_str(&sentinel);
        }

        turns.push(SampleTurn {
            index: t,
            instruction: body,
            reference_response: Some(reference.replace(',', "")),
            constraints,
        });
    }

    let mut graph = RelationGraph::new();
    for t in 1..=n {
        graph.add_node(t).expect("valid index");
    }
    for (src, label, dst) in template.edges() {
        graph.insert_edge(src, label, dst).expect("template edges are validated");
    }
    Ok(DialogueSample {
        sample_id: format!("{}-{seed}", template.name),
        turns,
        ground_truth_graph: graph,
        topic_boundaries: template.topic_starts.clone(),
    })
}

/// The turn's reference-code token pattern.
pub const CODE_PATTERN: &str = r"\b[A-Z]{3,}-\d{3,}\b";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Checker;

    #[test]
    fn builtin_templates_validate() {
        for name in TEMPLATE_NAMES {
            GraphTemplate::by_name(name).unwrap().validate().unwrap();
        }
        assert!(GraphTemplate::by_name("nope").is_err());
    }

    #[test]
    fn invisible_target_rejected() {
        let mut t = GraphTemplate::mteval_star();
        t.chain.push(link(23, RelationLabel::ContextAnchored, &[3]));
        t.chain.retain(|l| l.turn != 23 || l.targets == [3]);
        assert!(t.validate().is_err());
    }

    #[test]
    fn mteval_shape() {
        let s = synthesize(&GraphTemplate::mteval_star(), 3).unwrap();
        assert_eq!(s.turns.len(), 23);
        assert_eq!(s.topic_boundaries, vec![1, 19]);
        let gc: BTreeSet<_> = s
            .ground_truth_graph
            .edges()
            .iter()
            .filter(|e| e.label == RelationLabel::GlobalConstraint)
            .map(|e| (e.src, e.dst))
            .collect();
        assert_eq!(gc, (2..=23).map(|t| (t, 1)).collect());
    }

    #[test]
    fn structflow_shape() {
        let s = synthesize(&GraphTemplate::structflow_star(), 3).unwrap();
        assert_eq!(s.turns.len(), 24);
        assert_eq!(s.ground_truth_global_origins(), BTreeSet::from([5, 17]));
        let summary: BTreeSet<_> = s
            .ground_truth_graph
            .edges()
            .iter()
            .filter(|e| e.label == RelationLabel::Summary)
            .map(|e| (e.src, e.dst))
            .collect();
        let expected: BTreeSet<_> = (1..=12).map(|k| (13, k)).chain((14..=23).map(|k| (24, k))).collect();
        assert_eq!(summary, expected);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let t = GraphTemplate::structflow_star();
        assert_eq!(synthesize(&t, 9).unwrap(), synthesize(&t, 9).unwrap());
        assert_ne!(synthesize(&t, 9).unwrap().turns, synthesize(&t, 10).unwrap().turns);
    }

    #[test]
    fn references_satisfy_all_constraints() {
        for name in TEMPLATE_NAMES {
            for seed in 0..5 {
                let s = synthesize(&GraphTemplate::by_name(name).unwrap(), seed).unwrap();
                for turn in &s.turns {
                    let resp = turn.reference_response.as_deref().unwrap();
                    for c in &turn.constraints {
                        let Checker::Rule(rule) = &c.checker else { panic!("judge constraint") };
                        assert!(rule.check(resp), "{name}/{seed} turn {} {}: {resp}", turn.index, c.id);
                    }
                }
            }
        }
    }

    #[test]
    fn instructions_only_carry_their_own_code() {
        let re = regex::Regex::new(CODE_PATTERN).unwrap();
        let s = synthesize(&GraphTemplate::mteval_star(), 1).unwrap();
        for t in &s.turns {
            let codes: Vec<_> = re.find_iter(&t.instruction).map(|m| m.as_str()).collect();
            assert_eq!(codes.len(), 1, "{}", t.instruction);
        }
    }
}
