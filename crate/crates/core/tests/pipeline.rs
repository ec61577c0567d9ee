use std::collections::BTreeSet;
use std::sync::Arc;

use graphif::agent::Termination;
use graphif::backend::{CallSite, ChatBackend, LlmClient, SamplingConfig, ScriptedBackend};
use graphif::dataset::{synthesize, DialogueSample, GraphTemplate};
use graphif::pipeline::{relation_edges, Backends, Pipeline, PipelineConfig, PipelineMode, Session};
use graphif::testkit::{
    cooperative_script, faulty_generator_script, one_shot_script, ConstraintApplyingRewriter,
};

fn client(b: impl ChatBackend + 'static) -> LlmClient {
    LlmClient::new(Arc::new(b), SamplingConfig::default())
}

fn backends(sample: &DialogueSample) -> Backends {
    let mut agent = cooperative_script(sample);
    agent.extend(one_shot_script(sample, false));
    Backends {
        generator: client(ScriptedBackend::new(faulty_generator_script(sample)).unwrap()),
        agent: client(ScriptedBackend::new(agent).unwrap()),
        rewriter: client(ConstraintApplyingRewriter),
    }
}

fn truth(sample: &DialogueSample) -> BTreeSet<(u32, graphif::graph::RelationLabel, u32)> {
    relation_edges(&sample.ground_truth_graph).into_iter().collect()
}

#[test]
fn mteval_cooperative_reconstructs_graph() {
    let sample = synthesize(&GraphTemplate::mteval_star(), 11).unwrap();
    let run = Pipeline::new(PipelineMode::Graphif, PipelineConfig::default()).run_dialogue(&sample, &backends(&sample));
    assert!(run.error.is_none(), "{:?}", run.error);
    assert_eq!(run.session.results.len(), 23);
    let got: BTreeSet<_> = relation_edges(&run.session.state.graph).into_iter().collect();
    assert_eq!(got, truth(&sample));
    assert_eq!(run.session.state.topics.topic_starts(), vec![1, 19]);
    for r in &run.session.results[1..] {
        assert_eq!(r.extraction.terminated_by, Termination::Done, "turn {}", r.turn);
    }
}

#[test]
fn structflow_cooperative_reconstructs_graph() {
    let sample = synthesize(&GraphTemplate::structflow_star(), 4).unwrap();
    let run = Pipeline::new(PipelineMode::Graphif, PipelineConfig::default()).run_dialogue(&sample, &backends(&sample));
    assert!(run.error.is_none(), "{:?}", run.error);
    let got: BTreeSet<_> = relation_edges(&run.session.state.graph).into_iter().collect();
    assert_eq!(got, truth(&sample));
    assert_eq!(run.session.state.topics.topic_starts(), vec![1, 14]);
}

#[test]
fn one_shot_matches_iterative_under_cooperative_script() {
    let sample = synthesize(&GraphTemplate::structflow_star(), 2).unwrap();
    let b = backends(&sample);
    let a = Pipeline::new(PipelineMode::Graphif, PipelineConfig::default()).run_dialogue(&sample, &b);
    let o = Pipeline::new(PipelineMode::NoAgent, PipelineConfig::default()).run_dialogue(&sample, &b);
    assert_eq!(a.session.state.graph, o.session.state.graph);
    for r in &o.session.results[1..] {
        assert_eq!(r.calls_used.get(&CallSite::ActionExecution), Some(&1));
        assert_eq!(r.calls_used.get(&CallSite::ActionIdentification), None);
    }
}

#[test]
fn llm_only_is_one_call_per_turn_and_matches_initial() {
    let sample = synthesize(&GraphTemplate::single_chain(2), 0).unwrap();
    let b = backends(&sample);
    let l = Pipeline::new(PipelineMode::LlmOnly, PipelineConfig::default()).run_dialogue(&sample, &b);
    let g = Pipeline::new(PipelineMode::Graphif, PipelineConfig::default()).run_dialogue(&sample, &b);
    let total: u64 = l.session.results.iter().map(|r| r.total_calls()).sum();
    assert_eq!(total, 2);
    for (x, y) in l.session.results.iter().zip(&g.session.results) {
        assert_eq!(x.initial_response, x.final_response);
        assert!(x.extraction.is_empty());
        assert_eq!(x.initial_response, y.initial_response);
    }
}

#[test]
fn history_holds_final_responses() {
    let sample = synthesize(&GraphTemplate::single_chain(4), 5).unwrap();
    let run = Pipeline::new(PipelineMode::Graphif, PipelineConfig::default()).run_dialogue(&sample, &backends(&sample));
    for (turn, r) in run.session.history.turns().iter().zip(&run.session.results) {
        assert_eq!(turn.response.as_deref(), Some(r.final_response.as_str()));
    }
    assert_ne!(run.session.results[2].initial_response, run.session.results[2].final_response);
}

#[test]
fn checkpoint_resume_equals_uninterrupted_run() {
    let sample = synthesize(&GraphTemplate::mteval_star(), 8).unwrap();
    let b = backends(&sample);
    let p = Pipeline::new(PipelineMode::Graphif, PipelineConfig::default());
    let full = p.run_dialogue(&sample, &b);

    let mut prefix = sample.clone();
    prefix.turns.truncate(9);
    let part = p.run_dialogue(&prefix, &b);
    let restored = Session::from_checkpoint(&part.session.to_checkpoint()).unwrap();
    let resumed = p.resume_dialogue(restored, &sample, &b.fork(), |_, _| {});
    assert!(resumed.error.is_none());
    assert_eq!(resumed.session, full.session);
}
