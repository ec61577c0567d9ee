use std::collections::BTreeSet;

use graphif::dataset::{load_dataset, save_dataset, synthesize, Dataset, DatasetError, GraphTemplate};
use proptest::prelude::*;

fn corpus(template: &GraphTemplate, seeds: std::ops::Range<u64>) -> Dataset {
    Dataset { samples: seeds.map(|s| synthesize(template, s).unwrap()).collect() }
}

#[test]
fn corpus_sizes() {
    let mteval = corpus(&GraphTemplate::mteval_star(), 0..10);
    assert_eq!(mteval.samples.len(), 10);
    assert_eq!(mteval.total_turns(), 230);
    let structflow = corpus(&GraphTemplate::structflow_star(), 0..32);
    assert_eq!(structflow.total_turns(), 768);
    mteval.validate().unwrap();
    structflow.validate().unwrap();
}

#[test]
fn ground_truth_is_the_template() {
    for template in [GraphTemplate::mteval_star(), GraphTemplate::structflow_star(), GraphTemplate::single_chain(24)] {
        for seed in 0..5 {
            let sample = synthesize(&template, seed).unwrap();
            let edges: BTreeSet<_> =
                sample.ground_truth_graph.edges().iter().map(|e| (e.src, e.label, e.dst)).collect();
            assert_eq!(edges, template.edges(), "{} seed {seed}", template.name);
            assert_eq!(sample.topic_boundaries, template.topic_starts);
            for e in sample.ground_truth_graph.edges() {
                assert!(e.src > e.dst && e.dst >= 1);
            }
        }
    }
}

#[test]
fn persistent_rules_have_origins() {
    let sample = synthesize(&GraphTemplate::mteval_star(), 3).unwrap();
    let origins: BTreeSet<_> = GraphTemplate::mteval_star().global_constraints.iter().map(|(t, _)| *t).collect();
    assert_eq!(sample.ground_truth_global_origins(), origins);
}

fn mutate(sample_json: &str, f: impl FnOnce(&mut serde_json::Value)) -> String {
    let mut v: serde_json::Value = serde_json::from_str(sample_json).unwrap();
    f(&mut v);
    v.to_string()
}

#[test]
fn backward_edge_is_a_schema_error() {
    let text = corpus(&GraphTemplate::single_chain(4), 0..1).to_json();
    let bad = mutate(&text, |v| {
        v["samples"][0]["ground_truth_graph"]["edges"]
            .as_array_mut()
            .unwrap()
            .push(serde_json::json!({"src": 2, "label": "context_anchored", "dst": 3}));
    });
    match Dataset::from_json(&bad) {
        Err(DatasetError::Schema { location, .. }) => assert!(location.starts_with("samples[0]"), "{location}"),
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn bad_indices_and_boundaries_are_located() {
    let text = corpus(&GraphTemplate::single_chain(4), 0..1).to_json();
    type Edit = Box<dyn FnOnce(&mut serde_json::Value)>;
    let cases: Vec<(Edit, &str)> = vec![
        (Box::new(|v| v["samples"][0]["turns"][1]["index"] = 5.into()), "samples[0].turns[1].index"),
        (Box::new(|v| v["samples"][0]["topic_boundaries"] = serde_json::json!([2])), "samples[0].topic_boundaries"),
        (Box::new(|v| v["samples"][0]["turns"][2]["instruction"] = "  ".into()), "samples[0].turns[2].instruction"),
    ];
    for (f, want) in cases {
        match Dataset::from_json(&mutate(&text, f)) {
            Err(DatasetError::Schema { location, .. }) => assert_eq!(location, want),
            other => panic!("expected schema error at {want}, got {other:?}"),
        }
    }
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(load_dataset("/nonexistent/graphif.json".as_ref()), Err(DatasetError::Io { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn save_load_round_trip(seed in 0u64..10_000, which in 0usize..3, n in 3u32..30) {
        let template = match which {
            0 => GraphTemplate::mteval_star(),
            1 => GraphTemplate::structflow_star(),
            _ => GraphTemplate::single_chain(n),
        };
        let sample = synthesize(&template, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        save_dataset(&path, std::slice::from_ref(&sample)).unwrap();
        let back = load_dataset(&path).unwrap();
        prop_assert_eq!(back, vec![sample]);
    }

    #[test]
    fn synthesis_is_deterministic(seed in any::<u64>()) {
        let t = GraphTemplate::structflow_star();
        prop_assert_eq!(synthesize(&t, seed).unwrap(), synthesize(&t, seed).unwrap());
    }
}


#[test]
fn synthesized_datasets_match_published_schema() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/dataset.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    for template in [GraphTemplate::mteval_star(), GraphTemplate::structflow_star(), GraphTemplate::single_chain(6)] {
        let text = corpus(&template, 0..2).to_json();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{}: {errors:?}", template.name);
    }
    let bad = serde_json::json!({"samples": [{"sample_id": "x", "turns": [], "ground_truth_graph": {"nodes": [], "edges": []}, "topic_boundaries": [2]}]});
    assert!(!validator.is_valid(&bad));
}
