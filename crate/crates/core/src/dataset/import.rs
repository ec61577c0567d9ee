//! Adapter for externally obtained dialogues in a generic chat JSONL form:
//! one object per line, `{"id": ..., "messages": [{"role", "content"}, ...]}`.
//! User messages become turns; assistant messages become reference
//! responses. Constraints and graphs are left empty for the caller to fill.

use serde::Deserialize;

use super::{DatasetError, DialogueSample, SampleTurn};
use crate::graph::RelationGraph;

#[derive(Debug, thiserror::Error)]
pub enum ImportError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Deserialize)]
struct ChatRecord {
    id: String,
    messages: Vec<ChatLine>,
}

#[derive(Deserialize)]
struct ChatLine {
    role: String,
    content: String,
}

pub fn import_chat_jsonl(text: &str) -> Result<Vec<DialogueSample>, ImportError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| ImportError::Line { line: i + 1, reason };
        let rec: ChatRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let mut turns: Vec<SampleTurn> = Vec::new();
        for m in rec.messages {
            match m.role.as_str() {
                "user" => turns.push(SampleTurn {
                    index: turns.len() as u32 + 1,
                    instruction: m.content,
                    reference_response: None,
                    constraints: Vec::new(),
                }),
                "assistant" => match turns.last_mut() {
                    Some(t) if t.reference_response.is_none() => t.reference_response = Some(m.content),
                    _ => return Err(err("assistant message without a preceding user message".into())),
                },
                "system" => {}
                other => return Err(err(format!("unknown role `{other}`"))),
            }
        }
        let mut graph = RelationGraph::new();
        for t in &turns {
            graph.add_node(t.index).map_err(|e| err(e.to_string()))?;
        }
        let sample = DialogueSample { sample_id: rec.id, turns, ground_truth_graph: graph, topic_boundaries: vec![1] };
        sample.validate(&format!("line {}", i + 1))?;
        out.push(sample);
    }
    Ok(out)
}
