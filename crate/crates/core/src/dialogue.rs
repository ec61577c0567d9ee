//! Dialogue turns and the history that precedes the current instruction.

use serde::{Deserialize, Serialize};

use crate::graph::GraphError;

/// 1-based turn number.
pub type TurnId = u32;

/// One instruction/response pair. The response is absent until generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub index: TurnId,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

impl DialogueTurn {
    pub fn new(index: TurnId, instruction: impl Into<String>) -> Result<Self, GraphError> {
        let instruction = instruction.into();
        if index == 0 {
            return Err(GraphError::InvalidTurnIndex(index));
        }
        if instruction.trim().is_empty() {
            return Err(GraphError::EmptyInstruction(index));
        }
        Ok(Self {
            index,
            instruction,
            response: None,
        })
    }

    pub fn with_response(mut self, response: impl Into<String>) -> Self {
        self.response = Some(response.into());
        self
    }
}

/// Ordered turns `1..=n`. Every turn except possibly the last has a response.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DialogueTurn>", into = "Vec<DialogueTurn>")]
pub struct DialogueHistory {
    turns: Vec<DialogueTurn>,
}

impl DialogueHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_turns(turns: Vec<DialogueTurn>) -> Result<Self, GraphError> {
        for (pos, turn) in turns.iter().enumerate() {
            let expected = pos as TurnId + 1;
            if turn.index != expected {
                return Err(GraphError::NonContiguousHistory {
                    expected,
                    found: turn.index,
                });
            }
            if turn.instruction.trim().is_empty() {
                return Err(GraphError::EmptyInstruction(turn.index));
            }
            if pos + 1 < turns.len() && turn.response.is_none() {
                return Err(GraphError::MissingResponse(turn.index));
            }
        }
        Ok(Self { turns })
    }

    /// Appends a completed turn. The previous last turn must have a response.
    pub fn push(&mut self, turn: DialogueTurn) -> Result<(), GraphError> {
        let expected = self.turns.len() as TurnId + 1;
        if turn.index != expected {
            return Err(GraphError::NonContiguousHistory {
                expected,
                found: turn.index,
            });
        }
        if let Some(last) = self.turns.last() {
            if last.response.is_none() {
                return Err(GraphError::MissingResponse(last.index));
            }
        }
        self.turns.push(turn);
        Ok(())
    }

    pub fn turns(&self) -> &[DialogueTurn] {
        &self.turns
    }

    pub fn get(&self, index: TurnId) -> Option<&DialogueTurn> {
        if index == 0 {
            return None;
        }
        self.turns.get(index as usize - 1)
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Index the next turn will receive.
    pub fn next_index(&self) -> TurnId {
        self.turns.len() as TurnId + 1
    }

    /// A filtered view that keeps only the listed turns, in original order.
    ///
    /// The result is not required to be contiguous, so it is returned as a
    /// plain slice of turns rather than a `DialogueHistory`.
    pub fn select(&self, keep: impl Fn(TurnId) -> bool) -> Vec<DialogueTurn> {
        self.turns
            .iter()
            .filter(|t| keep(t.index))
            .cloned()
            .collect()
    }
}

impl TryFrom<Vec<DialogueTurn>> for DialogueHistory {
    type Error = GraphError;

    fn try_from(turns: Vec<DialogueTurn>) -> Result<Self, Self::Error> {
        Self::from_turns(turns)
    }
}

impl From<DialogueHistory> for Vec<DialogueTurn> {
    fn from(history: DialogueHistory) -> Self {
        history.turns
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn done(i: TurnId) -> DialogueTurn {
        DialogueTurn::new(i, format!("instruction {i}"))
            .unwrap()
            .with_response(format!("response {i}"))
    }

    #[test]
    fn rejects_zero_index_and_empty_instruction() {
        assert!(matches!(
            DialogueTurn::new(0, "x"),
            Err(GraphError::InvalidTurnIndex(0))
        ));
        assert!(matches!(
            DialogueTurn::new(1, "   "),
            Err(GraphError::EmptyInstruction(1))
        ));
    }

    #[test]
    fn history_must_be_contiguous() {
        let err = DialogueHistory::from_turns(vec![done(1), done(3)]).unwrap_err();
        assert!(matches!(
            err,
            GraphError::NonContiguousHistory {
                expected: 2,
                found: 3
            }
        ));
    }

    #[test]
    fn only_last_turn_may_lack_response() {
        let open = DialogueTurn::new(2, "pending").unwrap();
        assert!(DialogueHistory::from_turns(vec![done(1), open.clone()]).is_ok());
        let err = DialogueHistory::from_turns(vec![open.clone(), done(2)]);
        assert!(err.is_err());
        let mut h = DialogueHistory::new();
        h.push(DialogueTurn::new(1, "a").unwrap()).unwrap();
        assert!(matches!(h.push(done(2)), Err(GraphError::MissingResponse(1))));
    }

    #[test]
    fn serde_validates() {
        let json = r#"[{"index":1,"instruction":"a","response":"b"},{"index":3,"instruction":"c"}]"#;
        assert!(serde_json::from_str::<DialogueHistory>(json).is_err());
        let ok = r#"[{"index":1,"instruction":"a","response":"b"},{"index":2,"instruction":"c"}]"#;
        let h: DialogueHistory = serde_json::from_str(ok).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h.get(2).unwrap().instruction, "c");
        assert!(h.get(0).is_none());
    }
}
