//! Executable state machine compiled from an annotation protocol.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::protocol::{StateType, END, FAILURE, START};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub target: String,
    pub save: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edges {
    /// Taken for any admissible answer.
    Always(Edge),
    /// Keyed by the answer value (`select` option or `yes`/`no`).
    OnAnswer(IndexMap<String, Edge>),
}

impl Edges {
    pub fn targets(&self) -> Vec<&str> {
        match self {
            Edges::Always(e) => vec![e.target.as_str()],
            Edges::OnAnswer(m) => m.values().map(|e| e.target.as_str()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledState {
    /// `None` for the built-in `end` and `failure` states.
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub state_type: Option<StateType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_call: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Edges>,
}

impl CompiledState {
    pub fn terminal() -> Self {
        CompiledState {
            state_type: None,
            question: None,
            options: Vec::new(),
            labels: Vec::new(),
            api_call: None,
            edges: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.edges.is_none()
    }
}

/// States in protocol definition order, followed by `end` and `failure`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineDefinition {
    pub entry: String,
    pub states: IndexMap<String, CompiledState>,
}

impl MachineDefinition {
    pub fn state(&self, name: &str) -> Option<&CompiledState> {
        self.states.get(name)
    }

    /// Annotation-state names in definition order; used for export columns.
    pub fn state_order(&self) -> Vec<String> {
        self.states
            .iter()
            .filter(|(name, s)| !s.is_terminal() && name.as_str() != START)
            .map(|(name, _)| name.clone())
            .collect()
    }

    pub fn has_obligatory_states(&self) -> bool {
        [START, END, FAILURE]
            .iter()
            .all(|n| self.states.contains_key(*n))
    }

    /// Stable JSON form; identical machines give identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("machine serializes")
    }
}
