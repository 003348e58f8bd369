//! Annotation protocol documents: parsing, validation and compilation.
//!
//! A protocol is a single JSON map from state name to state definition:
//!
//! ```json
//! {
//!   "start": { "type": "loading", "transition": "s2" },
//!   "s2": {
//!     "type": "select",
//!     "question": "What is the sentiment of the comment?",
//!     "options": ["positive", "neutral", "negative"],
//!     "transition": {
//!       "positive": { "goto": "s3", "save": true },
//!       "neutral": { "goto": "s3", "save": true },
//!       "negative": { "goto": "end" }
//!     }
//!   },
//!   "s3": { "type": "read", "question": "Done?", "transition": "end" }
//! }
//! ```

mod compile;
pub mod json;
mod parse;
mod validate;

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use compile::compile;
pub use json::SourceSpan;
pub use parse::{parse_protocol, ParseError};
pub use validate::{validate, Finding, Level, ValidationReport};

/// Reserved target that completes a session.
pub const END: &str = "end";
/// Reserved dead state entered on unexpected errors.
pub const FAILURE: &str = "failure";
/// Entry state every protocol must define.
pub const START: &str = "start";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateType {
    #[serde(rename = "loading")]
    Loading,
    #[serde(rename = "loadingFile")]
    LoadingFile,
    #[serde(rename = "callAPI")]
    CallApi,
    #[serde(rename = "read")]
    Read,
    #[serde(rename = "select")]
    Select,
    #[serde(rename = "checkmark")]
    Checkmark,
    #[serde(rename = "label")]
    Label,
    #[serde(rename = "boolean")]
    Boolean,
    #[serde(rename = "choosePage")]
    ChoosePage,
    #[serde(rename = "bbox")]
    Bbox,
    #[serde(rename = "bboxLabel")]
    BboxLabel,
}

impl StateType {
    pub const ALL: [StateType; 11] = [
        StateType::Loading,
        StateType::LoadingFile,
        StateType::CallApi,
        StateType::Read,
        StateType::Select,
        StateType::Checkmark,
        StateType::Label,
        StateType::Boolean,
        StateType::ChoosePage,
        StateType::Bbox,
        StateType::BboxLabel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StateType::Loading => "loading",
            StateType::LoadingFile => "loadingFile",
            StateType::CallApi => "callAPI",
            StateType::Read => "read",
            StateType::Select => "select",
            StateType::Checkmark => "checkmark",
            StateType::Label => "label",
            StateType::Boolean => "boolean",
            StateType::ChoosePage => "choosePage",
            StateType::Bbox => "bbox",
            StateType::BboxLabel => "bboxLabel",
        }
    }

    pub fn from_name(name: &str) -> Option<StateType> {
        StateType::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Loading and API states do not prompt the annotator.
    pub fn is_functional(self) -> bool {
        matches!(
            self,
            StateType::Loading | StateType::LoadingFile | StateType::CallApi
        )
    }

    pub fn is_loading(self) -> bool {
        matches!(self, StateType::Loading | StateType::LoadingFile)
    }

    pub fn is_annotation(self) -> bool {
        !self.is_functional()
    }

    /// Only single-valued answers may select a branch.
    pub fn can_branch(self) -> bool {
        matches!(self, StateType::Select | StateType::Boolean)
    }

    pub fn uses_options(self) -> bool {
        matches!(self, StateType::Select | StateType::Checkmark)
    }

    pub fn uses_labels(self) -> bool {
        matches!(self, StateType::Label | StateType::BboxLabel)
    }
}

impl fmt::Display for StateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Branch {
    pub target: String,
    /// `None` inherits the state-level `save` flag.
    pub save: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransitionSpec {
    Unconditional(String),
    Conditional(IndexMap<String, Branch>),
}

impl TransitionSpec {
    pub fn targets(&self) -> Vec<&str> {
        match self {
            TransitionSpec::Unconditional(t) => vec![t.as_str()],
            TransitionSpec::Conditional(branches) => {
                branches.values().map(|b| b.target.as_str()).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateDef {
    pub state_type: StateType,
    pub question: Option<String>,
    pub options: Option<Vec<String>>,
    pub labels: Option<Vec<String>>,
    pub api_call: Option<String>,
    pub save: bool,
    pub transition: TransitionSpec,
}

/// Where a state and its transition were written in the source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StateSpans {
    pub name: SourceSpan,
    pub transition: SourceSpan,
}

/// A parsed protocol. Equality ignores source positions.
#[derive(Clone, Debug, Default)]
pub struct AnnotationProtocol {
    pub states: IndexMap<String, StateDef>,
    pub spans: HashMap<String, StateSpans>,
}

impl PartialEq for AnnotationProtocol {
    fn eq(&self, other: &Self) -> bool {
        // IndexMap equality is order-insensitive; definition order matters here.
        self.states.len() == other.states.len()
            && self.states.iter().zip(other.states.iter()).all(|(a, b)| a == b)
    }
}

impl Eq for AnnotationProtocol {}

impl AnnotationProtocol {
    pub fn span_of(&self, state: &str) -> SourceSpan {
        self.spans.get(state).map(|s| s.name).unwrap_or_default()
    }

    /// Canonical pretty-printed source for this protocol.
    pub fn to_source(&self) -> String {
        let mut out = String::from("{");
        for (i, (name, def)) in self.states.iter().enumerate() {
            out.push_str(if i == 0 { "\n" } else { ",\n" });
            out.push_str(&format!("  {}: {{\n", quote(name)));
            let mut fields = vec![format!("\"type\": {}", quote(def.state_type.name()))];
            if let Some(q) = &def.question {
                fields.push(format!("\"question\": {}", quote(q)));
            }
            if let Some(opts) = &def.options {
                fields.push(format!("\"options\": {}", quote_list(opts)));
            }
            if let Some(labels) = &def.labels {
                fields.push(format!("\"labels\": {}", quote_list(labels)));
            }
            if let Some(api) = &def.api_call {
                fields.push(format!("\"api_call\": {}", quote(api)));
            }
            if def.save {
                fields.push("\"save\": true".to_string());
            }
            fields.push(match &def.transition {
                TransitionSpec::Unconditional(t) => format!("\"transition\": {}", quote(t)),
                TransitionSpec::Conditional(branches) => {
                    let mut s = String::from("\"transition\": {");
                    for (j, (key, b)) in branches.iter().enumerate() {
                        s.push_str(if j == 0 { "\n" } else { ",\n" });
                        s.push_str(&format!("      {}: {{\"goto\": {}", quote(key), quote(&b.target)));
                        if let Some(save) = b.save {
                            s.push_str(&format!(", \"save\": {save}"));
                        }
                        s.push('}');
                    }
                    if !branches.is_empty() {
                        s.push_str("\n    ");
                    }
                    s.push('}');
                    s
                }
            });
            for (k, f) in fields.iter().enumerate() {
                out.push_str("    ");
                out.push_str(f);
                out.push_str(if k + 1 < fields.len() { ",\n" } else { "\n" });
            }
            out.push_str("  }");
        }
        if !self.states.is_empty() {
            out.push('\n');
        }
        out.push_str("}\n");
        out
    }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn quote_list(items: &[String]) -> String {
    let parts: Vec<String> = items.iter().map(|s| quote(s)).collect();
    format!("[{}]", parts.join(", "))
}

/// `[A-Za-z_][A-Za-z0-9_]*`
pub fn is_valid_state_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_names() {
        assert!(is_valid_state_name("s2"));
        assert!(is_valid_state_name("_x"));
        assert!(!is_valid_state_name(""));
        assert!(!is_valid_state_name("2s"));
        assert!(!is_valid_state_name("s-2"));
        assert!(!is_valid_state_name("é"));
    }

    #[test]
    fn type_names_round_trip() {
        for t in StateType::ALL {
            assert_eq!(StateType::from_name(t.name()), Some(t));
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.name()));
        }
        assert_eq!(StateType::from_name("selct"), None);
    }
}
