use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::protocol::StateType;

/// Highlighted text region; offsets count Unicode code points of the content.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// Box with fractional, resolution-independent coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

const EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Answer {
    Ack,
    Selection { value: String },
    Selections { values: Vec<String> },
    Bool { value: bool },
    Spans { spans: Vec<Span> },
    Page { index: usize },
    Boxes { boxes: Vec<BBox> },
}

impl Answer {
    pub fn selection(v: impl Into<String>) -> Self {
        Answer::Selection { value: v.into() }
    }

    pub fn yes() -> Self {
        Answer::Bool { value: true }
    }

    pub fn no() -> Self {
        Answer::Bool { value: false }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Answer::Ack => "ack",
            Answer::Selection { .. } => "selection",
            Answer::Selections { .. } => "selections",
            Answer::Bool { .. } => "bool",
            Answer::Spans { .. } => "spans",
            Answer::Page { .. } => "page",
            Answer::Boxes { .. } => "boxes",
        }
    }

    /// Value used to pick a conditional branch.
    pub fn branch_key(&self) -> Option<&str> {
        match self {
            Answer::Selection { value } => Some(value),
            Answer::Bool { value: true } => Some("yes"),
            Answer::Bool { value: false } => Some("no"),
            _ => None,
        }
    }

    pub fn fits(&self, t: StateType) -> bool {
        matches!(
            (self, t),
            (Answer::Ack, StateType::Read)
                | (Answer::Selection { .. }, StateType::Select)
                | (Answer::Selections { .. }, StateType::Checkmark)
                | (Answer::Bool { .. }, StateType::Boolean)
                | (Answer::Spans { .. }, StateType::Label)
                | (Answer::Page { .. }, StateType::ChoosePage)
                | (Answer::Boxes { .. }, StateType::Bbox | StateType::BboxLabel)
        )
    }

    /// Single export cell. Multi-selections are sorted and `|`-joined; spans
    /// and boxes are JSON lists.
    pub fn to_cell(&self) -> String {
        match self {
            Answer::Ack => "ack".to_string(),
            Answer::Selection { value } => value.clone(),
            Answer::Selections { values } => {
                let mut v: Vec<&str> = values.iter().map(String::as_str).collect();
                v.sort_unstable();
                v.join("|")
            }
            Answer::Bool { value } => if *value { "yes" } else { "no" }.to_string(),
            Answer::Spans { spans } => serde_json::to_string(spans).expect("spans serialize"),
            Answer::Page { index } => index.to_string(),
            Answer::Boxes { boxes } => serde_json::to_string(boxes).expect("boxes serialize"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnswerProblem {
    TypeMismatch { expected: StateType, got: &'static str },
    InvalidOption(String),
    InvalidSpan(String),
    InvalidBox(String),
    InvalidPage(String),
}

impl fmt::Display for AnswerProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerProblem::TypeMismatch { expected, got } => {
                write!(f, "a {got} answer does not fit a {expected} state")
            }
            AnswerProblem::InvalidOption(m)
            | AnswerProblem::InvalidSpan(m)
            | AnswerProblem::InvalidBox(m)
            | AnswerProblem::InvalidPage(m) => f.write_str(m),
        }
    }
}

/// What the engine knows about the loaded instance when checking answers.
pub(crate) struct AnswerScope<'a> {
    pub state_type: StateType,
    pub options: &'a [String],
    pub labels: &'a [String],
    /// Code-point length of text content; `None` for file instances.
    pub text_len: Option<usize>,
    /// Page count of file instances; `None` for text instances.
    pub pages: Option<usize>,
}

pub(crate) fn check_answer(answer: &Answer, scope: &AnswerScope<'_>) -> Result<(), AnswerProblem> {
    if !answer.fits(scope.state_type) {
        return Err(AnswerProblem::TypeMismatch {
            expected: scope.state_type,
            got: answer.kind(),
        });
    }
    match answer {
        Answer::Ack | Answer::Bool { .. } => Ok(()),
        Answer::Selection { value } => {
            if scope.options.contains(value) {
                Ok(())
            } else {
                Err(AnswerProblem::InvalidOption(format!("`{value}` is not an option")))
            }
        }
        Answer::Selections { values } => {
            let mut seen = HashSet::new();
            for v in values {
                if !scope.options.contains(v) {
                    return Err(AnswerProblem::InvalidOption(format!("`{v}` is not an option")));
                }
                if !seen.insert(v) {
                    return Err(AnswerProblem::InvalidOption(format!("`{v}` selected twice")));
                }
            }
            Ok(())
        }
        Answer::Spans { spans } => {
            let Some(len) = scope.text_len else {
                return Err(AnswerProblem::InvalidSpan(
                    "spans need a text instance".to_string(),
                ));
            };
            for s in spans {
                if s.start >= s.end || s.end > len {
                    return Err(AnswerProblem::InvalidSpan(format!(
                        "span {}..{} is outside 0..{len} or empty",
                        s.start, s.end
                    )));
                }
                if !scope.labels.contains(&s.label) {
                    return Err(AnswerProblem::InvalidSpan(format!(
                        "`{}` is not a label",
                        s.label
                    )));
                }
            }
            Ok(())
        }
        Answer::Page { index } => match scope.pages {
            Some(n) if *index < n => Ok(()),
            Some(n) => Err(AnswerProblem::InvalidPage(format!(
                "page {index} does not exist; the instance has {n}"
            ))),
            None => Err(AnswerProblem::InvalidPage(
                "pages can only be chosen on file instances".to_string(),
            )),
        },
        Answer::Boxes { boxes } => {
            let labelled = scope.state_type == StateType::BboxLabel;
            for b in boxes {
                check_box(b, labelled, scope.labels)?;
            }
            Ok(())
        }
    }
}

fn check_box(b: &BBox, labelled: bool, labels: &[String]) -> Result<(), AnswerProblem> {
    let bad = |m: String| Err(AnswerProblem::InvalidBox(m));
    if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) {
        return bad("box coordinates must be finite".into());
    }
    if b.x < 0.0 || b.y < 0.0 || b.x > 1.0 || b.y > 1.0 {
        return bad(format!("box origin ({}, {}) outside [0,1]", b.x, b.y));
    }
    if b.w <= 0.0 || b.h <= 0.0 || b.w > 1.0 || b.h > 1.0 {
        return bad(format!("box extent {}x{} outside (0,1]", b.w, b.h));
    }
    if b.x + b.w > 1.0 + EPS || b.y + b.h > 1.0 + EPS {
        return bad("box extends past the image".into());
    }
    match (&b.label, labelled) {
        (None, true) => bad("every box needs a label".into()),
        (Some(_), false) => bad("boxes on a bbox state carry no label".into()),
        (Some(l), true) if !labels.contains(l) => bad(format!("`{l}` is not a label")),
        _ => Ok(()),
    }
}
