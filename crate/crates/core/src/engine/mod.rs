//! Runs one annotator's pass over one instance through a compiled machine.
//!
//! A session starts by loading the instance in `start` and then sits on one
//! state at a time. Answers are validated against the current state, saved
//! into the buffer when the taken edge says so, and the buffer becomes the
//! bundle once `end` is reached. Any unexpected error moves the session to
//! `failure`, which accepts nothing further.

mod answer;
mod replay;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use answer::{Answer, AnswerProblem, BBox, Span};
pub use replay::{replay, ReplayError, TraceStep};

use crate::machine::{CompiledState, Edges, MachineDefinition};
use crate::protocol::{StateType, END, FAILURE};
use crate::registry::{ApiRegistry, CallError};
use answer::{check_answer, AnswerScope};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "content", rename_all = "lowercase")]
pub enum Content {
    Text(String),
    /// Ordered page-image references.
    File(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstancePayload {
    #[serde(flatten)]
    pub content: Content,
    #[serde(default)]
    pub context: Option<String>,
}

/// An instance as handed to the engine. `payload` is `None` when the data
/// could not be fetched.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRef {
    pub id: i64,
    pub payload: Option<InstancePayload>,
}

impl InstanceRef {
    pub fn text(id: i64, content: impl Into<String>) -> Self {
        InstanceRef {
            id,
            payload: Some(InstancePayload {
                content: Content::Text(content.into()),
                context: None,
            }),
        }
    }

    pub fn pages(id: i64, pages: Vec<String>) -> Self {
        InstanceRef {
            id,
            payload: Some(InstancePayload {
                content: Content::File(pages),
                context: None,
            }),
        }
    }

    pub fn missing(id: i64) -> Self {
        InstanceRef { id, payload: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedAnswer {
    pub state: String,
    /// 1 for the first visit of `state`, 2 for the second, ...
    pub visit: u32,
    pub answer: Answer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBundle {
    pub instance_id: i64,
    pub answers: Vec<SavedAnswer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub instance: InstanceRef,
    pub current: String,
    pub status: SessionStatus,
    pub buffer: Vec<SavedAnswer>,
    pub visit_counts: BTreeMap<String, u32>,
    /// Payloads returned by API functions, keyed by the state they prefill.
    pub api_context: BTreeMap<String, Value>,
    /// The current state wants its API function run before it is answered.
    pub api_pending: bool,
    /// Every state entered after `start`, in order.
    pub path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl SessionState {
    pub fn is_running(&self) -> bool {
        self.status == SessionStatus::Running
    }

    /// Stable serialized form used for replay comparisons.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("session serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prompt {
    pub state: String,
    #[serde(rename = "type")]
    pub state_type: StateType,
    pub question: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefill: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("session is not running")]
    SessionNotRunning,
    #[error("session has not completed")]
    SessionNotCompleted,
    #[error("{0}")]
    AnswerTypeMismatch(String),
    #[error("{0}")]
    InvalidOption(String),
    #[error("{0}")]
    InvalidSpan(String),
    #[error("{0}")]
    InvalidBox(String),
    #[error("{0}")]
    InvalidPage(String),
    #[error("state `{0}` must run its API function first")]
    ApiCallPending(String),
    #[error("state `{0}` has no API function to run")]
    NotApiState(String),
    #[error("no API function named `{0}`")]
    UnknownApiFunction(String),
    #[error("API function failed: {0}")]
    ApiFunctionFailed(String),
    #[error("state `{0}` is not part of the machine")]
    UnknownState(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::SessionNotRunning => "session-not-running",
            EngineError::SessionNotCompleted => "session-not-completed",
            EngineError::AnswerTypeMismatch(_) => "answer-type-mismatch",
            EngineError::InvalidOption(_) => "invalid-option",
            EngineError::InvalidSpan(_) => "invalid-span",
            EngineError::InvalidBox(_) => "invalid-box",
            EngineError::InvalidPage(_) => "invalid-page",
            EngineError::ApiCallPending(_) => "api-call-pending",
            EngineError::NotApiState(_) => "not-api-state",
            EngineError::UnknownApiFunction(_) => "unknown-api-function",
            EngineError::ApiFunctionFailed(_) => "api-function-failed",
            EngineError::UnknownState(_) => "unknown-state",
        }
    }
}

impl From<AnswerProblem> for EngineError {
    fn from(p: AnswerProblem) -> Self {
        let m = p.to_string();
        match p {
            AnswerProblem::TypeMismatch { .. } => EngineError::AnswerTypeMismatch(m),
            AnswerProblem::InvalidOption(_) => EngineError::InvalidOption(m),
            AnswerProblem::InvalidSpan(_) => EngineError::InvalidSpan(m),
            AnswerProblem::InvalidBox(_) => EngineError::InvalidBox(m),
            AnswerProblem::InvalidPage(_) => EngineError::InvalidPage(m),
        }
    }
}

/// Loads `instance` in the entry state and moves to the first state after it.
/// A missing payload, or one that does not match the loading type, leaves
/// the session in `failure`.
pub fn start_session(machine: &MachineDefinition, instance: InstanceRef) -> SessionState {
    let mut session = SessionState {
        instance,
        current: machine.entry.clone(),
        status: SessionStatus::Running,
        buffer: Vec::new(),
        visit_counts: BTreeMap::new(),
        api_context: BTreeMap::new(),
        api_pending: false,
        path: Vec::new(),
        diagnostic: None,
    };
    let Some(entry) = machine.state(&machine.entry) else {
        fail(&mut session, format!("machine has no entry state `{}`", machine.entry));
        return session;
    };
    if let Err(reason) = load_check(entry, &session.instance) {
        fail(&mut session, format!("instance-load-failed: {reason}"));
        return session;
    }
    match &entry.edges {
        Some(Edges::Always(edge)) => {
            let target = edge.target.clone();
            enter(machine, &mut session, &target);
        }
        _ => fail(&mut session, "entry state has no unconditional transition".into()),
    }
    session
}

fn load_check(entry: &CompiledState, instance: &InstanceRef) -> Result<(), String> {
    let Some(payload) = &instance.payload else {
        return Err(format!("instance {} has no data", instance.id));
    };
    match (entry.state_type, &payload.content) {
        (Some(StateType::Loading), Content::Text(_)) => Ok(()),
        (Some(StateType::LoadingFile), Content::File(pages)) if !pages.is_empty() => Ok(()),
        (Some(StateType::LoadingFile), Content::File(_)) => {
            Err(format!("instance {} has no pages", instance.id))
        }
        (Some(StateType::Loading), Content::File(_)) => Err(format!(
            "instance {} is a file instance but the protocol loads text",
            instance.id
        )),
        (Some(StateType::LoadingFile), Content::Text(_)) => Err(format!(
            "instance {} is a text instance but the protocol loads files",
            instance.id
        )),
        (t, _) => Err(format!("entry state of type {t:?} cannot load instances")),
    }
}

fn fail(session: &mut SessionState, diagnostic: String) {
    session.current = FAILURE.to_string();
    session.status = SessionStatus::Failed;
    session.api_pending = false;
    *session.visit_counts.entry(FAILURE.to_string()).or_insert(0) += 1;
    session.path.push(FAILURE.to_string());
    session.diagnostic = Some(diagnostic);
}

// Loading states after `start` pass straight through; the instance is
// already loaded.
fn enter(machine: &MachineDefinition, session: &mut SessionState, target: &str) {
    let mut target = target.to_string();
    for _ in 0..=machine.states.len() {
        *session.visit_counts.entry(target.clone()).or_insert(0) += 1;
        session.path.push(target.clone());
        session.current = target.clone();
        let Some(state) = machine.state(&target) else {
            fail(session, format!("transition into unknown state `{target}`"));
            return;
        };
        session.api_pending = state.api_call.is_some();
        match target.as_str() {
            END => {
                session.status = SessionStatus::Completed;
                return;
            }
            FAILURE => {
                session.status = SessionStatus::Failed;
                session.diagnostic = Some("protocol routed the session to failure".into());
                return;
            }
            _ => {}
        }
        match (state.state_type, &state.edges) {
            (Some(t), Some(Edges::Always(edge))) if t.is_loading() => {
                target = edge.target.clone();
            }
            _ => return,
        }
    }
    fail(session, "loading states form a cycle".into());
}

pub fn current_prompt(
    machine: &MachineDefinition,
    session: &SessionState,
) -> Result<Prompt, EngineError> {
    if !session.is_running() {
        return Err(EngineError::SessionNotRunning);
    }
    let state = machine
        .state(&session.current)
        .ok_or_else(|| EngineError::UnknownState(session.current.clone()))?;
    Ok(Prompt {
        state: session.current.clone(),
        state_type: state
            .state_type
            .ok_or_else(|| EngineError::UnknownState(session.current.clone()))?,
        question: state.question.clone(),
        options: state.options.clone(),
        labels: state.labels.clone(),
        prefill: session.api_context.get(&session.current).cloned(),
    })
}

/// Whether the current state is waiting on [`run_api_state`].
pub fn needs_api_call(session: &SessionState) -> bool {
    session.is_running() && session.api_pending
}

/// Validates `answer` against the current state and takes the matching edge.
/// On error the session is left untouched.
pub fn submit_answer(
    machine: &MachineDefinition,
    session: &mut SessionState,
    answer: Answer,
) -> Result<(), EngineError> {
    if !session.is_running() {
        return Err(EngineError::SessionNotRunning);
    }
    let state = machine
        .state(&session.current)
        .ok_or_else(|| EngineError::UnknownState(session.current.clone()))?;
    let Some(state_type) = state.state_type else {
        return Err(EngineError::SessionNotRunning);
    };
    if session.api_pending {
        return Err(EngineError::ApiCallPending(session.current.clone()));
    }
    if state_type.is_functional() {
        return Err(EngineError::AnswerTypeMismatch(format!(
            "{state_type} states take no answer"
        )));
    }

    let (text_len, pages) = match session.instance.payload.as_ref().map(|p| &p.content) {
        Some(Content::Text(t)) => (Some(t.chars().count()), None),
        Some(Content::File(p)) => (None, Some(p.len())),
        None => (None, None),
    };
    check_answer(
        &answer,
        &AnswerScope {
            state_type,
            options: &state.options,
            labels: &state.labels,
            text_len,
            pages,
        },
    )?;

    let edge = match &state.edges {
        Some(Edges::Always(e)) => e,
        Some(Edges::OnAnswer(branches)) => {
            let key = answer.branch_key().unwrap_or_default();
            branches.get(key).ok_or_else(|| {
                EngineError::InvalidOption(format!("no branch for answer `{key}`"))
            })?
        }
        None => return Err(EngineError::SessionNotRunning),
    };

    if edge.save {
        let visit = session
            .visit_counts
            .get(&session.current)
            .copied()
            .unwrap_or(0);
        session.buffer.push(SavedAnswer {
            state: session.current.clone(),
            visit,
            answer,
        });
    }
    let target = edge.target.clone();
    enter(machine, session, &target);
    Ok(())
}

/// Runs the API function of the current state.
///
/// On a `callAPI` state the payload is stored for the successor state and the
/// session advances. On an annotation state with an `api_call` option the
/// payload prefills that state and the session stays put. An unknown or
/// failing function sends the session to `failure`.
pub fn run_api_state(
    machine: &MachineDefinition,
    session: &mut SessionState,
    registry: &ApiRegistry,
) -> Result<(), EngineError> {
    if !session.is_running() {
        return Err(EngineError::SessionNotRunning);
    }
    let state = machine
        .state(&session.current)
        .ok_or_else(|| EngineError::UnknownState(session.current.clone()))?;
    let Some(name) = state.api_call.as_deref().filter(|_| session.api_pending) else {
        return Err(EngineError::NotApiState(session.current.clone()));
    };

    let payload = match registry.call(name, &session.instance, &session.buffer) {
        Ok(v) => v,
        Err(e) => {
            let err = match &e {
                CallError::Unknown(n) => EngineError::UnknownApiFunction(n.clone()),
                CallError::Failed { .. } => EngineError::ApiFunctionFailed(e.to_string()),
            };
            fail(session, e.to_string());
            return Err(err);
        }
    };
    session.api_pending = false;

    if state.state_type == Some(StateType::CallApi) {
        let Some(Edges::Always(edge)) = &state.edges else {
            fail(session, "callAPI state has no unconditional transition".into());
            return Err(EngineError::UnknownState(session.current.clone()));
        };
        let target = edge.target.clone();
        session.api_context.insert(target.clone(), payload);
        enter(machine, session, &target);
    } else {
        session.api_context.insert(session.current.clone(), payload);
    }
    Ok(())
}

pub fn finish_bundle(session: &SessionState) -> Result<AnnotationBundle, EngineError> {
    if session.status != SessionStatus::Completed {
        return Err(EngineError::SessionNotCompleted);
    }
    Ok(AnnotationBundle {
        instance_id: session.instance.id,
        answers: session.buffer.clone(),
    })
}
