use serde::{Deserialize, Serialize};

use super::{
    needs_api_call, run_api_state, start_session, submit_answer, Answer, InstanceRef,
    SessionState, SessionStatus,
};
use crate::machine::MachineDefinition;
use crate::registry::ApiRegistry;

/// One confirmed answer in a client-submitted trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub state: String,
    pub answer: Answer,
}

impl TraceStep {
    pub fn new(state: impl Into<String>, answer: Answer) -> Self {
        TraceStep {
            state: state.into(),
            answer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{code} at step {step}: {message}")]
pub struct ReplayError {
    pub code: &'static str,
    /// Index into the trace; equals the trace length for errors past its end.
    pub step: usize,
    pub message: String,
}

/// Re-executes an answer trace from a fresh session. API functions are run
/// whenever a state asks for one. The result is a completed session or the
/// first problem found.
pub fn replay(
    machine: &MachineDefinition,
    instance: InstanceRef,
    trace: &[TraceStep],
    registry: &ApiRegistry,
) -> Result<SessionState, ReplayError> {
    let mut session = start_session(machine, instance);
    let mut steps = trace.iter().enumerate();
    loop {
        let step = steps.len();
        let at = trace.len() - step;
        match session.status {
            SessionStatus::Failed => {
                return Err(ReplayError {
                    code: "session-failed",
                    step: at,
                    message: session.diagnostic.clone().unwrap_or_default(),
                });
            }
            SessionStatus::Completed => {
                if step > 0 {
                    return Err(ReplayError {
                        code: "trailing-steps",
                        step: at,
                        message: format!("{step} step(s) after the session reached `end`"),
                    });
                }
                return Ok(session);
            }
            SessionStatus::Running => {}
        }
        if needs_api_call(&session) {
            if let Err(e) = run_api_state(machine, &mut session, registry) {
                return Err(ReplayError {
                    code: e.code(),
                    step: at,
                    message: e.to_string(),
                });
            }
            continue;
        }
        let Some((i, s)) = steps.next() else {
            return Err(ReplayError {
                code: "incomplete-trace",
                step: at,
                message: format!("trace ends at state `{}` before `end`", session.current),
            });
        };
        if s.state != session.current {
            return Err(ReplayError {
                code: "trace-state-mismatch",
                step: i,
                message: format!(
                    "trace answers `{}` but the session is at `{}`",
                    s.state, session.current
                ),
            });
        }
        if let Err(e) = submit_answer(machine, &mut session, s.answer.clone()) {
            return Err(ReplayError {
                code: e.code(),
                step: i,
                message: e.to_string(),
            });
        }
    }
}
