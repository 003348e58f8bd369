use indexmap::IndexMap;

use super::{validate, AnnotationProtocol, TransitionSpec, ValidationReport, END, FAILURE, START};
use crate::machine::{CompiledState, Edge, Edges, MachineDefinition};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("protocol-invalid: {} error(s)", .report.errors.len())]
pub struct ProtocolInvalid {
    pub report: ValidationReport,
}

/// Resolves every transition into explicit edges and adds `end`/`failure`.
///
/// Validation runs again here so an invalid protocol can never produce a
/// machine.
pub fn compile(protocol: &AnnotationProtocol) -> Result<MachineDefinition, ProtocolInvalid> {
    let report = validate(protocol);
    if !report.is_ok() {
        return Err(ProtocolInvalid { report });
    }

    let mut states = IndexMap::with_capacity(protocol.states.len() + 2);
    for (name, def) in &protocol.states {
        let edges = match &def.transition {
            TransitionSpec::Unconditional(target) => Edges::Always(Edge {
                target: target.clone(),
                save: def.save && def.state_type.is_annotation(),
            }),
            TransitionSpec::Conditional(branches) => Edges::OnAnswer(
                branches
                    .iter()
                    .map(|(answer, b)| {
                        (
                            answer.clone(),
                            Edge {
                                target: b.target.clone(),
                                save: b.save.unwrap_or(def.save),
                            },
                        )
                    })
                    .collect(),
            ),
        };
        let uses_options = def.state_type.uses_options();
        let uses_labels = def.state_type.uses_labels();
        states.insert(
            name.clone(),
            CompiledState {
                state_type: Some(def.state_type),
                question: def.question.clone().filter(|_| !def.state_type.is_functional()),
                options: def.options.clone().filter(|_| uses_options).unwrap_or_default(),
                labels: def.labels.clone().filter(|_| uses_labels).unwrap_or_default(),
                api_call: def.api_call.clone().filter(|_| !def.state_type.is_loading()),
                edges: Some(edges),
            },
        );
    }
    states.insert(END.to_string(), CompiledState::terminal());
    states.insert(FAILURE.to_string(), CompiledState::terminal());

    Ok(MachineDefinition {
        entry: START.to_string(),
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::parse_protocol;

    #[test]
    fn minimal_protocol_gains_terminal_states() {
        let p = parse_protocol(
            r#"{"start": {"type": "loading", "transition": "r1"},
                "r1": {"type": "read", "question": "Read.", "transition": "end"}}"#,
        )
        .unwrap();
        let m = compile(&p).unwrap();
        let names: Vec<&str> = m.states.keys().map(String::as_str).collect();
        assert_eq!(names, ["start", "r1", "end", "failure"]);
        assert!(m.has_obligatory_states());
        assert_eq!(m.state_order(), ["r1"]);
    }

    #[test]
    fn invalid_protocol_is_refused() {
        let p = parse_protocol(r#"{"start": {"type": "loading", "transition": "nowhere"}}"#)
            .unwrap();
        let err = compile(&p).unwrap_err();
        assert_eq!(err.report.errors[0].code, "undefined-target");
    }

    #[test]
    fn functional_states_never_save() {
        let p = parse_protocol(r#"{"start": {"type": "loading", "save": true, "transition": "end"}}"#)
            .unwrap();
        let m = compile(&p).unwrap();
        assert_eq!(
            m.states["start"].edges,
            Some(Edges::Always(Edge {
                target: "end".into(),
                save: false
            }))
        );
    }
}
