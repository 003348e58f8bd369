use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;

use super::json::{self, JsonError, Member, Node, SourceSpan, Spanned};
use super::validate::{Finding, Level};
use super::{AnnotationProtocol, Branch, StateDef, StateSpans, StateType, TransitionSpec};

/// Structural problems that prevent a protocol from being typed at all.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub errors: Vec<Finding>,
}

impl ParseError {
    fn single(code: &'static str, state: Option<String>, message: String, span: SourceSpan) -> Self {
        ParseError {
            errors: vec![Finding::new(Level::Error, code, state, message, span)],
        }
    }

    pub fn has_code(&self, code: &str) -> bool {
        self.errors.iter().any(|f| f.code == code)
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseError {}

const STATE_FIELDS: [&str; 7] = [
    "type",
    "question",
    "options",
    "labels",
    "api_call",
    "save",
    "transition",
];

/// Parses protocol source text into a typed document.
///
/// Syntax errors stop parsing immediately. Field-level problems are collected
/// across all states so a single run reports everything it can.
pub fn parse_protocol(source: &str) -> Result<AnnotationProtocol, ParseError> {
    let root = json::parse(source).map_err(|e| match e {
        JsonError::Syntax { message, span } => {
            ParseError::single("syntax", None, message, span)
        }
        JsonError::DuplicateKey { key, span, depth } => {
            if depth == 0 {
                ParseError::single(
                    "duplicate-state",
                    Some(key.clone()),
                    format!("state `{key}` is defined more than once"),
                    span,
                )
            } else {
                ParseError::single(
                    "duplicate-key",
                    None,
                    format!("key `{key}` appears more than once in the same map"),
                    span,
                )
            }
        }
    })?;

    let Node::Object(members) = root.node else {
        return Err(ParseError::single(
            "wrong-field-type",
            None,
            format!("protocol must be a map of states, found {}", root.kind_name()),
            root.span,
        ));
    };

    let mut errors = Vec::new();
    let mut states = IndexMap::new();
    let mut spans = HashMap::new();
    for member in &members {
        let mut cx = StateCx {
            name: &member.key,
            errors: &mut errors,
        };
        if let Some(def) = cx.state(member) {
            spans.insert(
                member.key.clone(),
                StateSpans {
                    name: member.key_span,
                    transition: field(member, "transition")
                        .map(|m| m.value.span)
                        .unwrap_or(member.key_span),
                },
            );
            states.insert(member.key.clone(), def);
        }
    }

    if errors.is_empty() {
        Ok(AnnotationProtocol { states, spans })
    } else {
        Err(ParseError { errors })
    }
}

fn field<'m>(state: &'m Member, key: &str) -> Option<&'m Member> {
    match &state.value.node {
        Node::Object(fields) => fields.iter().find(|f| f.key == key),
        _ => None,
    }
}

struct StateCx<'a> {
    name: &'a str,
    errors: &'a mut Vec<Finding>,
}

impl StateCx<'_> {
    fn error(&mut self, code: &'static str, message: String, span: SourceSpan) {
        self.errors.push(Finding::new(
            Level::Error,
            code,
            Some(self.name.to_string()),
            message,
            span,
        ));
    }

    fn wrong_type(&mut self, field: &str, wanted: &str, value: &Spanned) {
        self.error(
            "wrong-field-type",
            format!(
                "field `{field}` must be {wanted}, found {}",
                value.kind_name()
            ),
            value.span,
        );
    }

    fn state(&mut self, member: &Member) -> Option<StateDef> {
        let Node::Object(fields) = &member.value.node else {
            self.wrong_type("state definition", "a map", &member.value);
            return None;
        };
        let before = self.errors.len();

        for f in fields {
            if !STATE_FIELDS.contains(&f.key.as_str()) {
                self.error(
                    "unknown-field",
                    format!("unknown field `{}`", f.key),
                    f.key_span,
                );
            }
        }
        let get = |key: &str| fields.iter().find(|f| f.key == key);

        let state_type = match get("type") {
            None => {
                self.error(
                    "missing-field",
                    "state has no `type` field".to_string(),
                    member.key_span,
                );
                None
            }
            Some(f) => match &f.value.node {
                Node::String(s) => match StateType::from_name(s) {
                    Some(t) => Some(t),
                    None => {
                        self.error(
                            "unknown-state-type",
                            format!("unknown state type `{s}`"),
                            f.value.span,
                        );
                        None
                    }
                },
                _ => {
                    self.wrong_type("type", "a string", &f.value);
                    None
                }
            },
        };

        let question = get("question").and_then(|f| self.string("question", &f.value));
        let options = get("options").and_then(|f| self.string_list("options", &f.value));
        let labels = get("labels").and_then(|f| self.string_list("labels", &f.value));
        let api_call = get("api_call").and_then(|f| self.string("api_call", &f.value));
        let save = match get("save") {
            None => false,
            Some(f) => match f.value.node {
                Node::Bool(b) => b,
                _ => {
                    self.wrong_type("save", "a boolean", &f.value);
                    false
                }
            },
        };
        let transition = match get("transition") {
            None => {
                self.error(
                    "missing-field",
                    "state has no `transition` field".to_string(),
                    member.key_span,
                );
                None
            }
            Some(f) => self.transition(&f.value),
        };

        if self.errors.len() > before {
            return None;
        }
        Some(StateDef {
            state_type: state_type?,
            question,
            options,
            labels,
            api_call,
            save,
            transition: transition?,
        })
    }

    fn string(&mut self, field: &str, value: &Spanned) -> Option<String> {
        match &value.node {
            Node::String(s) => Some(s.clone()),
            _ => {
                self.wrong_type(field, "a string", value);
                None
            }
        }
    }

    fn string_list(&mut self, field: &str, value: &Spanned) -> Option<Vec<String>> {
        let Node::Array(items) = &value.node else {
            self.wrong_type(field, "a list of strings", value);
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match &item.node {
                Node::String(s) => out.push(s.clone()),
                _ => {
                    self.wrong_type(field, "a list of strings", item);
                    return None;
                }
            }
        }
        Some(out)
    }

    fn transition(&mut self, value: &Spanned) -> Option<TransitionSpec> {
        match &value.node {
            Node::String(target) => Some(TransitionSpec::Unconditional(target.clone())),
            Node::Object(branches) => {
                let mut out = IndexMap::new();
                let mut ok = true;
                for b in branches {
                    match self.branch(&b.key, &b.value) {
                        Some(branch) => {
                            out.insert(b.key.clone(), branch);
                        }
                        None => ok = false,
                    }
                }
                ok.then_some(TransitionSpec::Conditional(out))
            }
            _ => {
                self.wrong_type("transition", "a state name or a map of branches", value);
                None
            }
        }
    }

    fn branch(&mut self, answer: &str, value: &Spanned) -> Option<Branch> {
        let Node::Object(fields) = &value.node else {
            self.wrong_type(&format!("transition.{answer}"), "a map", value);
            return None;
        };
        let mut target = None;
        let mut save = None;
        let mut ok = true;
        for f in fields {
            match f.key.as_str() {
                "goto" => match &f.value.node {
                    Node::String(s) => target = Some(s.clone()),
                    _ => {
                        self.wrong_type("goto", "a string", &f.value);
                        ok = false;
                    }
                },
                "save" => match f.value.node {
                    Node::Bool(b) => save = Some(b),
                    _ => {
                        self.wrong_type("save", "a boolean", &f.value);
                        ok = false;
                    }
                },
                other => {
                    self.error(
                        "unknown-field",
                        format!("unknown field `{other}` in branch `{answer}`"),
                        f.key_span,
                    );
                    ok = false;
                }
            }
        }
        if target.is_none() && ok {
            self.error(
                "missing-field",
                format!("branch `{answer}` has no `goto` field"),
                value.span,
            );
            ok = false;
        }
        if !ok {
            return None;
        }
        Some(Branch {
            target: target?,
            save,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_protocol() {
        let p = parse_protocol(
            r#"{"start": {"type": "loading", "transition": "r1"},
                "r1": {"type": "read", "question": "Read it.", "transition": "end"}}"#,
        )
        .unwrap();
        assert_eq!(p.states.len(), 2);
        assert_eq!(p.states["start"].state_type, StateType::Loading);
        assert_eq!(
            p.states["r1"].transition,
            TransitionSpec::Unconditional("end".into())
        );
    }

    #[test]
    fn misspelled_type_is_reported_at_its_value() {
        let src = "{\n  \"start\": {\"type\": \"loading\", \"transition\": \"q\"},\n  \"q\": {\"type\": \"selct\", \"transition\": \"end\"}\n}";
        let err = parse_protocol(src).unwrap_err();
        assert_eq!(err.errors.len(), 1);
        let e = &err.errors[0];
        assert_eq!(e.code, "unknown-state-type");
        assert_eq!(e.state.as_deref(), Some("q"));
        assert_eq!((e.span.line, e.span.col), (3, 17));
    }

    #[test]
    fn duplicate_state_vs_duplicate_field() {
        let err = parse_protocol(
            r#"{"a": {"type": "read", "transition": "end"}, "a": {"type": "read", "transition": "end"}}"#,
        )
        .unwrap_err();
        assert!(err.has_code("duplicate-state"));

        let err = parse_protocol(r#"{"a": {"type": "read", "type": "read", "transition": "end"}}"#)
            .unwrap_err();
        assert!(err.has_code("duplicate-key"));
    }

    #[test]
    fn field_errors_are_collected_across_states() {
        let err = parse_protocol(
            r#"{
              "a": {"type": "read", "transition": "end", "colour": "red"},
              "b": {"type": "select", "options": "x", "transition": "end"},
              "c": {"type": 3, "transition": "end"},
              "d": {"type": "read"},
              "e": {"type": "boolean", "transition": {"yes": {"goto": "end", "sav": true}}},
              "f": {"type": "boolean", "transition": {"yes": {}}},
              "g": {"type": "read", "save": "yes", "transition": "end"},
              "h": 7
            }"#,
        )
        .unwrap_err();
        let codes: Vec<(&str, &str)> = err
            .errors
            .iter()
            .map(|f| (f.state.as_deref().unwrap(), f.code))
            .collect();
        assert_eq!(
            codes,
            vec![
                ("a", "unknown-field"),
                ("b", "wrong-field-type"),
                ("c", "wrong-field-type"),
                ("d", "missing-field"),
                ("e", "unknown-field"),
                ("f", "missing-field"),
                ("g", "wrong-field-type"),
                ("h", "wrong-field-type"),
            ]
        );
    }

    #[test]
    fn syntax_error_position() {
        let err = parse_protocol("{\n  \"start\": {\"type\": \"loading\",}\n}").unwrap_err();
        assert_eq!(err.errors[0].code, "syntax");
        assert_eq!(err.errors[0].span.line, 2);
        let err = parse_protocol("[1, 2]").unwrap_err();
        assert_eq!(err.errors[0].code, "wrong-field-type");
    }

    #[test]
    fn branch_save_is_optional() {
        let p = parse_protocol(
            r#"{"b": {"type": "boolean", "question": "?", "save": true,
                "transition": {"yes": {"goto": "end"}, "no": {"goto": "end", "save": false}}}}"#,
        )
        .unwrap();
        let TransitionSpec::Conditional(br) = &p.states["b"].transition else {
            panic!()
        };
        assert_eq!(br["yes"].save, None);
        assert_eq!(br["no"].save, Some(false));
    }
}
