use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::Serialize;

use super::{
    is_valid_state_name, AnnotationProtocol, SourceSpan, StateType, TransitionSpec, END, FAILURE,
    START,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Error,
    Warning,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Error => "ERROR",
            Level::Warning => "WARNING",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub level: Level,
    pub code: &'static str,
    pub state: Option<String>,
    pub message: String,
    pub span: SourceSpan,
}

impl Finding {
    pub fn new(
        level: Level,
        code: &'static str,
        state: Option<String>,
        message: impl Into<String>,
        span: SourceSpan,
    ) -> Self {
        Finding {
            level,
            code,
            state,
            message: message.into(),
            span,
        }
    }
}

/// `LEVEL code state message line:col`, with `-` for a missing state.
impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.level,
            self.code,
            self.state.as_deref().unwrap_or("-"),
            self.message,
            self.span
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn findings(&self) -> impl Iterator<Item = &Finding> {
        self.errors.iter().chain(self.warnings.iter())
    }

    /// States carrying a finding with `code`, in report order.
    pub fn states_with(&self, code: &str) -> Vec<&str> {
        self.findings()
            .filter(|f| f.code == code)
            .filter_map(|f| f.state.as_deref())
            .collect()
    }

    /// One finding per line, errors first.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for f in self.findings() {
            out.push_str(&f.to_string());
            out.push('\n');
        }
        out
    }

    fn push(&mut self, f: Finding) {
        match f.level {
            Level::Error => self.errors.push(f),
            Level::Warning => self.warnings.push(f),
        }
    }
}

/// Runs every static check over a parsed protocol. Never fails; problems are
/// returned as findings.
pub fn validate(protocol: &AnnotationProtocol) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut emit = |level, code, state: &str, message: String, span| {
        report.push(Finding::new(level, code, Some(state.to_string()), message, span));
    };

    for (name, def) in &protocol.states {
        let span = protocol.span_of(name);
        let t = def.state_type;

        if name == END || name == FAILURE {
            emit(
                Level::Error,
                "reserved-name",
                name,
                format!("`{name}` is a built-in state and cannot be redefined"),
                span,
            );
        } else if !is_valid_state_name(name) {
            emit(
                Level::Error,
                "invalid-name",
                name,
                format!("state name `{name}` must match [A-Za-z_][A-Za-z0-9_]*"),
                span,
            );
        }

        if name == START && !t.is_loading() {
            emit(
                Level::Error,
                "start-not-functional",
                name,
                format!("`start` must be of type loading or loadingFile, not {t}"),
                span,
            );
        }

        // Required and forbidden fields per type.
        if t.is_annotation() && def.question.as_deref().map_or(true, str::is_empty) {
            emit(
                Level::Error,
                "missing-field",
                name,
                format!("{t} states need a non-empty `question`"),
                span,
            );
        }
        if t == StateType::CallApi {
            if def.api_call.as_deref().map_or(true, str::is_empty) {
                emit(
                    Level::Error,
                    "missing-field",
                    name,
                    "callAPI states need a non-empty `api_call`".to_string(),
                    span,
                );
            }
            if def.question.is_some() {
                emit(
                    Level::Error,
                    "unexpected-field",
                    name,
                    "callAPI states do not take a `question`".to_string(),
                    span,
                );
            }
        } else if t.is_loading() {
            if def.api_call.is_some() {
                emit(
                    Level::Warning,
                    "unused-field",
                    name,
                    format!("`api_call` has no effect on {t} states"),
                    span,
                );
            }
            if def.question.is_some() {
                emit(
                    Level::Warning,
                    "unused-field",
                    name,
                    format!("`question` has no effect on {t} states"),
                    span,
                );
            }
        } else if def.api_call.as_deref() == Some("") {
            emit(
                Level::Error,
                "missing-field",
                name,
                "`api_call` must name a function".to_string(),
                span,
            );
        }

        check_vocabulary(&mut emit, name, span, t, "options", def.options.as_deref(), t.uses_options());
        check_vocabulary(&mut emit, name, span, t, "labels", def.labels.as_deref(), t.uses_labels());

        if t.is_functional() && (def.save || branch_saves(&def.transition)) {
            emit(
                Level::Warning,
                "save-on-functional",
                name,
                format!("{t} states produce no answer; `save` is ignored"),
                span,
            );
        }

        let tspan = protocol
            .spans
            .get(name)
            .map(|s| s.transition)
            .unwrap_or_default();
        if let TransitionSpec::Conditional(branches) = &def.transition {
            if !t.can_branch() {
                emit(
                    Level::Error,
                    "conditional-not-allowed",
                    name,
                    format!("{t} states take a single unconditional transition"),
                    tspan,
                );
            } else {
                let expected: Vec<String> = match t {
                    StateType::Boolean => vec!["yes".into(), "no".into()],
                    _ => def.options.clone().unwrap_or_default(),
                };
                for key in &expected {
                    if !branches.contains_key(key) {
                        emit(
                            Level::Error,
                            "missing-branch",
                            name,
                            format!("no branch for answer `{key}`"),
                            tspan,
                        );
                    }
                }
                for key in branches.keys() {
                    if !expected.contains(key) {
                        emit(
                            Level::Error,
                            "unknown-branch",
                            name,
                            format!("branch `{key}` does not match any possible answer"),
                            tspan,
                        );
                    }
                }
            }
        }

        for target in def.transition.targets() {
            if target == START {
                emit(
                    Level::Error,
                    "start-target",
                    name,
                    "transitions may not re-enter `start`".to_string(),
                    tspan,
                );
            } else if target != END
                && target != FAILURE
                && !protocol.states.contains_key(target)
            {
                emit(
                    Level::Error,
                    "undefined-target",
                    name,
                    format!("transition target `{target}` is not defined"),
                    tspan,
                );
            }
        }
    }

    if !protocol.states.contains_key(START) {
        report.push(Finding::new(
            Level::Error,
            "missing-start",
            None,
            "protocol defines no `start` state",
            SourceSpan {
                line: 1,
                col: 1,
                ..Default::default()
            },
        ));
    } else {
        let (unreachable, dead_ends) = reachability(protocol);
        for name in dead_ends {
            report.push(Finding::new(
                Level::Error,
                "dead-end",
                Some(name.to_string()),
                format!("`end` cannot be reached from `{name}`"),
                protocol.span_of(name),
            ));
        }
        for name in unreachable {
            report.push(Finding::new(
                Level::Warning,
                "unreachable",
                Some(name.to_string()),
                format!("`{name}` cannot be reached from `start`"),
                protocol.span_of(name),
            ));
        }
    }

    report
}

fn branch_saves(t: &TransitionSpec) -> bool {
    match t {
        TransitionSpec::Unconditional(_) => false,
        TransitionSpec::Conditional(b) => b.values().any(|b| b.save == Some(true)),
    }
}

fn check_vocabulary(
    emit: &mut impl FnMut(Level, &'static str, &str, String, SourceSpan),
    name: &str,
    span: SourceSpan,
    t: StateType,
    field: &str,
    values: Option<&[String]>,
    required: bool,
) {
    match (required, values) {
        (true, None) | (true, Some([])) => emit(
            Level::Error,
            "missing-field",
            name,
            format!("{t} states need a non-empty `{field}` list"),
            span,
        ),
        (true, Some(values)) => {
            let mut seen = HashSet::new();
            for v in values {
                if !seen.insert(v) {
                    emit(
                        Level::Error,
                        "duplicate-value",
                        name,
                        format!("`{v}` appears more than once in `{field}`"),
                        span,
                    );
                }
            }
        }
        (false, Some(_)) => emit(
            Level::Warning,
            "unused-field",
            name,
            format!("`{field}` has no effect on {t} states"),
            span,
        ),
        (false, None) => {}
    }
}

/// States unreachable from `start`, and states reachable from `start` that
/// cannot reach `end`. Both in definition order.
fn reachability(protocol: &AnnotationProtocol) -> (Vec<&str>, Vec<&str>) {
    let names: Vec<&str> = protocol.states.keys().map(String::as_str).collect();
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let n = names.len();
    let end = n;

    let mut forward = vec![Vec::new(); n + 1];
    let mut backward = vec![Vec::new(); n + 1];
    for (i, def) in protocol.states.values().enumerate() {
        for target in def.transition.targets() {
            let j = if target == END {
                Some(end)
            } else {
                index.get(target).copied()
            };
            if let Some(j) = j {
                forward[i].push(j);
                backward[j].push(i);
            }
        }
    }

    let from_start = bfs(&forward, index[START]);
    let to_end = bfs(&backward, end);

    let unreachable = (0..n).filter(|&i| !from_start[i]).map(|i| names[i]).collect();
    let dead_ends = (0..n)
        .filter(|&i| from_start[i] && !to_end[i])
        .map(|i| names[i])
        .collect();
    (unreachable, dead_ends)
}

fn bfs(adj: &[Vec<usize>], from: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}
