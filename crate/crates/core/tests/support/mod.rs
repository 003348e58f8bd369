//! Random protocol generation and reference implementations used as test
//! oracles. Nothing here calls into the library under test.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCE_TEXT: &str = "abcdef";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn below(rng: &mut (impl RngCore + ?Sized), n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

pub fn chance(rng: &mut impl RngCore, percent: u64) -> bool {
    rng.next_u64() % 100 < percent
}

#[derive(Clone, Debug, PartialEq)]
pub enum Kind {
    Read,
    Select(Vec<String>),
    Boolean,
    Checkmark(Vec<String>),
    Label(Vec<String>),
}

impl Kind {
    fn type_name(&self) -> &'static str {
        match self {
            Kind::Read => "read",
            Kind::Select(_) => "select",
            Kind::Boolean => "boolean",
            Kind::Checkmark(_) => "checkmark",
            Kind::Label(_) => "label",
        }
    }

    /// Branch keys for a conditional transition.
    fn keys(&self) -> Option<Vec<String>> {
        match self {
            Kind::Select(o) => Some(o.clone()),
            Kind::Boolean => Some(vec!["yes".into(), "no".into()]),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Next {
    Always(String),
    /// key -> (target, explicit save flag)
    OnAnswer(Vec<(String, String, Option<bool>)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenState {
    pub name: String,
    pub kind: Kind,
    pub save: bool,
    pub next: Next,
}

/// A text protocol: `start` is a loading state followed by annotation states.
#[derive(Clone, Debug, PartialEq)]
pub struct GenProtocol {
    pub first: String,
    pub states: Vec<GenState>,
}

fn values(rng: &mut impl RngCore, prefix: &str, min: usize, max: usize) -> Vec<String> {
    let n = min + below(rng, max - min + 1);
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

impl GenProtocol {
    /// `n` annotation states besides `start`. Targets are drawn uniformly
    /// from the states, `end` (weight `end_pct`) and `failure` (5%).
    pub fn random(rng: &mut impl RngCore, n: usize, end_pct: u64) -> GenProtocol {
        let names: Vec<String> = (0..n).map(|i| format!("q{i}")).collect();
        let pick = |rng: &mut dyn RngCore| -> String {
            let r = rng.next_u64() % 100;
            if r < end_pct || names.is_empty() {
                "end".into()
            } else if r < end_pct + 5 {
                "failure".into()
            } else {
                names[below(rng, names.len())].clone()
            }
        };
        let first = pick(rng);
        let mut states = Vec::new();
        for name in &names {
            let kind = match below(rng, 5) {
                0 => Kind::Read,
                1 => Kind::Select(values(rng, "o", 1, 4)),
                2 => Kind::Boolean,
                3 => Kind::Checkmark(values(rng, "c", 1, 3)),
                _ => Kind::Label(values(rng, "L", 1, 3)),
            };
            let next = match kind.keys() {
                Some(keys) if chance(rng, 70) => Next::OnAnswer(
                    keys.into_iter()
                        .map(|k| {
                            let save = match below(rng, 3) {
                                0 => None,
                                1 => Some(true),
                                _ => Some(false),
                            };
                            (k, pick(rng), save)
                        })
                        .collect(),
                ),
                _ => Next::Always(pick(rng)),
            };
            states.push(GenState {
                name: name.clone(),
                kind,
                save: chance(rng, 50),
                next,
            });
        }
        GenProtocol { first, states }
    }

    pub fn state(&self, name: &str) -> Option<&GenState> {
        self.states.iter().find(|s| s.name == name)
    }

    /// Protocol source text, written independently of the library's printer.
    pub fn source(&self) -> String {
        let q = |s: &str| format!("\"{s}\"");
        let list = |v: &[String]| format!("[{}]", v.iter().map(|s| q(s)).collect::<Vec<_>>().join(", "));
        let mut parts = vec![format!(
            "  \"start\": {{\"type\": \"loading\", \"transition\": {}}}",
            q(&self.first)
        )];
        for s in &self.states {
            let mut fields = vec![
                format!("\"type\": {}", q(s.kind.type_name())),
                format!("\"question\": {}", q(&format!("question for {}", s.name))),
            ];
            match &s.kind {
                Kind::Select(o) | Kind::Checkmark(o) => fields.push(format!("\"options\": {}", list(o))),
                Kind::Label(l) => fields.push(format!("\"labels\": {}", list(l))),
                Kind::Read | Kind::Boolean => {}
            }
            fields.push(format!("\"save\": {}", s.save));
            let transition = match &s.next {
                Next::Always(t) => q(t),
                Next::OnAnswer(branches) => format!(
                    "{{{}}}",
                    branches
                        .iter()
                        .map(|(k, t, save)| match save {
                            Some(b) => format!("{}: {{\"goto\": {}, \"save\": {b}}}", q(k), q(t)),
                            None => format!("{}: {{\"goto\": {}}}", q(k), q(t)),
                        })
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            };
            fields.push(format!("\"transition\": {transition}"));
            parts.push(format!("  {}: {{{}}}", q(&s.name), fields.join(", ")));
        }
        format!("{{\n{}\n}}\n", parts.join(",\n"))
    }

    fn targets(&self, name: &str) -> Vec<String> {
        if name == "start" {
            return vec![self.first.clone()];
        }
        match self.state(name).map(|s| &s.next) {
            Some(Next::Always(t)) => vec![t.clone()],
            Some(Next::OnAnswer(b)) => b.iter().map(|(_, t, _)| t.clone()).collect(),
            None => Vec::new(),
        }
    }
}

/// Reachability findings from a Warshall transitive closure over
/// `start`, the generated states, `end` and `failure`.
#[derive(Debug, PartialEq, Eq)]
pub struct GraphFindings {
    pub unreachable: Vec<String>,
    pub dead_ends: Vec<String>,
}

pub fn closure_oracle(p: &GenProtocol) -> GraphFindings {
    let mut nodes = vec!["start".to_string()];
    nodes.extend(p.states.iter().map(|s| s.name.clone()));
    nodes.push("end".into());
    nodes.push("failure".into());
    let n = nodes.len();
    let idx = |s: &str| nodes.iter().position(|x| x == s).unwrap();
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for name in nodes.iter().take(n - 2) {
        for t in p.targets(name) {
            reach[idx(name)][idx(&t)] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let start = idx("start");
    let end = idx("end");
    let defined = &nodes[..n - 2];
    GraphFindings {
        unreachable: defined
            .iter()
            .filter(|s| !reach[start][idx(s)])
            .cloned()
            .collect(),
        dead_ends: defined
            .iter()
            .filter(|s| reach[start][idx(s)] && !reach[idx(s)][end])
            .cloned()
            .collect(),
    }
}

/// A valid protocol (every state reachable from `start` can reach `end`)
/// with `n` annotation states.
pub fn random_valid(rng: &mut impl RngCore, n: usize) -> GenProtocol {
    loop {
        let p = GenProtocol::random(rng, n, 35);
        if closure_oracle(&p).dead_ends.is_empty() {
            return p;
        }
    }
}

// ---- reference simulator ---------------------------------------------------

/// An answer in abstract form: which alternative of the state's alphabet.
#[derive(Clone, Debug, PartialEq)]
pub enum AbstractAnswer {
    Ack,
    Select(String),
    Bool(bool),
    Check(Vec<String>),
    /// `None`: no spans; `Some(label)`: one span over the first character.
    Label(Option<String>),
}

impl AbstractAnswer {
    /// Export cell in the documented export format.
    pub fn cell(&self) -> String {
        match self {
            AbstractAnswer::Ack => "ack".into(),
            AbstractAnswer::Select(v) => v.clone(),
            AbstractAnswer::Bool(true) => "yes".into(),
            AbstractAnswer::Bool(false) => "no".into(),
            AbstractAnswer::Check(v) => {
                let mut v = v.clone();
                v.sort();
                v.join("|")
            }
            AbstractAnswer::Label(None) => "[]".into(),
            AbstractAnswer::Label(Some(l)) => {
                format!("[{{\"start\":0,\"end\":1,\"label\":\"{l}\"}}]")
            }
        }
    }

    /// Wire form of the answer, as a client would submit it.
    pub fn wire(&self) -> String {
        match self {
            AbstractAnswer::Ack => r#"{"kind":"ack"}"#.into(),
            AbstractAnswer::Select(v) => format!(r#"{{"kind":"selection","value":"{v}"}}"#),
            AbstractAnswer::Bool(b) => format!(r#"{{"kind":"bool","value":{b}}}"#),
            AbstractAnswer::Check(v) => format!(
                r#"{{"kind":"selections","values":[{}]}}"#,
                v.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(",")
            ),
            AbstractAnswer::Label(None) => r#"{"kind":"spans","spans":[]}"#.into(),
            AbstractAnswer::Label(Some(l)) => format!(
                r#"{{"kind":"spans","spans":[{{"start":0,"end":1,"label":"{l}"}}]}}"#
            ),
        }
    }
}

pub fn alphabet(kind: &Kind) -> Vec<AbstractAnswer> {
    match kind {
        Kind::Read => vec![AbstractAnswer::Ack],
        Kind::Select(o) => o.iter().cloned().map(AbstractAnswer::Select).collect(),
        Kind::Boolean => vec![AbstractAnswer::Bool(true), AbstractAnswer::Bool(false)],
        Kind::Checkmark(o) => {
            let mut v = vec![AbstractAnswer::Check(vec![]), AbstractAnswer::Check(vec![o[0].clone()])];
            if o.len() > 1 {
                v.push(AbstractAnswer::Check(vec![o[1].clone(), o[0].clone()]));
            }
            v
        }
        Kind::Label(l) => vec![
            AbstractAnswer::Label(None),
            AbstractAnswer::Label(Some(l[l.len() - 1].clone())),
        ],
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RefStatus {
    Running,
    Completed,
    Failed,
}

/// Reference session: the transition rule applied literally.
#[derive(Clone, Debug, PartialEq)]
pub struct RefSession {
    pub current: String,
    pub status: RefStatus,
    /// (state, visit, export cell)
    pub saved: Vec<(String, u32, String)>,
    pub visits: BTreeMap<String, u32>,
    pub path: Vec<String>,
}

impl RefSession {
    pub fn start(p: &GenProtocol) -> RefSession {
        let mut s = RefSession {
            current: "start".into(),
            status: RefStatus::Running,
            saved: Vec::new(),
            visits: BTreeMap::new(),
            path: Vec::new(),
        };
        s.enter(&p.first);
        s
    }

    fn enter(&mut self, target: &str) {
        self.current = target.to_string();
        self.path.push(target.to_string());
        *self.visits.entry(target.to_string()).or_default() += 1;
        match target {
            "end" => self.status = RefStatus::Completed,
            "failure" => self.status = RefStatus::Failed,
            _ => {}
        }
    }

    pub fn answer(&mut self, p: &GenProtocol, a: &AbstractAnswer) {
        assert_eq!(self.status, RefStatus::Running);
        let st = p.state(&self.current).expect("running sessions sit on a defined state");
        let (target, save) = match &st.next {
            Next::Always(t) => (t.clone(), st.save),
            Next::OnAnswer(branches) => {
                let key = match a {
                    AbstractAnswer::Select(v) => v.clone(),
                    AbstractAnswer::Bool(true) => "yes".into(),
                    AbstractAnswer::Bool(false) => "no".into(),
                    other => panic!("{other:?} cannot pick a branch"),
                };
                let (_, t, s) = branches.iter().find(|(k, _, _)| *k == key).unwrap();
                (t.clone(), s.unwrap_or(st.save))
            }
        };
        if save {
            let visit = self.visits[&self.current];
            self.saved.push((self.current.clone(), visit, a.cell()));
        }
        self.enter(&target);
    }
}

/// A random walk to `end`, or `None` if it fails or exceeds `max_steps`.
pub fn random_trace(
    rng: &mut impl RngCore,
    p: &GenProtocol,
    max_steps: usize,
) -> Option<Vec<(String, AbstractAnswer)>> {
    let mut s = RefSession::start(p);
    let mut trace = Vec::new();
    while s.status == RefStatus::Running {
        if trace.len() == max_steps {
            return None;
        }
        let options = alphabet(&p.state(&s.current).unwrap().kind);
        let a = options[below(rng, options.len())].clone();
        trace.push((s.current.clone(), a.clone()));
        s.answer(p, &a);
    }
    (s.status == RefStatus::Completed).then_some(trace)
}

pub fn trace_json(trace: &[(String, AbstractAnswer)]) -> String {
    format!(
        "[{}]",
        trace
            .iter()
            .map(|(s, a)| format!(r#"{{"state":"{s}","answer":{}}}"#, a.wire()))
            .collect::<Vec<_>>()
            .join(",")
    )
}

// ---- fixtures --------------------------------------------------------------

pub fn protocol_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../protocols")
        .join(name)
}

pub fn protocol_source(name: &str) -> String {
    std::fs::read_to_string(protocol_path(name)).unwrap()
}

// ---- TSV generation --------------------------------------------------------

/// One accepted row as the importer should store it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpectedRow {
    pub content: String,
    pub context: Option<String>,
    pub meta: String,
    pub is_file: bool,
}

pub struct TsvCase {
    pub bytes: Vec<u8>,
    pub accepted: Vec<ExpectedRow>,
    /// (1-based line, reason) for every line the generator corrupted.
    pub rejected: Vec<(usize, &'static str)>,
}

fn escape_field(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
        .replace('\r', "\\r")
}

fn random_text(rng: &mut impl RngCore, max: usize) -> String {
    const POOL: &[&str] = &[
        "a", "b", "z", " ", "é", "漢", "🙂", "\t", "\n", "\r", "\\", "\\t", "\"", "{", "[", ",",
    ];
    let n = below(rng, max + 1);
    (0..n).map(|_| POOL[below(rng, POOL.len())]).collect()
}

/// `rows` data lines after the header; about one in six is corrupted in one
/// of five ways.
pub fn generate_tsv(rng: &mut impl RngCore, rows: usize) -> TsvCase {
    let mut bytes = b"content\tcontext\tmeta\n".to_vec();
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for i in 0..rows {
        let line = i + 2;
        let is_file = chance(rng, 15);
        let content = if is_file {
            let pages = 1 + below(rng, 3);
            format!(
                "[{}]",
                (0..pages)
                    .map(|p| format!("\"doc{i}/page{p}.png\""))
                    .collect::<Vec<_>>()
                    .join(",")
            )
        } else {
            format!("row{i} {}", random_text(rng, 12))
        };
        let context = if chance(rng, 30) {
            None
        } else {
            Some(format!("ctx {}", random_text(rng, 8)))
        };
        let meta = format!(r#"{{"row":{i},"tag":"t{}"}}"#, below(rng, 5));
        let cells = |c: &str, x: &str, m: &str| {
            format!("{}\t{}\t{}\n", escape_field(c), escape_field(x), escape_field(m))
        };
        let ctx = context.clone().unwrap_or_default();
        match below(rng, 30) {
            0 => {
                bytes.extend(format!("{}\t{}\n", escape_field(&content), escape_field(&meta)).bytes());
                rejected.push((line, "column-count"));
            }
            1 => {
                bytes.extend(format!("{}\t{}\t{}\textra\n", escape_field(&content), escape_field(&ctx), escape_field(&meta)).bytes());
                rejected.push((line, "column-count"));
            }
            2 => {
                let blank = [" ", "", "\\t "][below(rng, 3)];
                bytes.extend(format!("{blank}\t{}\t{}\n", escape_field(&ctx), escape_field(&meta)).bytes());
                rejected.push((line, "empty-content"));
            }
            3 => {
                bytes.extend(cells(&content, &ctx, "{\"row\":").bytes());
                rejected.push((line, "invalid-meta"));
            }
            4 => {
                let mut raw = cells(&content, &ctx, &meta).into_bytes();
                raw.insert(1, 0xff);
                bytes.extend(raw);
                rejected.push((line, "invalid-utf8"));
            }
            5 => {
                bytes.extend(cells("[]", &ctx, &meta).bytes());
                rejected.push((line, "empty-content"));
            }
            _ => {
                bytes.extend(cells(&content, &ctx, &meta).bytes());
                accepted.push(ExpectedRow {
                    content,
                    context: context.filter(|c| !c.is_empty()),
                    meta,
                    is_file,
                });
            }
        }
    }
    TsvCase {
        bytes,
        accepted,
        rejected,
    }
}
