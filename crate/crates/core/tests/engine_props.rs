mod support;

use chainanno_core::engine::{
    replay, start_session, submit_answer, Answer, InstanceRef, SessionState, SessionStatus,
    TraceStep,
};
use chainanno_core::{compile, parse_protocol, ApiRegistry, MachineDefinition};
use proptest::prelude::*;
use support::{alphabet, random_trace, random_valid, rng, AbstractAnswer, GenProtocol, RefSession, RefStatus};

fn machine(p: &GenProtocol) -> MachineDefinition {
    compile(&parse_protocol(&p.source()).unwrap()).unwrap()
}

fn to_answer(a: &AbstractAnswer) -> Answer {
    serde_json::from_str(&a.wire()).unwrap()
}

fn assert_same(engine: &SessionState, reference: &RefSession, ctx: &str) {
    let status = match engine.status {
        SessionStatus::Running => RefStatus::Running,
        SessionStatus::Completed => RefStatus::Completed,
        SessionStatus::Failed => RefStatus::Failed,
    };
    assert_eq!(status, reference.status, "{ctx}");
    assert_eq!(engine.current, reference.current, "{ctx}");
    assert_eq!(engine.path, reference.path, "{ctx}");
    let saved: Vec<(String, u32, String)> = engine
        .buffer
        .iter()
        .map(|s| (s.state.clone(), s.visit, s.answer.to_cell()))
        .collect();
    assert_eq!(saved, reference.saved, "{ctx}");
    for (state, visits) in &reference.visits {
        assert_eq!(engine.visit_counts.get(state), Some(visits), "{ctx}: visits of {state}");
    }
}

/// Walks every answer sequence up to `depth`, comparing engine and reference
/// after each step.
fn explore(
    p: &GenProtocol,
    m: &MachineDefinition,
    engine: SessionState,
    reference: RefSession,
    depth: usize,
    visited: &mut usize,
) {
    *visited += 1;
    assert_same(&engine, &reference, &p.source());
    if depth == 0 || reference.status != RefStatus::Running {
        return;
    }
    for a in alphabet(&p.state(&reference.current).unwrap().kind) {
        let mut e = engine.clone();
        let mut r = reference.clone();
        submit_answer(m, &mut e, to_answer(&a)).unwrap();
        r.answer(p, &a);
        explore(p, m, e, r, depth - 1, visited);
    }
}

#[test]
fn small_machines_match_the_reference_simulator() {
    let mut r = rng(3);
    let mut visited = 0;
    for _ in 0..150 {
        let n = 1 + support::below(&mut r, 8);
        let p = random_valid(&mut r, n);
        let m = machine(&p);
        let engine = start_session(&m, InstanceRef::text(1, support::INSTANCE_TEXT));
        explore(&p, &m, engine, RefSession::start(&p), 4, &mut visited);
    }
    assert!(visited > 1000, "only {visited} sessions explored");
}

#[test]
fn wrong_answers_leave_the_session_untouched() {
    let mut r = rng(8);
    for _ in 0..100 {
        let p = random_valid(&mut r, 4);
        let m = machine(&p);
        let mut s = start_session(&m, InstanceRef::text(1, support::INSTANCE_TEXT));
        if s.status != SessionStatus::Running {
            continue;
        }
        let before = s.clone();
        for bad in [
            Answer::selection("not-an-option"),
            Answer::Page { index: 0 },
            Answer::Spans {
                spans: vec![chainanno_core::engine::Span {
                    start: 0,
                    end: 99,
                    label: "L0".into(),
                }],
            },
        ] {
            assert!(submit_answer(&m, &mut s, bad).is_err());
            assert_eq!(s, before);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_is_deterministic(seed in any::<u64>(), n in 1usize..=8) {
        let mut r = rng(seed);
        let p = random_valid(&mut r, n);
        let Some(trace) = random_trace(&mut r, &p, 40) else { return Ok(()); };
        let m = machine(&p);
        let steps: Vec<TraceStep> = serde_json::from_str(&support::trace_json(&trace)).unwrap();
        let run = || {
            replay(&m, InstanceRef::text(1, support::INSTANCE_TEXT), &steps, &ApiRegistry::new())
                .unwrap()
                .to_json()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn saved_answers_match_the_reference(seed in any::<u64>(), n in 1usize..=8) {
        let mut r = rng(seed);
        let p = random_valid(&mut r, n);
        let Some(trace) = random_trace(&mut r, &p, 40) else { return Ok(()); };
        let mut reference = RefSession::start(&p);
        for (_, a) in &trace {
            reference.answer(&p, a);
        }
        let steps: Vec<TraceStep> = serde_json::from_str(&support::trace_json(&trace)).unwrap();
        let s = replay(&machine(&p), InstanceRef::text(1, support::INSTANCE_TEXT), &steps, &ApiRegistry::new()).unwrap();
        assert_same(&s, &reference, &p.source());
        // Visit indices of one state count up from 1 without gaps.
        for st in &p.states {
            let visits: Vec<u32> = s.buffer.iter().filter(|a| a.state == st.name).map(|a| a.visit).collect();
            prop_assert!(visits.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn truncated_traces_never_complete(seed in any::<u64>(), n in 1usize..=8, cut in 0usize..40) {
        let mut r = rng(seed);
        let p = random_valid(&mut r, n);
        let Some(trace) = random_trace(&mut r, &p, 40).filter(|t| !t.is_empty()) else {
            return Ok(());
        };
        let cut = cut % trace.len();
        let steps: Vec<TraceStep> = serde_json::from_str(&support::trace_json(&trace[..cut])).unwrap();
        let e = replay(&machine(&p), InstanceRef::text(1, support::INSTANCE_TEXT), &steps, &ApiRegistry::new()).unwrap_err();
        prop_assert_eq!(e.code, "incomplete-trace");
    }
}

#[test]
fn failure_is_a_dead_state() {
    let m = compile(
        &parse_protocol(&support::protocol_source("ocr_boxes.ap.json")).unwrap(),
    )
    .unwrap();
    let missing = start_session(&m, InstanceRef::missing(4));
    assert_eq!(missing.status, SessionStatus::Failed);
    assert_eq!(missing.current, "failure");

    // `predict_boxes` is not registered here.
    let trace = [TraceStep::new("page", Answer::Page { index: 0 })];
    let pages = InstanceRef::pages(4, vec!["p.png".into()]);
    let e = replay(&m, pages.clone(), &trace, &ApiRegistry::new()).unwrap_err();
    assert_eq!(e.code, "unknown-api-function");

    let mut s = start_session(&m, pages);
    submit_answer(&m, &mut s, Answer::Page { index: 0 }).unwrap();
    let err = chainanno_core::engine::run_api_state(&m, &mut s, &ApiRegistry::new()).unwrap_err();
    assert_eq!(err.code(), "unknown-api-function");
    assert_eq!((s.current.as_str(), s.status), ("failure", SessionStatus::Failed));
    let frozen = s.clone();
    for a in [Answer::Ack, Answer::Boxes { boxes: vec![] }] {
        assert_eq!(submit_answer(&m, &mut s, a).unwrap_err().code(), "session-not-running");
    }
    assert_eq!(s, frozen);
}
