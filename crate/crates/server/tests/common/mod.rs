#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chainanno_core::store::{ManualClock, NewUser};
use chainanno_core::Datastore;
use chainanno_server::{plugins, router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const PASSWORD: &str = "correct horse";

pub struct Resp {
    pub status: StatusCode,
    pub body: Vec<u8>,
}

impl Resp {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }

    /// The `code` of an error body.
    pub fn code(&self) -> String {
        self.json()["code"].as_str().unwrap_or_default().to_string()
    }
}

pub struct TestApp {
    pub state: Arc<AppState>,
    pub router: Router,
    pub clock: Arc<ManualClock>,
}

/// Registry with the shipped plugins, an echo, and two that always fail.
pub fn test_registry() -> chainanno_core::ApiRegistry {
    let mut r = plugins::default_registry();
    r.register("echo", |i: &chainanno_core::InstanceRef, a: &[chainanno_core::SavedAnswer]| {
        Ok(serde_json::json!({"instance": i.id, "answers": a.len()}))
    })
    .unwrap();
    r.register("broken", |_: &_, _: &[_]| Err("model offline".to_string()))
        .unwrap();
    r.register("panics", |_: &_, _: &[_]| -> Result<Value, String> { panic!("bug") })
        .unwrap();
    r
}

impl TestApp {
    pub fn new() -> TestApp {
        let clock = Arc::new(ManualClock::new(1_700_000_000));
        let store = Datastore::in_memory_with_clock(clock.clone()).unwrap();
        let state = Arc::new(AppState::new(store, test_registry(), 3600));
        TestApp {
            router: router(state.clone(), None),
            state,
            clock,
        }
    }

    pub fn with_protocol(name: &str) -> TestApp {
        let app = TestApp::new();
        app.state
            .install_protocol_file(&protocol_path(name))
            .unwrap();
        app
    }

    pub async fn req(
        &self,
        method: &str,
        path: &str,
        token: Option<&str>,
        body: impl Into<Body>,
    ) -> Resp {
        let mut b = Request::builder().method(method).uri(path);
        if let Some(t) = token {
            b = b.header("authorization", format!("Bearer {t}"));
        }
        let resp = self
            .router
            .clone()
            .oneshot(b.body(body.into()).unwrap())
            .await
            .unwrap();
        let status = resp.status();
        let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        Resp { status, body }
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> Resp {
        self.req("GET", path, token, Body::empty()).await
    }

    pub async fn post(&self, path: &str, token: Option<&str>, body: &Value) -> Resp {
        self.req("POST", path, token, body.to_string()).await
    }

    pub fn add_user(&self, name: &str, admin: bool) -> i64 {
        let u = if admin {
            NewUser::administrator(name, PASSWORD)
        } else {
            NewUser::annotator(name, PASSWORD).active(true)
        };
        self.state.store.create_user(u).unwrap().id
    }

    pub async fn login(&self, name: &str) -> String {
        let r = self
            .post(
                "/auth/login",
                None,
                &serde_json::json!({"username": name, "password": PASSWORD}),
            )
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text());
        r.json()["token"].as_str().unwrap().to_string()
    }

    pub fn load_texts(&self, texts: &[&str]) {
        let mut tsv = String::from("content\tcontext\tmeta\n");
        for t in texts {
            tsv.push_str(&format!("{t}\t\t{{}}\n"));
        }
        let report = self.state.store.import_tsv(tsv.as_bytes()).unwrap();
        assert!(report.rejected.is_empty());
    }

    /// Everything an endpoint could change, for before/after comparisons.
    pub fn snapshot(&self) -> String {
        let t = self.state.store.export_tables().unwrap();
        let stats = serde_json::to_string(&self.state.store.stats().unwrap()).unwrap();
        format!("{}{}{}{}{}", t.data, t.annotations, t.users, t.options, stats)
    }
}

pub fn protocol_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../protocols")
        .join(name)
}
