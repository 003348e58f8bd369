//! Routes, shared state and request authentication.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequestParts, Path as UrlPath, Query, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chainanno_core::engine::{finish_bundle, replay, SavedAnswer, TraceStep};
use chainanno_core::protocol::ParseError;
use chainanno_core::registry::CallError;
use chainanno_core::store::{InstanceKind, InstanceRecord, OptionsRecord, Role, UserRecord};
use chainanno_core::{compile, parse_protocol, validate, ApiRegistry, Datastore, MachineDefinition};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::auth::TokenStore;
use crate::error::ApiError;

pub const UPLOAD_LIMIT_BYTES: usize = 64 * 1024 * 1024;

/// The protocol currently served to clients.
#[derive(Debug)]
pub struct Installed {
    pub machine: MachineDefinition,
    /// Serialized once so every `GET /protocol` returns the same bytes.
    pub json: String,
    pub state_order: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum InstallError {
    #[error("{0}")]
    Parse(ParseError),
    #[error("protocol has errors:\n{0}")]
    Invalid(String),
    #[error("stored annotations use states the new protocol lacks: {}", .0.join(", "))]
    Incompatible(Vec<String>),
    #[error(transparent)]
    Store(#[from] chainanno_core::store::StoreError),
}

#[derive(Debug)]
pub struct AppState {
    pub store: Arc<Datastore>,
    pub registry: Arc<ApiRegistry>,
    pub tokens: TokenStore,
    installed: RwLock<Option<Arc<Installed>>>,
}

impl AppState {
    pub fn new(store: Datastore, registry: ApiRegistry, token_ttl_seconds: i64) -> Self {
        AppState {
            store: Arc::new(store),
            registry: Arc::new(registry),
            tokens: TokenStore::new(token_ttl_seconds),
            installed: RwLock::new(None),
        }
    }

    pub fn installed(&self) -> Option<Arc<Installed>> {
        self.installed
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }

    /// Validates, compiles and installs a protocol. Existing annotations must
    /// only name states the new protocol still has.
    pub fn install_protocol(&self, source: &str) -> Result<Arc<Installed>, InstallError> {
        let protocol = parse_protocol(source).map_err(InstallError::Parse)?;
        let report = validate(&protocol);
        let machine = compile(&protocol).map_err(|_| InstallError::Invalid(report.to_lines()))?;

        let used: BTreeSet<String> = self
            .store
            .annotations()?
            .into_iter()
            .flat_map(|r| r.answers.into_iter().map(|a| a.state))
            .collect();
        let missing: Vec<String> = used
            .into_iter()
            .filter(|s| machine.state(s).is_none_or(|st| st.is_terminal()))
            .collect();
        if !missing.is_empty() {
            return Err(InstallError::Incompatible(missing));
        }

        let installed = Arc::new(Installed {
            json: machine.to_json(),
            state_order: machine.state_order(),
            machine,
        });
        *self.installed.write().unwrap_or_else(|p| p.into_inner()) = Some(installed.clone());
        Ok(installed)
    }

    pub fn install_protocol_file(&self, path: &Path) -> Result<Arc<Installed>, InstallError> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| InstallError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        self.install_protocol(&source)
    }
}

pub type Shared = Arc<AppState>;

/// Who may call an endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    Public,
    /// Any active, logged-in user.
    Annotator,
    Admin,
}

#[derive(Clone, Debug)]
pub struct Endpoint {
    pub method: Method,
    /// Route pattern; `{id}` and `{name}` are path parameters.
    pub path: &'static str,
    pub access: Access,
}

const fn ep(method: Method, path: &'static str, access: Access) -> Endpoint {
    Endpoint {
        method,
        path,
        access,
    }
}

/// Every route the router serves, with its access class.
pub const ENDPOINTS: &[Endpoint] = &[
    ep(Method::POST, "/auth/register", Access::Public),
    ep(Method::POST, "/auth/login", Access::Public),
    ep(Method::POST, "/auth/logout", Access::Annotator),
    ep(Method::GET, "/protocol", Access::Annotator),
    ep(Method::GET, "/instances/next", Access::Annotator),
    ep(Method::POST, "/annotations", Access::Annotator),
    ep(Method::POST, "/api/call/{name}", Access::Annotator),
    ep(Method::POST, "/data/upload", Access::Admin),
    ep(Method::GET, "/data/export", Access::Admin),
    ep(Method::GET, "/admin/options", Access::Admin),
    ep(Method::PUT, "/admin/options", Access::Admin),
    ep(Method::GET, "/admin/users", Access::Admin),
    ep(Method::POST, "/admin/users/{id}/activate", Access::Admin),
    ep(Method::POST, "/admin/users/{id}/deactivate", Access::Admin),
    ep(Method::POST, "/admin/users/{id}/password", Access::Admin),
    ep(Method::GET, "/admin/stats", Access::Admin),
];

pub fn router(state: Shared, static_dir: Option<&Path>) -> Router {
    let router = Router::new()
        .route("/auth/register", post(register))
        .route("/auth/login", post(login))
        .route("/auth/logout", post(logout))
        .route("/protocol", get(protocol))
        .route("/instances/next", get(next_instance))
        .route("/annotations", post(commit))
        .route("/api/call/{name}", post(call_api))
        .route(
            "/data/upload",
            post(upload).layer(DefaultBodyLimit::max(UPLOAD_LIMIT_BYTES)),
        )
        .route("/data/export", get(export))
        .route("/admin/options", get(get_options).put(put_options))
        .route("/admin/users", get(list_users))
        .route("/admin/users/{id}/activate", post(activate))
        .route("/admin/users/{id}/deactivate", post(deactivate))
        .route("/admin/users/{id}/password", post(set_password))
        .route("/admin/stats", get(stats));
    let router = match static_dir {
        Some(dir) => router.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => router.fallback(not_found),
    };
    router.with_state(state)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such endpoint")
}

/// Runs store or engine work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

fn parse_id(raw: &str) -> Result<i64, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::bad_request(format!("`{raw}` is not an id")))
}

// ---- authentication --------------------------------------------------------

/// An authenticated, active user.
#[derive(Debug, Clone)]
pub struct Caller {
    pub user: UserRecord,
    pub token: String,
}

impl FromRequestParts<Shared> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Shared) -> Result<Self, ApiError> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .ok_or_else(|| ApiError::unauthenticated("missing bearer token"))?;
        let token = header
            .to_str()
            .ok()
            .and_then(|h| h.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::unauthenticated("malformed Authorization header"))?
            .trim()
            .to_string();
        let state = state.clone();
        blocking(move || {
            let user_id = state
                .tokens
                .resolve(&token, state.store.now())
                .ok_or_else(|| ApiError::unauthenticated("token is invalid or expired"))?;
            let user = state
                .store
                .get_user(user_id)
                .map_err(|_| ApiError::unauthenticated("token owner no longer exists"))?;
            if !user.active {
                state.tokens.revoke(&token);
                return Err(ApiError::new(
                    StatusCode::UNAUTHORIZED,
                    "inactive",
                    "account is not active",
                ));
            }
            Ok(Caller { user, token })
        })
        .await
    }
}

/// A caller with the administrator role.
#[derive(Debug, Clone)]
pub struct Admin(pub Caller);

impl FromRequestParts<Shared> for Admin {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Shared) -> Result<Self, ApiError> {
        let caller = Caller::from_request_parts(parts, state).await?;
        if caller.user.role != Role::Administrator {
            return Err(ApiError::forbidden());
        }
        Ok(Admin(caller))
    }
}

// ---- auth endpoints ----------------------------------------------------------

#[derive(Deserialize)]
struct RegisterBody {
    username: String,
    password: String,
    #[serde(default)]
    email: String,
    #[serde(default)]
    full_name: String,
}

async fn register(State(state): State<Shared>, body: Bytes) -> Result<Json<UserRecord>, ApiError> {
    let b: RegisterBody = parse_body(&body)?;
    blocking(move || {
        Ok(Json(state.store.register(
            &b.username,
            &b.email,
            &b.full_name,
            &b.password,
        )?))
    })
    .await
}

#[derive(Deserialize)]
struct LoginBody {
    username: String,
    password: String,
}

#[derive(Serialize)]
struct LoginResponse {
    token: String,
    user_id: i64,
    role: Role,
    expires_at: i64,
}

async fn login(State(state): State<Shared>, body: Bytes) -> Result<Json<LoginResponse>, ApiError> {
    let b: LoginBody = parse_body(&body)?;
    blocking(move || {
        let user = state.store.authenticate(&b.username, &b.password)?;
        let token = state.tokens.issue(user.id, state.store.now());
        Ok(Json(LoginResponse {
            token: token.token,
            user_id: user.id,
            role: user.role,
            expires_at: token.expires_at,
        }))
    })
    .await
}

async fn logout(State(state): State<Shared>, caller: Caller) -> Json<Value> {
    state.tokens.revoke(&caller.token);
    Json(json!({"ok": true}))
}

// ---- annotation workflow ---------------------------------------------------

fn json_text(body: String) -> Response {
    ([(CONTENT_TYPE, "application/json")], body).into_response()
}

fn require_protocol(state: &AppState) -> Result<Arc<Installed>, ApiError> {
    state.installed().ok_or_else(|| {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "no-protocol",
            "no valid protocol is installed",
        )
    })
}

async fn protocol(State(state): State<Shared>, _caller: Caller) -> Result<Response, ApiError> {
    Ok(json_text(require_protocol(&state)?.json.clone()))
}

/// Client view of an instance; `meta` stays on the server.
fn instance_json(r: &InstanceRecord) -> Value {
    let content = match r.kind {
        InstanceKind::Text => Value::String(r.content.clone()),
        InstanceKind::File => serde_json::from_str(&r.content).unwrap_or(Value::Null),
    };
    json!({
        "id": r.id,
        "kind": r.kind,
        "content": content,
        "context": r.context,
    })
}

/// Hands out the caller's oldest held lease, or a new one.
async fn next_instance(State(state): State<Shared>, caller: Caller) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let user = caller.user.id;
        let held = state.store.held_assignments(user)?.into_iter().next();
        let assignment = match held {
            Some(a) => Some(a),
            None => state.store.next_instance(user)?,
        };
        Ok(Json(match assignment {
            Some(a) => json!({
                "instance": instance_json(&a.instance),
                "lease": {"expires_at": a.lease_expires_at},
            }),
            None => json!({"instance": null, "lease": null}),
        }))
    })
    .await
}

#[derive(Deserialize)]
struct CommitBody {
    instance_id: i64,
    answer_trace: Vec<TraceStep>,
}

async fn commit(
    State(state): State<Shared>,
    caller: Caller,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let b: CommitBody = parse_body(&body)?;
    let installed = require_protocol(&state)?;
    blocking(move || {
        let user = caller.user.id;
        state.store.check_commit(user, b.instance_id)?;
        let instance = state.store.get_instance(b.instance_id)?.to_instance_ref();
        let session = replay(&installed.machine, instance, &b.answer_trace, &state.registry)?;
        let bundle = finish_bundle(&session).map_err(|e| ApiError::internal(e.to_string()))?;
        let record = state.store.commit_bundle(user, &bundle)?;
        Ok(Json(json!({
            "instance_id": record.instance_id,
            "user_id": record.user_id,
            "answers": record.answers,
            "path": session.path,
            "committed_at": record.committed_at,
        })))
    })
    .await
}

#[derive(Deserialize)]
struct CallBody {
    instance_id: i64,
    #[serde(default)]
    answers: Vec<SavedAnswer>,
}

async fn call_api(
    State(state): State<Shared>,
    caller: Caller,
    UrlPath(name): UrlPath<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    if !state.registry.contains(&name) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown-api-function",
            format!("no API function named `{name}`"),
        ));
    }
    let b: CallBody = parse_body(&body)?;
    blocking(move || {
        state.store.check_commit(caller.user.id, b.instance_id)?;
        let instance = state.store.get_instance(b.instance_id)?.to_instance_ref();
        match state.registry.call(&name, &instance, &b.answers) {
            Ok(payload) => Ok(Json(payload)),
            Err(e @ CallError::Failed { .. }) => Err(ApiError::new(
                StatusCode::BAD_GATEWAY,
                "api-function-failed",
                e.to_string(),
            )),
            Err(e @ CallError::Unknown(_)) => Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown-api-function",
                e.to_string(),
            )),
        }
    })
    .await
}

// ---- data console ----------------------------------------------------------

async fn upload(
    State(state): State<Shared>,
    _admin: Admin,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let report = state.store.import_tsv(body.as_ref())?;
        Ok(Json(serde_json::to_value(report).expect("report serializes")))
    })
    .await
}

#[derive(Deserialize)]
struct ExportQuery {
    table: Option<String>,
}

/// `table` is one of `annotations` (default; one column per state and
/// visit), `annotations_raw`, `data`, `users` or `options`.
async fn export(
    State(state): State<Shared>,
    _admin: Admin,
    Query(q): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let table = q.table.unwrap_or_else(|| "annotations".into());
    let order = state
        .installed()
        .map(|i| i.state_order.clone())
        .unwrap_or_default();
    let body = blocking(move || {
        let store = &state.store;
        Ok(match table.as_str() {
            "annotations" => store.export_annotations(&order)?,
            "annotations_raw" => store.export_tables()?.annotations,
            "data" => store.export_tables()?.data,
            "users" => store.export_tables()?.users,
            "options" => store.export_tables()?.options,
            other => return Err(ApiError::bad_request(format!("unknown table `{other}`"))),
        })
    })
    .await?;
    Ok(([(CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")], body).into_response())
}

// ---- admin console ---------------------------------------------------------

async fn get_options(
    State(state): State<Shared>,
    _admin: Admin,
) -> Result<Json<OptionsRecord>, ApiError> {
    blocking(move || Ok(Json(state.store.options()?))).await
}

async fn put_options(
    State(state): State<Shared>,
    _admin: Admin,
    body: Bytes,
) -> Result<Json<OptionsRecord>, ApiError> {
    let options: OptionsRecord = parse_body(&body)?;
    blocking(move || {
        state.store.set_options(options)?;
        Ok(Json(state.store.options()?))
    })
    .await
}

async fn list_users(
    State(state): State<Shared>,
    _admin: Admin,
) -> Result<Json<Vec<UserRecord>>, ApiError> {
    blocking(move || Ok(Json(state.store.list_users()?))).await
}

async fn set_active(state: Shared, raw_id: String, active: bool) -> Result<Json<UserRecord>, ApiError> {
    let id = parse_id(&raw_id)?;
    blocking(move || {
        state.store.set_active(id, active)?;
        Ok(Json(state.store.get_user(id)?))
    })
    .await
}

async fn activate(
    State(state): State<Shared>,
    _admin: Admin,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<UserRecord>, ApiError> {
    set_active(state, id, true).await
}

async fn deactivate(
    State(state): State<Shared>,
    _admin: Admin,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<UserRecord>, ApiError> {
    set_active(state, id, false).await
}

#[derive(Deserialize)]
struct PasswordBody {
    password: String,
}

async fn set_password(
    State(state): State<Shared>,
    _admin: Admin,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let id = parse_id(&id)?;
    let b: PasswordBody = parse_body(&body)?;
    blocking(move || {
        state.store.set_password(id, &b.password)?;
        Ok(Json(json!({"ok": true})))
    })
    .await
}

async fn stats(State(state): State<Shared>, _admin: Admin) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(Json(serde_json::to_value(state.store.stats()?).expect("stats serialize"))))
        .await
}
