//! Persistent tables: `data`, `annotations`, `users` and `options`, plus the
//! assignment leases that back the annotators-per-instance policy.
//!
//! Everything lives in one SQLite file. All operations go through a single
//! connection behind a mutex, so assignment and commit decisions observe a
//! total order.

mod export;
pub mod tsv;
mod users;

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use rusqlite::{params, Connection, OptionalExtension, TransactionBehavior};
use serde::{Deserialize, Serialize};

pub use export::Tables;
pub use tsv::{ImportReport, Rejected};
pub use users::{NewUser, Role, UserRecord};

use crate::engine::{AnnotationBundle, Content, InstancePayload, InstanceRef, SavedAnswer};

/// Seconds since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> i64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: i64) -> Self {
        ManualClock(AtomicI64::new(start))
    }

    pub fn advance_minutes(&self, minutes: i64) {
        self.0.fetch_add(minutes * 60, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now(&self) -> i64 {
        (**self).now()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("user {0} is inactive")]
    UserInactive(i64),
    #[error("no user {0}")]
    UnknownUser(String),
    #[error("username `{0}` is taken")]
    DuplicateUsername(String),
    #[error("invalid username or password")]
    InvalidCredentials,
    #[error("user {user} holds no active assignment for instance {instance}")]
    NotAssigned { user: i64, instance: i64 },
    #[error("user {user} already committed instance {instance}")]
    DuplicateCommit { user: i64, instance: i64 },
    #[error("no instance {0}")]
    UnknownInstance(i64),
    #[error("{0}")]
    InvalidOptions(String),
    #[error("{0}")]
    BadInput(String),
    #[error("password hashing failed: {0}")]
    Hash(String),
    #[error("corrupt row: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Sqlite(#[from] rusqlite::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::UserInactive(_) => "user-inactive",
            StoreError::UnknownUser(_) => "unknown-user",
            StoreError::DuplicateUsername(_) => "duplicate-username",
            StoreError::InvalidCredentials => "invalid-credentials",
            StoreError::NotAssigned { .. } => "not-assigned",
            StoreError::DuplicateCommit { .. } => "duplicate-commit",
            StoreError::UnknownInstance(_) => "unknown-instance",
            StoreError::InvalidOptions(_) => "invalid-options",
            StoreError::BadInput(_) => "bad-input",
            StoreError::Hash(_) => "hash-failed",
            StoreError::Corrupt(_) => "corrupt-row",
            StoreError::Sqlite(_) => "storage",
            StoreError::Io(_) => "io",
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    Text,
    File,
}

impl InstanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InstanceKind::Text => "text",
            InstanceKind::File => "file",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(InstanceKind::Text),
            "file" => Ok(InstanceKind::File),
            other => Err(StoreError::Corrupt(format!("instance kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Lease {
    pub user_id: i64,
    pub expires_at: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InstanceRecord {
    pub id: i64,
    pub kind: InstanceKind,
    /// Text, or a JSON list of page-image references for file instances.
    pub content: String,
    pub context: Option<String>,
    pub meta: String,
    pub completed_by: BTreeSet<i64>,
    pub assigned_to: Vec<Lease>,
}

impl InstanceRecord {
    /// Engine view of the instance; meta stays server-side.
    pub fn to_instance_ref(&self) -> InstanceRef {
        let content = match self.kind {
            InstanceKind::Text => Some(Content::Text(self.content.clone())),
            InstanceKind::File => tsv::page_list(&self.content).map(Content::File),
        };
        InstanceRef {
            id: self.id,
            payload: content.map(|content| InstancePayload {
                content,
                context: self.context.clone(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnnotationRecord {
    pub instance_id: i64,
    pub user_id: i64,
    pub answers: Vec<SavedAnswer>,
    pub committed_at: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionsRecord {
    pub annotators_per_instance: i64,
    pub assignment_lease_minutes: i64,
}

impl Default for OptionsRecord {
    fn default() -> Self {
        OptionsRecord {
            annotators_per_instance: 1,
            assignment_lease_minutes: 1440,
        }
    }
}

impl OptionsRecord {
    pub fn check(&self) -> Result<()> {
        if self.annotators_per_instance < 1 {
            return Err(StoreError::InvalidOptions(
                "annotators_per_instance must be at least 1".into(),
            ));
        }
        if self.assignment_lease_minutes < 1 {
            return Err(StoreError::InvalidOptions(
                "assignment_lease_minutes must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub instance: InstanceRecord,
    pub lease_expires_at: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UserStats {
    pub user_id: i64,
    pub username: String,
    pub annotations: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InstanceStats {
    pub instance_id: i64,
    pub completions: i64,
    pub active_leases: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub users: Vec<UserStats>,
    pub instances: Vec<InstanceStats>,
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS data (
    id INTEGER PRIMARY KEY,
    kind TEXT NOT NULL,
    content TEXT NOT NULL,
    context TEXT,
    meta TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS annotations (
    instance_id INTEGER NOT NULL REFERENCES data(id),
    user_id INTEGER NOT NULL REFERENCES users(id),
    answers TEXT NOT NULL,
    committed_at INTEGER NOT NULL,
    PRIMARY KEY (instance_id, user_id)
);
CREATE TABLE IF NOT EXISTS users (
    id INTEGER PRIMARY KEY,
    username TEXT NOT NULL UNIQUE,
    email TEXT NOT NULL,
    full_name TEXT NOT NULL,
    password_hash TEXT NOT NULL,
    role TEXT NOT NULL,
    active INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS options (
    id INTEGER PRIMARY KEY CHECK (id = 1),
    annotators_per_instance INTEGER NOT NULL,
    assignment_lease_minutes INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS assignments (
    instance_id INTEGER NOT NULL REFERENCES data(id),
    user_id INTEGER NOT NULL REFERENCES users(id),
    lease_expiry INTEGER NOT NULL,
    PRIMARY KEY (instance_id, user_id)
);
CREATE INDEX IF NOT EXISTS annotations_by_user ON annotations(user_id);
";

pub struct Datastore {
    conn: Mutex<Connection>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Datastore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Datastore").finish_non_exhaustive()
    }
}

impl Datastore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with_clock(path, Arc::new(SystemClock))
    }

    pub fn open_with_clock(path: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        Self::init(conn, clock)
    }

    pub fn in_memory() -> Result<Self> {
        Self::in_memory_with_clock(Arc::new(SystemClock))
    }

    pub fn in_memory_with_clock(clock: Arc<dyn Clock>) -> Result<Self> {
        Self::init(Connection::open_in_memory()?, clock)
    }

    fn init(conn: Connection, clock: Arc<dyn Clock>) -> Result<Self> {
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Datastore {
            conn: Mutex::new(conn),
            clock,
        })
    }

    fn conn(&self) -> MutexGuard<'_, Connection> {
        // A panic while holding the lock cannot leave a half-applied
        // transaction behind: rusqlite rolls back on drop.
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    // ---- data ------------------------------------------------------------

    /// Inserts every valid row; bad rows are reported with their line number.
    pub fn import_tsv(&self, input: impl BufRead) -> Result<ImportReport> {
        let (rows, rejected) = tsv::read_rows(input).map_err(StoreError::BadInput)?;
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        {
            let mut stmt = tx.prepare(
                "INSERT INTO data (kind, content, context, meta) VALUES (?1, ?2, ?3, ?4)",
            )?;
            for r in &rows {
                stmt.execute(params![r.kind.as_str(), r.content, r.context, r.meta])?;
            }
        }
        tx.commit()?;
        Ok(ImportReport {
            inserted: rows.len(),
            rejected,
        })
    }

    pub fn instance_count(&self) -> Result<i64> {
        Ok(self
            .conn()
            .query_row("SELECT COUNT(*) FROM data", [], |r| r.get(0))?)
    }

    pub fn get_instance(&self, id: i64) -> Result<InstanceRecord> {
        let conn = self.conn();
        load_instance(&conn, id, self.now())?.ok_or(StoreError::UnknownInstance(id))
    }

    pub fn list_instances(&self) -> Result<Vec<InstanceRecord>> {
        let conn = self.conn();
        let ids: Vec<i64> = conn
            .prepare("SELECT id FROM data ORDER BY id")?
            .query_map([], |r| r.get(0))?
            .collect::<rusqlite::Result<_>>()?;
        let now = self.now();
        ids.into_iter()
            .map(|id| load_instance(&conn, id, now).map(|r| r.expect("id just listed")))
            .collect()
    }

    // ---- options ---------------------------------------------------------

    pub fn options(&self) -> Result<OptionsRecord> {
        read_options(&self.conn())
    }

    pub fn set_options(&self, options: OptionsRecord) -> Result<()> {
        options.check()?;
        self.conn().execute(
            "INSERT INTO options (id, annotators_per_instance, assignment_lease_minutes)
             VALUES (1, ?1, ?2)
             ON CONFLICT(id) DO UPDATE SET
                annotators_per_instance = excluded.annotators_per_instance,
                assignment_lease_minutes = excluded.assignment_lease_minutes",
            params![
                options.annotators_per_instance,
                options.assignment_lease_minutes
            ],
        )?;
        Ok(())
    }

    // ---- assignment ------------------------------------------------------

    /// Leases the lowest-id instance the user may still annotate, or `None`.
    ///
    /// Eligible instances are neither completed nor held by the user and have
    /// fewer than K completions plus unexpired leases.
    pub fn next_instance(&self, user_id: i64) -> Result<Option<Assignment>> {
        let mut conn = self.conn();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let user = users::load_user(&tx, user_id)?.ok_or(StoreError::UnknownUser(user_id.to_string()))?;
        if !user.active {
            return Err(StoreError::UserInactive(user_id));
        }
        let now = self.now();
        tx.execute("DELETE FROM assignments WHERE lease_expiry <= ?1", [now])?;
        let opts = read_options(&tx)?;

        let id: Option<i64> = tx
            .query_row(
                "SELECT d.id FROM data d
                 WHERE NOT EXISTS (SELECT 1 FROM annotations a
                                   WHERE a.instance_id = d.id AND a.user_id = ?1)
                   AND NOT EXISTS (SELECT 1 FROM assignments s
                                   WHERE s.instance_id = d.id AND s.user_id = ?1)
                   AND (SELECT COUNT(*) FROM annotations a WHERE a.instance_id = d.id)
                     + (SELECT COUNT(*) FROM assignments s WHERE s.instance_id = d.id) < ?2
                 ORDER BY d.id
                 LIMIT 1",
                params![user_id, opts.annotators_per_instance],
                |r| r.get(0),
            )
            .optional()?;
        let Some(id) = id else {
            tx.commit()?;
            return Ok(None);
        };
        let expires = now + opts.assignment_lease_minutes * 60;
        tx.execute(
            "INSERT INTO assignments (instance_id, user_id, lease_expiry) VALUES (?1, ?2, ?3)",
            params![id, user_id, expires],
        )?;
        let instance = load_instance(&tx, id, now)?.expect("instance selected in this transaction");
        tx.commit()?;
        Ok(Some(Assignment {
            instance,
            lease_expires_at: expires,
        }))
    }

    /// Unexpired leases the user holds, lowest instance id first. Read-only.
    pub fn held_assignments(&self, user_id: i64) -> Result<Vec<Assignment>> {
        let conn = self.conn();
        let now = self.now();
        let leases: Vec<(i64, i64)> = conn
            .prepare(
                "SELECT instance_id, lease_expiry FROM assignments
                 WHERE user_id = ?1 AND lease_expiry > ?2
                 ORDER BY instance_id",
            )?
            .query_map(params![user_id, now], |r| Ok((r.get(0)?, r.get(1)?)))?
            .collect::<rusqlite::Result<_>>()?;
        leases
            .into_iter()
            .map(|(id, expires)| {
                Ok(Assignment {
                    instance: load_instance(&conn, id, now)?.ok_or(StoreError::UnknownInstance(id))?,
                    lease_expires_at: expires,
                })
            })
            .collect()
    }

    /// Checks the preconditions of [`commit_bundle`](Self::commit_bundle)
    /// without writing anything.
    pub fn check_commit(&self, user_id: i64, instance_id: i64) -> Result<()> {
        let conn = self.conn();
        commit_preconditions(&conn, user_id, instance_id, self.now())
    }

    /// Persists a completed bundle and releases the user's lease, all in one
    /// transaction.
    pub fn commit_bundle(&self, user_id: i64, bundle: &AnnotationBundle) -> Result<AnnotationRecord> {
        self.commit_inner(user_id, bundle, false)
    }

    fn commit_inner(
        &self,
        user_id: i64,
        bundle: &AnnotationBundle,
        crash_before_commit: bool,
    ) -> Result<AnnotationRecord> {
        let mut conn = self.conn();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let now = self.now();
        commit_preconditions(&tx, user_id, bundle.instance_id, now)?;
        let answers = serde_json::to_string(&bundle.answers).expect("answers serialize");
        tx.execute(
            "INSERT INTO annotations (instance_id, user_id, answers, committed_at)
             VALUES (?1, ?2, ?3, ?4)",
            params![bundle.instance_id, user_id, answers, now],
        )?;
        if crash_before_commit {
            return Err(StoreError::Io(std::io::Error::other("simulated crash")));
        }
        tx.execute(
            "DELETE FROM assignments WHERE instance_id = ?1 AND user_id = ?2",
            params![bundle.instance_id, user_id],
        )?;
        tx.commit()?;
        Ok(AnnotationRecord {
            instance_id: bundle.instance_id,
            user_id,
            answers: bundle.answers.clone(),
            committed_at: now,
        })
    }

    pub fn annotations(&self) -> Result<Vec<AnnotationRecord>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT instance_id, user_id, answers, committed_at FROM annotations
             ORDER BY instance_id, user_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok((
                r.get::<_, i64>(0)?,
                r.get::<_, i64>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, i64>(3)?,
            ))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (instance_id, user_id, answers, committed_at) = row?;
            out.push(AnnotationRecord {
                instance_id,
                user_id,
                answers: serde_json::from_str(&answers)
                    .map_err(|e| StoreError::Corrupt(format!("answers: {e}")))?,
                committed_at,
            });
        }
        Ok(out)
    }

    pub fn annotation(&self, instance_id: i64, user_id: i64) -> Result<Option<AnnotationRecord>> {
        Ok(self
            .annotations()?
            .into_iter()
            .find(|a| a.instance_id == instance_id && a.user_id == user_id))
    }

    pub fn count_annotations(&self, user_id: i64) -> Result<i64> {
        let conn = self.conn();
        users::load_user(&conn, user_id)?.ok_or(StoreError::UnknownUser(user_id.to_string()))?;
        Ok(conn.query_row(
            "SELECT COUNT(*) FROM annotations WHERE user_id = ?1",
            [user_id],
            |r| r.get(0),
        )?)
    }

    /// Per-user annotation counts and per-instance completion counts.
    pub fn stats(&self) -> Result<Stats> {
        let conn = self.conn();
        let now = self.now();
        let users = conn
            .prepare(
                "SELECT u.id, u.username,
                        (SELECT COUNT(*) FROM annotations a WHERE a.user_id = u.id)
                 FROM users u ORDER BY u.id",
            )?
            .query_map([], |r| {
                Ok(UserStats {
                    user_id: r.get(0)?,
                    username: r.get(1)?,
                    annotations: r.get(2)?,
                })
            })?
            .collect::<rusqlite::Result<_>>()?;
        let instances = conn
            .prepare(
                "SELECT d.id,
                        (SELECT COUNT(*) FROM annotations a WHERE a.instance_id = d.id),
                        (SELECT COUNT(*) FROM assignments s
                         WHERE s.instance_id = d.id AND s.lease_expiry > ?1)
                 FROM data d ORDER BY d.id",
            )?
            .query_map([now], |r| {
                Ok(InstanceStats {
                    instance_id: r.get(0)?,
                    completions: r.get(1)?,
                    active_leases: r.get(2)?,
                })
            })?
            .collect::<rusqlite::Result<_>>()?;
        Ok(Stats { users, instances })
    }
}

fn read_options(conn: &Connection) -> Result<OptionsRecord> {
    Ok(conn
        .query_row(
            "SELECT annotators_per_instance, assignment_lease_minutes FROM options WHERE id = 1",
            [],
            |r| {
                Ok(OptionsRecord {
                    annotators_per_instance: r.get(0)?,
                    assignment_lease_minutes: r.get(1)?,
                })
            },
        )
        .optional()?
        .unwrap_or_default())
}

fn commit_preconditions(conn: &Connection, user_id: i64, instance_id: i64, now: i64) -> Result<()> {
    let exists: bool = conn.query_row(
        "SELECT EXISTS (SELECT 1 FROM data WHERE id = ?1)",
        [instance_id],
        |r| r.get(0),
    )?;
    if !exists {
        return Err(StoreError::UnknownInstance(instance_id));
    }
    let done: bool = conn.query_row(
        "SELECT EXISTS (SELECT 1 FROM annotations WHERE instance_id = ?1 AND user_id = ?2)",
        params![instance_id, user_id],
        |r| r.get(0),
    )?;
    if done {
        return Err(StoreError::DuplicateCommit {
            user: user_id,
            instance: instance_id,
        });
    }
    let held: bool = conn.query_row(
        "SELECT EXISTS (SELECT 1 FROM assignments
                        WHERE instance_id = ?1 AND user_id = ?2 AND lease_expiry > ?3)",
        params![instance_id, user_id, now],
        |r| r.get(0),
    )?;
    if !held {
        return Err(StoreError::NotAssigned {
            user: user_id,
            instance: instance_id,
        });
    }
    Ok(())
}

fn load_instance(conn: &Connection, id: i64, now: i64) -> Result<Option<InstanceRecord>> {
    let row = conn
        .query_row(
            "SELECT kind, content, context, meta FROM data WHERE id = ?1",
            [id],
            |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, Option<String>>(2)?,
                    r.get::<_, String>(3)?,
                ))
            },
        )
        .optional()?;
    let Some((kind, content, context, meta)) = row else {
        return Ok(None);
    };
    let completed_by = conn
        .prepare("SELECT user_id FROM annotations WHERE instance_id = ?1 ORDER BY user_id")?
        .query_map([id], |r| r.get(0))?
        .collect::<rusqlite::Result<_>>()?;
    let assigned_to = conn
        .prepare(
            "SELECT user_id, lease_expiry FROM assignments
             WHERE instance_id = ?1 AND lease_expiry > ?2 ORDER BY user_id",
        )?
        .query_map([id, now], |r| {
            Ok(Lease {
                user_id: r.get(0)?,
                expires_at: r.get(1)?,
            })
        })?
        .collect::<rusqlite::Result<_>>()?;
    Ok(Some(InstanceRecord {
        id,
        kind: InstanceKind::parse(&kind)?,
        content,
        context,
        meta,
        completed_by,
        assigned_to,
    }))
}
