use password_hash::rand_core::OsRng;
use password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use rusqlite::{params, Connection, ErrorCode, OptionalExtension};
use serde::{Deserialize, Serialize};

use super::{Datastore, Result, StoreError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Annotator,
    Administrator,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Annotator => "annotator",
            Role::Administrator => "administrator",
        }
    }

    fn parse(s: &str) -> Result<Role> {
        match s {
            "annotator" => Ok(Role::Annotator),
            "administrator" => Ok(Role::Administrator),
            other => Err(StoreError::Corrupt(format!("role `{other}`"))),
        }
    }
}

/// Users as stored; only the salted argon2 hash of the password is kept.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UserRecord {
    pub id: i64,
    pub username: String,
    pub email: String,
    pub full_name: String,
    #[serde(skip)]
    pub password_hash: String,
    pub role: Role,
    pub active: bool,
}

#[derive(Clone, Debug)]
pub struct NewUser {
    pub username: String,
    pub email: String,
    pub full_name: String,
    pub password: String,
    pub role: Role,
    pub active: bool,
}

impl NewUser {
    /// Self-registration defaults: an inactive annotator.
    pub fn annotator(username: impl Into<String>, password: impl Into<String>) -> Self {
        NewUser {
            username: username.into(),
            email: String::new(),
            full_name: String::new(),
            password: password.into(),
            role: Role::Annotator,
            active: false,
        }
    }

    pub fn administrator(username: impl Into<String>, password: impl Into<String>) -> Self {
        NewUser {
            role: Role::Administrator,
            active: true,
            ..NewUser::annotator(username, password)
        }
    }

    pub fn active(mut self, active: bool) -> Self {
        self.active = active;
        self
    }

    pub fn contact(mut self, email: impl Into<String>, full_name: impl Into<String>) -> Self {
        self.email = email.into();
        self.full_name = full_name.into();
        self
    }
}

pub(super) fn hash_password(password: &str) -> Result<String> {
    let salt = SaltString::generate(&mut OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| StoreError::Hash(e.to_string()))
}

fn verify_password(password: &str, hash: &str) -> bool {
    PasswordHash::new(hash)
        .map(|parsed| {
            Argon2::default()
                .verify_password(password.as_bytes(), &parsed)
                .is_ok()
        })
        .unwrap_or(false)
}

pub(super) fn load_user(conn: &Connection, id: i64) -> Result<Option<UserRecord>> {
    query_user(conn, "id = ?1", params![id])
}

fn query_user(
    conn: &Connection,
    filter: &str,
    args: impl rusqlite::Params,
) -> Result<Option<UserRecord>> {
    let sql = format!(
        "SELECT id, username, email, full_name, password_hash, role, active FROM users WHERE {filter}"
    );
    let row = conn
        .query_row(&sql, args, |r| {
            Ok((
                r.get::<_, i64>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, String>(4)?,
                r.get::<_, String>(5)?,
                r.get::<_, bool>(6)?,
            ))
        })
        .optional()?;
    row.map(|(id, username, email, full_name, password_hash, role, active)| {
        Ok(UserRecord {
            id,
            username,
            email,
            full_name,
            password_hash,
            role: Role::parse(&role)?,
            active,
        })
    })
    .transpose()
}

impl Datastore {
    pub fn create_user(&self, user: NewUser) -> Result<UserRecord> {
        if user.username.trim().is_empty() {
            return Err(StoreError::BadInput("username must not be empty".into()));
        }
        if user.password.is_empty() {
            return Err(StoreError::BadInput("password must not be empty".into()));
        }
        // Hash before taking the lock.
        let hash = hash_password(&user.password)?;
        let conn = self.conn();
        let res = conn.execute(
            "INSERT INTO users (username, email, full_name, password_hash, role, active)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![
                user.username,
                user.email,
                user.full_name,
                hash,
                user.role.as_str(),
                user.active
            ],
        );
        match res {
            Err(rusqlite::Error::SqliteFailure(e, _)) if e.code == ErrorCode::ConstraintViolation => {
                return Err(StoreError::DuplicateUsername(user.username));
            }
            other => {
                other?;
            }
        }
        let id = conn.last_insert_rowid();
        Ok(load_user(&conn, id)?.expect("user just inserted"))
    }

    /// Registration creates an inactive annotator account.
    pub fn register(
        &self,
        username: &str,
        email: &str,
        full_name: &str,
        password: &str,
    ) -> Result<UserRecord> {
        self.create_user(NewUser::annotator(username, password).contact(email, full_name))
    }

    pub fn authenticate(&self, username: &str, password: &str) -> Result<UserRecord> {
        let user = {
            let conn = self.conn();
            query_user(&conn, "username = ?1", params![username])?
        };
        let Some(user) = user else {
            return Err(StoreError::InvalidCredentials);
        };
        if !verify_password(password, &user.password_hash) {
            return Err(StoreError::InvalidCredentials);
        }
        if !user.active {
            return Err(StoreError::UserInactive(user.id));
        }
        Ok(user)
    }

    pub fn get_user(&self, id: i64) -> Result<UserRecord> {
        load_user(&self.conn(), id)?.ok_or(StoreError::UnknownUser(id.to_string()))
    }

    pub fn find_user(&self, username: &str) -> Result<Option<UserRecord>> {
        query_user(&self.conn(), "username = ?1", params![username])
    }

    pub fn list_users(&self) -> Result<Vec<UserRecord>> {
        let conn = self.conn();
        let ids: Vec<i64> = conn
            .prepare("SELECT id FROM users ORDER BY id")?
            .query_map([], |r| r.get(0))?
            .collect::<rusqlite::Result<_>>()?;
        ids.into_iter()
            .map(|id| load_user(&conn, id).map(|u| u.expect("id just listed")))
            .collect()
    }

    pub fn set_active(&self, id: i64, active: bool) -> Result<()> {
        let n = self
            .conn()
            .execute("UPDATE users SET active = ?1 WHERE id = ?2", params![active, id])?;
        if n == 0 {
            return Err(StoreError::UnknownUser(id.to_string()));
        }
        Ok(())
    }

    pub fn set_password(&self, id: i64, password: &str) -> Result<()> {
        if password.is_empty() {
            return Err(StoreError::BadInput("password must not be empty".into()));
        }
        let hash = hash_password(password)?;
        let n = self.conn().execute(
            "UPDATE users SET password_hash = ?1 WHERE id = ?2",
            params![hash, id],
        )?;
        if n == 0 {
            return Err(StoreError::UnknownUser(id.to_string()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_needs_activation() {
        let s = Datastore::in_memory().unwrap();
        let u = s.register("ann", "ann@example.org", "Ann N.", "secret").unwrap();
        assert!(!u.active);
        assert_eq!(u.role, Role::Annotator);
        assert_eq!(s.authenticate("ann", "secret").unwrap_err().code(), "user-inactive");
        s.set_active(u.id, true).unwrap();
        assert_eq!(s.authenticate("ann", "secret").unwrap().id, u.id);
        s.set_active(u.id, false).unwrap();
        assert_eq!(s.authenticate("ann", "secret").unwrap_err().code(), "user-inactive");
    }

    #[test]
    fn wrong_password_and_unknown_user_look_the_same() {
        let s = Datastore::in_memory().unwrap();
        s.create_user(NewUser::administrator("root", "pw")).unwrap();
        assert_eq!(s.authenticate("root", "nope").unwrap_err().code(), "invalid-credentials");
        assert_eq!(s.authenticate("ghost", "pw").unwrap_err().code(), "invalid-credentials");
    }

    #[test]
    fn password_change_and_hashing() {
        let s = Datastore::in_memory().unwrap();
        let u = s.create_user(NewUser::annotator("a", "old").active(true)).unwrap();
        assert!(u.password_hash.starts_with("$argon2"));
        assert!(!u.password_hash.contains("old"));
        s.set_password(u.id, "new").unwrap();
        assert!(s.authenticate("a", "old").is_err());
        assert!(s.authenticate("a", "new").is_ok());
        assert_eq!(s.set_password(99, "x").unwrap_err().code(), "unknown-user");
        assert_eq!(s.set_active(99, true).unwrap_err().code(), "unknown-user");
    }

    #[test]
    fn usernames_are_unique() {
        let s = Datastore::in_memory().unwrap();
        s.register("a", "", "", "pw").unwrap();
        assert_eq!(s.register("a", "", "", "pw").unwrap_err().code(), "duplicate-username");
    }
}
