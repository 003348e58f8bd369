//! Bearer tokens: 256 random bits, hex-encoded, held in memory.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::RngCore;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SessionToken {
    pub token: String,
    pub user_id: i64,
    pub expires_at: i64,
}

#[derive(Debug)]
pub struct TokenStore {
    ttl_seconds: i64,
    tokens: Mutex<HashMap<String, SessionToken>>,
}

impl TokenStore {
    pub fn new(ttl_seconds: i64) -> Self {
        TokenStore {
            ttl_seconds,
            tokens: Mutex::new(HashMap::new()),
        }
    }

    pub fn issue(&self, user_id: i64, now: i64) -> SessionToken {
        let mut bytes = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut bytes);
        let token = SessionToken {
            token: hex::encode(bytes),
            user_id,
            expires_at: now + self.ttl_seconds,
        };
        let mut tokens = self.lock();
        tokens.retain(|_, t| t.expires_at > now);
        tokens.insert(token.token.clone(), token.clone());
        token
    }

    /// The owner of a live token.
    pub fn resolve(&self, token: &str, now: i64) -> Option<i64> {
        let mut tokens = self.lock();
        match tokens.get(token) {
            Some(t) if t.expires_at > now => Some(t.user_id),
            Some(_) => {
                tokens.remove(token);
                None
            }
            None => None,
        }
    }

    pub fn revoke(&self, token: &str) -> bool {
        self.lock().remove(token).is_some()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, SessionToken>> {
        self.tokens.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifecycle() {
        let store = TokenStore::new(60);
        let t = store.issue(7, 1000);
        assert_eq!(t.token.len(), 64);
        assert_eq!(store.resolve(&t.token, 1059), Some(7));
        assert_eq!(store.resolve(&t.token, 1060), None);
        assert_eq!(store.resolve(&t.token, 1000), None);

        let t = store.issue(7, 2000);
        assert!(store.revoke(&t.token));
        assert_eq!(store.resolve(&t.token, 2000), None);
        assert!(!store.revoke(&t.token));
    }

    #[test]
    fn tokens_differ() {
        let store = TokenStore::new(60);
        let a = store.issue(1, 0);
        let b = store.issue(1, 0);
        assert_ne!(a.token, b.token);
    }
}
