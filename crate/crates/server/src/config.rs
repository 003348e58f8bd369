//! Server configuration: one TOML file, overridable from the environment.
//!
//! ```toml
//! bind = "127.0.0.1:8080"
//! store = "chainanno.db"
//! protocol = "protocol.ap.json"
//! static_dir = "ui/dist"
//! lease_minutes = 1440
//! token_hours = 12
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

pub const ENV_PREFIX: &str = "CHAINANNO_";

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: String,
    pub store: PathBuf,
    pub protocol: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    /// Written to the options table at startup when set.
    pub lease_minutes: Option<i64>,
    pub token_hours: i64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            bind: "127.0.0.1:8080".into(),
            store: "chainanno.db".into(),
            protocol: None,
            static_dir: None,
            lease_minutes: None,
            token_hours: 12,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{var}: {message}")]
    Env { var: String, message: String },
}

impl Config {
    /// Reads `path` (if given), then applies `CHAINANNO_*` variables from the
    /// process environment.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let env: HashMap<String, String> = std::env::vars().collect();
        Self::load_with_env(path, &env)
    }

    pub fn load_with_env(
        path: Option<&Path>,
        env: &HashMap<String, String>,
    ) -> Result<Config, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.to_path_buf(),
                    source,
                })?;
                let mut c: Config = toml::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: path.to_path_buf(),
                    source,
                })?;
                let base = path.parent().unwrap_or(Path::new(""));
                c.store = base.join(&c.store);
                c.protocol = c.protocol.map(|p| base.join(p));
                c.static_dir = c.static_dir.map(|p| base.join(p));
                c
            }
            None => Config::default(),
        };
        config.apply_env(env)?;
        Ok(config)
    }

    fn apply_env(&mut self, env: &HashMap<String, String>) -> Result<(), ConfigError> {
        let get = |name: &str| env.get(&format!("{ENV_PREFIX}{name}")).cloned();
        let int = |name: &str, v: String| {
            v.parse::<i64>().map_err(|e| ConfigError::Env {
                var: format!("{ENV_PREFIX}{name}"),
                message: e.to_string(),
            })
        };
        if let Some(v) = get("BIND") {
            self.bind = v;
        }
        if let Some(v) = get("STORE") {
            self.store = v.into();
        }
        if let Some(v) = get("PROTOCOL") {
            self.protocol = Some(v.into());
        }
        if let Some(v) = get("STATIC_DIR") {
            self.static_dir = Some(v.into());
        }
        if let Some(v) = get("LEASE_MINUTES") {
            self.lease_minutes = Some(int("LEASE_MINUTES", v)?);
        }
        if let Some(v) = get("TOKEN_HOURS") {
            self.token_hours = int("TOKEN_HOURS", v)?;
        }
        Ok(())
    }
}
