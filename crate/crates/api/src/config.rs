//! Server configuration: a TOML file plus environment overrides.
//!
//! ```toml
//! bind = "127.0.0.1:8080"
//! store = "/var/lib/subjekt/store.db"
//! static_dir = "/usr/share/subjekt/inbox"
//! auth = "header"
//! user_header = "X-User"
//!
//! [webhooks]
//! erp = "http://erp.local/orders"
//! ```

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid bind address {0:?}")]
    Bind(String),
    #[error("unsupported auth mode {0:?}, expected \"header\"")]
    Auth(String),
    #[error("store {path} is not writable: {reason}")]
    Store { path: PathBuf, reason: String },
    #[error("webhook {key:?} has invalid url {url:?}")]
    Webhook { key: String, url: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthMode {
    /// Trust the username in a request header set by a fronting proxy.
    Header,
}

impl std::str::FromStr for AuthMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "header" => Ok(AuthMode::Header),
            other => Err(ConfigError::Auth(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_store")]
    pub store: PathBuf,
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default = "default_auth")]
    pub auth: String,
    #[serde(default = "default_user_header")]
    pub user_header: String,
    #[serde(default = "default_webhook_timeout_ms")]
    pub webhook_timeout_ms: u64,
    /// Refinement `webhook:<key>` posts to `webhooks[key]`.
    #[serde(default)]
    pub webhooks: BTreeMap<String, String>,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}
fn default_store() -> PathBuf {
    "subjekt.db".into()
}
fn default_auth() -> String {
    "header".into()
}
fn default_user_header() -> String {
    "X-User".into()
}
fn default_webhook_timeout_ms() -> u64 {
    10_000
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            bind: default_bind(),
            store: default_store(),
            static_dir: None,
            auth: default_auth(),
            user_header: default_user_header(),
            webhook_timeout_ms: default_webhook_timeout_ms(),
            webhooks: BTreeMap::new(),
        }
    }
}

impl ApiConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    /// Applies `SUBJEKT_BIND`, `SUBJEKT_STORE` and `SUBJEKT_AUTH` from `vars`.
    pub fn with_overrides<I, K, V>(mut self, vars: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        for (k, v) in vars {
            match k.as_ref() {
                "SUBJEKT_BIND" => self.bind = v.into(),
                "SUBJEKT_STORE" => self.store = PathBuf::from(v.into()),
                "SUBJEKT_AUTH" => self.auth = v.into(),
                _ => {}
            }
        }
        self
    }

    pub fn with_env(self) -> Self {
        self.with_overrides(std::env::vars())
    }

    pub fn bind_addr(&self) -> Result<SocketAddr, ConfigError> {
        self.bind.parse().map_err(|_| ConfigError::Bind(self.bind.clone()))
    }

    pub fn auth_mode(&self) -> Result<AuthMode, ConfigError> {
        self.auth.parse()
    }

    pub fn webhook_timeout(&self) -> Duration {
        Duration::from_millis(self.webhook_timeout_ms)
    }

    /// Checks every field that can be checked without side effects, plus
    /// writability of the store's directory.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.bind_addr()?;
        self.auth_mode()?;
        for (key, url) in &self.webhooks {
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                return Err(ConfigError::Webhook { key: key.clone(), url: url.clone() });
            }
        }
        let dir = match self.store.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let store_err = |reason: String| ConfigError::Store { path: self.store.clone(), reason };
        let meta = std::fs::metadata(&dir).map_err(|e| store_err(format!("{}: {e}", dir.display())))?;
        if !meta.is_dir() {
            return Err(store_err(format!("{} is not a directory", dir.display())));
        }
        if meta.permissions().readonly() {
            return Err(store_err(format!("{} is read-only", dir.display())));
        }
        Ok(())
    }
}
