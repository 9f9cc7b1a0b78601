//! Platform configuration file.

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::auth::MIN_SECRET_LEN;
use crate::repository::AuthMode;

fn default_ttl() -> u64 {
    3600
}
fn default_upstream_timeout() -> u64 {
    30
}
fn default_connect_timeout() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformConfig {
    pub public_listen_addr: String,
    pub internal_listen_addr: String,
    pub state_file: PathBuf,
    pub token_secret: String,
    #[serde(default = "default_ttl")]
    pub token_ttl_seconds: u64,
    #[serde(default)]
    pub default_auth_mode: AuthMode,
    #[serde(default)]
    pub bootstrap_admin: bool,
    #[serde(default)]
    pub ui_assets_dir: Option<PathBuf>,
    #[serde(default = "default_upstream_timeout")]
    pub upstream_timeout_seconds: u64,
    #[serde(default = "default_connect_timeout")]
    pub upstream_connect_timeout_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line in the source file, when known.
    pub line: Option<usize>,
    pub key: Option<&'static str>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(key) = self.key {
            write!(f, "{key}: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

pub const ENV_PUBLIC_ADDR: &str = "PLATFORM_PUBLIC_LISTEN_ADDR";
pub const ENV_INTERNAL_ADDR: &str = "PLATFORM_INTERNAL_LISTEN_ADDR";
pub const ENV_TOKEN_SECRET: &str = "PLATFORM_TOKEN_SECRET";

fn line_of_key(source: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    source
        .lines()
        .position(|l| l.contains(&needle))
        .map(|i| i + 1)
}

impl PlatformConfig {
    /// A config for tests and embedding: loopback ephemeral ports.
    pub fn ephemeral(state_file: impl Into<PathBuf>, token_secret: &str) -> Self {
        PlatformConfig {
            public_listen_addr: "127.0.0.1:0".into(),
            internal_listen_addr: "127.0.0.1:0".into(),
            state_file: state_file.into(),
            token_secret: token_secret.into(),
            token_ttl_seconds: default_ttl(),
            default_auth_mode: AuthMode::Gateway,
            bootstrap_admin: false,
            ui_assets_dir: None,
            upstream_timeout_seconds: default_upstream_timeout(),
            upstream_connect_timeout_seconds: default_connect_timeout(),
        }
    }

    /// Parses and validates without consulting the environment.
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        let config: PlatformConfig = serde_json::from_str(source).map_err(|e| ConfigError {
            line: Some(e.line()).filter(|l| *l > 0),
            key: None,
            message: e.to_string(),
        })?;
        config.validate().map_err(|mut e| {
            if let Some(key) = e.key {
                e.line = line_of_key(source, key);
            }
            e
        })?;
        Ok(config)
    }

    /// Reads a file, applies `PLATFORM_*` environment overrides, validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            key: None,
            message: format!("reading {}: {e}", path.display()),
        })?;
        let mut config = Self::parse(&source)?;
        config.apply_env(|k| std::env::var(k).ok());
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get(ENV_PUBLIC_ADDR) {
            self.public_listen_addr = v;
        }
        if let Some(v) = get(ENV_INTERNAL_ADDR) {
            self.internal_listen_addr = v;
        }
        if let Some(v) = get(ENV_TOKEN_SECRET) {
            self.token_secret = v;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key, message: String| ConfigError {
            line: None,
            key: Some(key),
            message,
        };
        let public: SocketAddr = self.public_listen_addr.parse().map_err(|_| {
            invalid(
                "public_listen_addr",
                format!("{:?} is not a host:port address", self.public_listen_addr),
            )
        })?;
        let internal: SocketAddr = self.internal_listen_addr.parse().map_err(|_| {
            invalid(
                "internal_listen_addr",
                format!("{:?} is not a host:port address", self.internal_listen_addr),
            )
        })?;
        // Port 0 asks the OS for a fresh port, so two such listeners never collide.
        if public == internal && public.port() != 0 {
            return Err(invalid(
                "internal_listen_addr",
                format!("must differ from public_listen_addr ({public})"),
            ));
        }
        if self.token_secret.chars().count() < MIN_SECRET_LEN {
            return Err(invalid(
                "token_secret",
                format!("must be at least {MIN_SECRET_LEN} characters"),
            ));
        }
        if self.token_ttl_seconds == 0 {
            return Err(invalid("token_ttl_seconds", "must be positive".into()));
        }
        if self.upstream_timeout_seconds == 0 {
            return Err(invalid(
                "upstream_timeout_seconds",
                "must be positive".into(),
            ));
        }
        if self.upstream_connect_timeout_seconds == 0 {
            return Err(invalid(
                "upstream_connect_timeout_seconds",
                "must be positive".into(),
            ));
        }
        if self.state_file.as_os_str().is_empty() {
            return Err(invalid("state_file", "must not be empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"{
  "public_listen_addr": "127.0.0.1:8080",
  "internal_listen_addr": "127.0.0.1:8081",
  "state_file": "state.json",
  "token_secret": "0123456789abcdef"
}"#;

    #[test]
    fn defaults_are_materialized_and_round_trip() {
        let c = PlatformConfig::parse(VALID).unwrap();
        assert_eq!(c.token_ttl_seconds, 3600);
        assert_eq!(c.default_auth_mode, AuthMode::Gateway);
        assert!(!c.bootstrap_admin);
        assert_eq!(c.upstream_timeout_seconds, 30);
        assert_eq!(c.upstream_connect_timeout_seconds, 10);
        let again = PlatformConfig::parse(&serde_json::to_string_pretty(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn identical_addresses_name_the_key_and_line() {
        let src = VALID.replace("127.0.0.1:8081", "127.0.0.1:8080");
        let err = PlatformConfig::parse(&src).unwrap_err();
        assert_eq!(err.key, Some("internal_listen_addr"));
        assert_eq!(err.line, Some(3));
        assert!(err.to_string().starts_with("line 3: internal_listen_addr"));
    }

    #[test]
    fn short_secret_and_syntax_errors() {
        let err = PlatformConfig::parse(&VALID.replace("0123456789abcdef", "short")).unwrap_err();
        assert_eq!(err.key, Some("token_secret"));
        let err = PlatformConfig::parse("{\n  \"public_listen_addr\": ,\n}").unwrap_err();
        assert_eq!(err.line, Some(2));
        let err =
            PlatformConfig::parse(&VALID.replace("\"state_file\"", "\"bogus\": 1, \"state_file\""))
                .unwrap_err();
        assert!(err.message.contains("bogus"));
    }

    #[test]
    fn env_overrides() {
        let mut c = PlatformConfig::parse(VALID).unwrap();
        c.apply_env(|k| match k {
            ENV_PUBLIC_ADDR => Some("0.0.0.0:9000".into()),
            ENV_TOKEN_SECRET => Some("from-the-environment".into()),
            _ => None,
        });
        assert_eq!(c.public_listen_addr, "0.0.0.0:9000");
        assert_eq!(c.internal_listen_addr, "127.0.0.1:8081");
        assert_eq!(c.token_secret, "from-the-environment");
    }

    #[test]
    fn ephemeral_ports_may_repeat() {
        PlatformConfig::ephemeral("s.json", "0123456789abcdef")
            .validate()
            .unwrap();
    }
}
