//! Server configuration file.
//!
//! ```toml
//! listen = "127.0.0.1:10080"
//! data_dir = "data"
//! static_dir = "webui/dist"
//! anonymous = true
//! ```
//!
//! Relative paths are taken relative to the file. Users, rules and network
//! roles default to `users.caos`, `rules.caos` and `networks.caos` inside
//! the data directory.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    /// Web console assets, served under `/webui/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    /// Whether requests without a session act as the anonymous role.
    /// When off they are answered with 401.
    #[serde(default = "default_anonymous")]
    pub anonymous: bool,
    #[serde(default)]
    pub users_file: Option<PathBuf>,
    #[serde(default)]
    pub rules_file: Option<PathBuf>,
    #[serde(default)]
    pub networks_file: Option<PathBuf>,
    #[serde(default = "default_interval")]
    pub snapshot_interval: u64,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 10080))
}

fn default_anonymous() -> bool {
    true
}

fn default_interval() -> u64 {
    1000
}

impl Config {
    /// Configuration with defaults for everything but the data directory.
    pub fn new(data_dir: impl Into<PathBuf>) -> Config {
        Config {
            listen: default_listen(),
            data_dir: data_dir.into(),
            static_dir: None,
            anonymous: default_anonymous(),
            users_file: None,
            rules_file: None,
            networks_file: None,
            snapshot_interval: default_interval(),
        }
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Config::parse(&text, base).map_err(|message| ConfigError::Invalid {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Parses TOML text, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Config, String> {
        let mut c: Config = toml::from_str(text).map_err(|e| e.message().to_string())?;
        if c.snapshot_interval == 0 {
            return Err("snapshot_interval must be positive".into());
        }
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut c.data_dir);
        for p in [&mut c.static_dir, &mut c.users_file, &mut c.rules_file, &mut c.networks_file]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        Ok(c)
    }

    pub fn users_path(&self) -> PathBuf {
        self.users_file.clone().unwrap_or_else(|| self.data_dir.join("users.caos"))
    }

    pub fn rules_path(&self) -> PathBuf {
        self.rules_file.clone().unwrap_or_else(|| self.data_dir.join("rules.caos"))
    }

    pub fn networks_path(&self) -> PathBuf {
        self.networks_file.clone().unwrap_or_else(|| self.data_dir.join("networks.caos"))
    }
}
