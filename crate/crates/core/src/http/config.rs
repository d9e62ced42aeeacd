use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::EngineOptions;
use crate::error::{Error, Result};
use crate::types::{DEFAULT_EF_CONSTRUCTION, DEFAULT_M};

pub const DEFAULT_MAX_BODY_BYTES: usize = 32 * 1024 * 1024;
pub const ENV_PREFIX: &str = "QX_";

/// Server settings: TOML file, then `QX_*` environment variables, then
/// command-line flags (applied by the caller).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    /// Keep everything in memory and ignore `data_dir`.
    pub in_memory: bool,
    /// ef used when a search request omits it; `None` means `max(k, 64)`.
    pub default_ef: Option<usize>,
    /// HNSW parameters for collections created without explicit values.
    pub default_m: usize,
    pub default_ef_construction: usize,
    pub max_body_bytes: usize,
    pub engine: EngineOptions,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:6333".into(),
            data_dir: PathBuf::from("qxdb-data"),
            in_memory: false,
            default_ef: None,
            default_m: DEFAULT_M,
            default_ef_construction: DEFAULT_EF_CONSTRUCTION,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            engine: EngineOptions::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{ENV_PREFIX}{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{ENV_PREFIX}{key}: expected a boolean, got `{value}`"))),
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies `QX_*` overrides from `vars`. Unknown `QX_` keys are ignored
    /// so unrelated tooling can share the prefix.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            let Some(key) = k.as_ref().strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let v = v.as_ref();
            match key {
                "LISTEN" => self.listen = v.to_string(),
                "DATA_DIR" => self.data_dir = PathBuf::from(v),
                "IN_MEMORY" => self.in_memory = parse_bool(key, v)?,
                "DEFAULT_EF" => self.default_ef = Some(parse(key, v)?),
                "DEFAULT_M" => self.default_m = parse(key, v)?,
                "DEFAULT_EF_CONSTRUCTION" => self.default_ef_construction = parse(key, v)?,
                "MAX_BODY_BYTES" => self.max_body_bytes = parse(key, v)?,
                "SEED" => self.engine.seed = parse(key, v)?,
                "TRAINING_THRESHOLD" => self.engine.training_threshold = parse(key, v)?,
                "EXACT_FILTER_LIMIT" => self.engine.exact_filter_limit = parse(key, v)?,
                "DURABLE_WRITES" => self.engine.durable_writes = parse_bool(key, v)?,
                _ => {}
            }
        }
        Ok(())
    }

    /// File (if any) plus the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    pub fn listen_addr(&self) -> Result<SocketAddr> {
        self.listen
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("listen address `{}` is not host:port", self.listen)))
    }

    pub fn validate(&self) -> Result<()> {
        self.listen_addr()?;
        if self.default_m < 2 {
            return Err(Error::InvalidConfig("default_m must be >= 2".into()));
        }
        if self.default_ef_construction == 0 || self.default_ef == Some(0) {
            return Err(Error::InvalidConfig("default ef values must be >= 1".into()));
        }
        if self.max_body_bytes == 0 {
            return Err(Error::InvalidConfig("max_body_bytes must be >= 1".into()));
        }
        if !self.in_memory && self.data_dir.as_os_str().is_empty() {
            return Err(Error::InvalidConfig("data_dir is empty".into()));
        }
        Ok(())
    }
}
