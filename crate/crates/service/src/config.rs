use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use mtmc_core::ingest::SamplingConfig;
use mtmc_core::tracker::AssociationConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub const ENV_LISTEN: &str = "MTMC_LISTEN";
pub const ENV_STORE_PATH: &str = "MTMC_STORE_PATH";
pub const ENV_BROKER_URI: &str = "MTMC_BROKER_URI";
pub const ENV_GRAPH_PATH: &str = "MTMC_GRAPH_PATH";
pub const ENV_WORKERS: &str = "MTMC_WORKERS";

/// Recommendation parameters used when a request leaves them out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommendDefaults {
    pub mode: String,
    pub hops: usize,
}

impl Default for RecommendDefaults {
    fn default() -> Self {
        Self {
            mode: "blend".into(),
            hops: 1,
        }
    }
}

/// Settings for the job pipeline stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Key-frame stride.
    pub interval: u32,
    pub confidence_threshold: f64,
    pub association: AssociationConfig,
    /// Deliveries of one job before it is dead-lettered.
    pub max_attempts: u32,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let s = SamplingConfig::default();
        Self {
            interval: s.interval,
            confidence_threshold: s.confidence_threshold,
            association: AssociationConfig::default(),
            max_attempts: 3,
            workers: 4,
        }
    }
}

impl PipelineConfig {
    pub fn sampling(&self, fps: f64) -> SamplingConfig {
        SamplingConfig {
            interval: self.interval,
            fps,
            confidence_threshold: self.confidence_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    /// Directory holding the event log and job results.
    pub store_path: PathBuf,
    /// `memory://` or an `amqp://` URI.
    pub broker_uri: String,
    /// Queue name on an external broker.
    pub queue: String,
    /// Camera graph JSON; without it every camera is isolated and
    /// recommendations are empty.
    pub graph_path: Option<PathBuf>,
    pub allow_revisits: bool,
    /// Flush the event log to disk after every write.
    pub fsync: bool,
    pub recommend: RecommendDefaults,
    pub pipeline: PipelineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            store_path: PathBuf::from("mtmc-data"),
            broker_uri: "memory://".into(),
            queue: "mtmc.jobs".into(),
            graph_path: None,
            allow_revisits: false,
            fsync: true,
            recommend: RecommendDefaults::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Parses a TOML document, or JSON when the text starts with `{`.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let parsed = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| ConfigError::Parse {
            path: origin.to_owned(),
            message,
        })
    }

    /// Reads the optional config file, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_owned(),
                    source,
                })?;
                Self::parse(&text, p)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup(ENV_LISTEN) {
            self.listen = v.parse().map_err(|e: std::net::AddrParseError| ConfigError::Env {
                var: ENV_LISTEN,
                message: e.to_string(),
            })?;
        }
        if let Some(v) = lookup(ENV_STORE_PATH) {
            self.store_path = PathBuf::from(v);
        }
        if let Some(v) = lookup(ENV_BROKER_URI) {
            self.broker_uri = v;
        }
        if let Some(v) = lookup(ENV_GRAPH_PATH) {
            self.graph_path = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup(ENV_WORKERS) {
            self.pipeline.workers = v.parse().map_err(|e: std::num::ParseIntError| ConfigError::Env {
                var: ENV_WORKERS,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.pipeline;
        p.sampling(1.0)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        p.association
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if p.max_attempts == 0 {
            return Err(ConfigError::Invalid("max_attempts must be >= 1".into()));
        }
        if self.recommend.mode.parse::<mtmc_core::recommend::RankMode>().is_err() {
            return Err(ConfigError::Invalid(format!("unknown ranking mode {:?}", self.recommend.mode)));
        }
        Ok(())
    }

    pub fn event_log_path(&self) -> PathBuf {
        self.store_path.join("events.jsonl")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.store_path.join("jobs")
    }
}
