//! Service configuration and its file format.
//!
//! The grammar is line based:
//!
//! ```text
//! # full-line comment
//! store_dir = ./store        top-level keys come before any section
//! [llm]                      section header
//! backend = http
//! endpoint = "http://127.0.0.1:8080/v1/chat/completions"
//! ```
//!
//! A value is either a JSON string literal (`"..."`, standard escapes) or the
//! trimmed rest of the line. Unknown sections and keys are errors, as are
//! repeated keys. Absent keys take their defaults.

use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use docsift::dense::embed::DEFAULT_DIM;
use docsift::dense::HnswParams;
use docsift::dual::{FusionMethod, FusionParams};
use docsift::ingest::ChunkingParams;
use docsift::sparse::Bm25Params;
use docsift::store::StoreKind;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown configuration key '{0}'")]
    UnknownKey(String),
    #[error("invalid value for '{key}': {message}")]
    InvalidValue { key: String, message: String },
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmConfig {
    pub backend: LlmKind,
    /// Full chat-completions URL.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key, never the key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            backend: LlmKind::Stub,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: 120,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Hash,
            dim: DEFAULT_DIM,
            endpoint: None,
            model: None,
            api_key_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServerConfig {
    pub bind_addr: IpAddr,
    pub port: u16,
    pub max_in_flight: usize,
    /// Must be set to bind a non-loopback address.
    pub allow_remote_bind: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind_addr: IpAddr::from([127, 0, 0, 1]),
            port: 8000,
            max_in_flight: 4,
            allow_remote_bind: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub store_dir: PathBuf,
    pub store_kind: StoreKind,
    pub chunking: ChunkingParams,
    pub bm25: Bm25Params,
    pub hnsw: HnswParams,
    pub fusion: FusionParams,
    pub llm: LlmConfig,
    pub embedder: EmbedderConfig,
    pub server: ServerConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            store_dir: PathBuf::from("docsift-store"),
            store_kind: StoreKind::Dual,
            chunking: ChunkingParams::default(),
            bm25: Bm25Params::default(),
            hnsw: HnswParams::default(),
            fusion: FusionParams::default(),
            llm: LlmConfig::default(),
            embedder: EmbedderConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| invalid(key, format!("'{v}': {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(key, format!("'{v}' is not true or false"))),
    }
}

fn opt_string(v: &str) -> Option<String> {
    (!v.is_empty()).then(|| v.to_string())
}

fn parse_value(raw: &str, line: usize) -> Result<String, ConfigError> {
    if raw.starts_with('"') {
        serde_json::from_str::<String>(raw).map_err(|e| ConfigError::Parse {
            line,
            message: format!("bad quoted value: {e}"),
        })
    } else {
        Ok(raw.to_string())
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        let mut section = String::new();
        let mut seen = std::collections::HashSet::new();
        let mut level_mult_set = false;
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Parse {
                    line: line_no,
                    message: "section header must end with ']'".into(),
                })?;
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::UnknownKey(name.to_string()));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: line_no,
                message: "expected 'key = value'".into(),
            })?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            if !seen.insert(key.clone()) {
                return Err(ConfigError::Parse {
                    line: line_no,
                    message: format!("'{key}' set twice"),
                });
            }
            let v = parse_value(v.trim(), line_no)?;
            if key == "hnsw.level_mult" {
                level_mult_set = true;
            }
            cfg.set(&key, &v)?;
        }
        if !level_mult_set {
            cfg.hnsw.level_mult = 1.0 / (cfg.hnsw.m as f64).ln();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "store_dir" => {
                if v.is_empty() {
                    return Err(invalid(key, "must not be empty"));
                }
                self.store_dir = PathBuf::from(v)
            }
            "store_kind" => self.store_kind = v.parse().map_err(|e: String| invalid(key, e))?,
            "chunking.chunk_size" => self.chunking.chunk_size = parse_num(key, v)?,
            "chunking.overlap" => self.chunking.overlap = parse_num(key, v)?,
            "chunking.snap_to_word_boundary" => self.chunking.snap_to_word_boundary = parse_bool(key, v)?,
            "bm25.k1" => self.bm25.k1 = parse_num(key, v)?,
            "bm25.b" => self.bm25.b = parse_num(key, v)?,
            "hnsw.m" => self.hnsw.m = parse_num(key, v)?,
            "hnsw.ef_construction" => self.hnsw.ef_construction = parse_num(key, v)?,
            "hnsw.ef_search" => self.hnsw.ef_search = parse_num(key, v)?,
            "hnsw.level_mult" => self.hnsw.level_mult = parse_num(key, v)?,
            "hnsw.rng_seed" => self.hnsw.rng_seed = parse_num(key, v)?,
            "fusion.method" => {
                self.fusion.method = match v {
                    "rrf" => FusionMethod::Rrf,
                    _ => return Err(invalid(key, format!("'{v}' (only rrf is supported)"))),
                }
            }
            "fusion.rrf_k" => self.fusion.rrf_k = parse_num(key, v)?,
            "fusion.k_dense" => self.fusion.k_dense = parse_num(key, v)?,
            "fusion.k_sparse" => self.fusion.k_sparse = parse_num(key, v)?,
            "llm.backend" => {
                self.llm.backend = match v {
                    "stub" => LlmKind::Stub,
                    "http" => LlmKind::Http,
                    _ => return Err(invalid(key, format!("'{v}' (expected stub or http)"))),
                }
            }
            "llm.endpoint" => self.llm.endpoint = opt_string(v),
            "llm.model" => self.llm.model = opt_string(v),
            "llm.api_key_env" => self.llm.api_key_env = opt_string(v),
            "llm.timeout_secs" => self.llm.timeout_secs = parse_num(key, v)?,
            "llm.max_attempts" => self.llm.max_attempts = parse_num(key, v)?,
            "embedder.kind" => {
                self.embedder.kind = match v {
                    "hash" => EmbedderKind::Hash,
                    "remote" => EmbedderKind::Remote,
                    _ => return Err(invalid(key, format!("'{v}' (expected hash or remote)"))),
                }
            }
            "embedder.dim" => self.embedder.dim = parse_num(key, v)?,
            "embedder.endpoint" => self.embedder.endpoint = opt_string(v),
            "embedder.model" => self.embedder.model = opt_string(v),
            "embedder.api_key_env" => self.embedder.api_key_env = opt_string(v),
            "server.bind_addr" => self.server.bind_addr = parse_num(key, v)?,
            "server.port" => self.server.port = parse_num(key, v)?,
            "server.max_in_flight" => self.server.max_in_flight = parse_num(key, v)?,
            "server.allow_remote_bind" => self.server.allow_remote_bind = parse_bool(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.chunking
            .validate()
            .map_err(|e| invalid("chunking", e.to_string()))?;
        if !self.bm25.is_valid() {
            return Err(invalid("bm25", "k1 must be >= 0 and b within [0, 1]"));
        }
        self.hnsw.validate().map_err(|e| invalid("hnsw", e.to_string()))?;
        self.fusion.validate().map_err(|e| invalid("fusion", e))?;
        if self.llm.backend == LlmKind::Http && self.llm.endpoint.is_none() {
            return Err(invalid("llm.endpoint", "required when llm.backend = http"));
        }
        if self.llm.max_attempts == 0 {
            return Err(invalid("llm.max_attempts", "must be >= 1"));
        }
        if self.embedder.dim == 0 {
            return Err(invalid("embedder.dim", "must be >= 1"));
        }
        if self.embedder.kind == EmbedderKind::Remote && self.embedder.endpoint.is_none() {
            return Err(invalid("embedder.endpoint", "required when embedder.kind = remote"));
        }
        if self.server.max_in_flight == 0 {
            return Err(invalid("server.max_in_flight", "must be >= 1"));
        }
        if !self.server.bind_addr.is_loopback() && !self.server.allow_remote_bind {
            return Err(invalid(
                "server.bind_addr",
                format!("{} is not loopback; set server.allow_remote_bind = true to allow it", self.server.bind_addr),
            ));
        }
        Ok(())
    }

    /// Renders every key in the file grammar; `parse` of the output
    /// reproduces `self`.
    pub fn to_file_string(&self) -> String {
        fn q(s: &str) -> String {
            serde_json::to_string(s).expect("string serializes")
        }
        fn opt(s: &Option<String>) -> String {
            s.as_deref().map_or_else(|| "\"\"".into(), q)
        }
        let c = self;
        let mut out = String::new();
        let mut put = |line: String| {
            out.push_str(&line);
            out.push('\n');
        };
        put(format!("store_dir = {}", q(&c.store_dir.to_string_lossy())));
        put(format!("store_kind = {}", c.store_kind));
        put(String::new());
        put("[chunking]".into());
        put(format!("chunk_size = {}", c.chunking.chunk_size));
        put(format!("overlap = {}", c.chunking.overlap));
        put(format!("snap_to_word_boundary = {}", c.chunking.snap_to_word_boundary));
        put(String::new());
        put("[bm25]".into());
        put(format!("k1 = {:?}", c.bm25.k1));
        put(format!("b = {:?}", c.bm25.b));
        put(String::new());
        put("[hnsw]".into());
        put(format!("m = {}", c.hnsw.m));
        put(format!("ef_construction = {}", c.hnsw.ef_construction));
        put(format!("ef_search = {}", c.hnsw.ef_search));
        put(format!("level_mult = {:?}", c.hnsw.level_mult));
        put(format!("rng_seed = {}", c.hnsw.rng_seed));
        put(String::new());
        put("[fusion]".into());
        put("method = rrf".into());
        put(format!("rrf_k = {}", c.fusion.rrf_k));
        put(format!("k_dense = {}", c.fusion.k_dense));
        put(format!("k_sparse = {}", c.fusion.k_sparse));
        put(String::new());
        put("[llm]".into());
        put(format!(
            "backend = {}",
            match c.llm.backend {
                LlmKind::Stub => "stub",
                LlmKind::Http => "http",
            }
        ));
        put(format!("endpoint = {}", opt(&c.llm.endpoint)));
        put(format!("model = {}", opt(&c.llm.model)));
        put(format!("api_key_env = {}", opt(&c.llm.api_key_env)));
        put(format!("timeout_secs = {}", c.llm.timeout_secs));
        put(format!("max_attempts = {}", c.llm.max_attempts));
        put(String::new());
        put("[embedder]".into());
        put(format!(
            "kind = {}",
            match c.embedder.kind {
                EmbedderKind::Hash => "hash",
                EmbedderKind::Remote => "remote",
            }
        ));
        put(format!("dim = {}", c.embedder.dim));
        put(format!("endpoint = {}", opt(&c.embedder.endpoint)));
        put(format!("model = {}", opt(&c.embedder.model)));
        put(format!("api_key_env = {}", opt(&c.embedder.api_key_env)));
        put(String::new());
        put("[server]".into());
        put(format!("bind_addr = {}", c.server.bind_addr));
        put(format!("port = {}", c.server.port));
        put(format!("max_in_flight = {}", c.server.max_in_flight));
        put(format!("allow_remote_bind = {}", c.server.allow_remote_bind));
        out
    }

    /// The JSON served by `GET /config`. Holds environment variable names
    /// and whether they are set, never their values.
    pub fn redacted(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        for section in ["llm", "embedder"] {
            let env = v[section]["api_key_env"].as_str().map(str::to_string);
            v[section]["api_key_present"] =
                serde_json::Value::Bool(env.is_some_and(|name| std::env::var_os(name).is_some()));
        }
        v
    }

    pub fn llm_timeout(&self) -> Duration {
        Duration::from_secs(self.llm.timeout_secs)
    }
}

const SECTIONS: &[&str] = &["chunking", "bm25", "hnsw", "fusion", "llm", "embedder", "server"];
