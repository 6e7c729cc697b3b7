//! Optional TOML config file. Values here lose to environment variables,
//! which lose to flags.
//!
//! ```toml
//! [llm]
//! model_name = "o4-mini"
//! endpoint = "https://api.openai.com/v1"
//! api_key_ref = "OPENAI_API_KEY"
//!
//! [pipeline]
//! max_iterations = 5
//!
//! [service]
//! data_root = "/var/lib/cmind"
//! listen = "127.0.0.1:8080"
//! workers = 2
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use cmind_core::llm::LlmConfig;
use cmind_core::pipeline::PipelineConfig;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub llm: LlmConfig,
    pub pipeline: PipelineConfig,
    pub service: ServiceSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub data_root: Option<PathBuf>,
    pub listen: Option<SocketAddr>,
    pub workers: Option<usize>,
    pub max_upload_bytes: Option<usize>,
}

pub enum ConfigError {
    Missing(PathBuf),
    Io(PathBuf, std::io::Error),
    Parse(PathBuf, String),
}

/// `$XDG_CONFIG_HOME/cmind/config.toml`, else `~/.config/cmind/config.toml`.
pub fn default_path() -> Option<PathBuf> {
    let base = std::env::var_os("XDG_CONFIG_HOME")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".config")))?;
    Some(base.join("cmind").join("config.toml"))
}

/// An explicit path must exist; the default path is optional.
pub fn load(explicit: Option<&Path>) -> Result<FileConfig, ConfigError> {
    let path = match explicit {
        Some(p) if !p.exists() => return Err(ConfigError::Missing(p.to_path_buf())),
        Some(p) => p.to_path_buf(),
        None => match default_path() {
            Some(p) if p.is_file() => p,
            _ => return Ok(FileConfig::default()),
        },
    };
    let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Io(path.clone(), e))?;
    let cfg: FileConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse(path.clone(), e.to_string()))?;
    log::debug!("loaded config from {}", path.display());
    Ok(cfg)
}
