use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use biozbp::pipeline::PipelineConfig;

use crate::GlobalOpts;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Everything needed to replay a run: the command, its inputs and the
/// fully resolved configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub inputs: Vec<String>,
    pub config: PipelineConfig,
}

/// Config file (plain or a previous manifest) overlaid with global flags.
pub fn base_config(global: &GlobalOpts) -> Result<PipelineConfig> {
    let mut cfg = match &global.config {
        None => PipelineConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let value: toml::Table = toml::from_str(&text)
                .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            let parsed = if value.contains_key("config") && value.contains_key("command") {
                toml::from_str::<Manifest>(&text).map(|m| m.config)
            } else {
                toml::from_str::<PipelineConfig>(&text)
            };
            parsed.map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(t) = global.target {
        cfg.targets = t.targets();
    }
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

pub fn write(dir: &Path, command: &str, inputs: &[&Path], cfg: &PipelineConfig) -> Result<()> {
    let m = Manifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        config: cfg.clone(),
    };
    let text = toml::to_string_pretty(&m).map_err(|e| ConfigError(e.to_string()))?;
    let path = dir.join("manifest.toml");
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    log::info!("resolved configuration written to {}", path.display());
    Ok(())
}
