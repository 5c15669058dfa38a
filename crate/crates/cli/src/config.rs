//! Optional TOML config. Precedence: command-line flag, then config file,
//! then built-in default.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Instruction budget for golden runs; faulty runs are capped further.
    pub budget: Option<u64>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub campaign: Option<CampaignConfig>,
    pub model: Option<ModelConfig>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub confidence: Option<f64>,
    pub margin: Option<f64>,
    pub proportion: Option<f64>,
    pub scope: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub ridge: Option<f64>,
    pub data: Option<std::path::PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("bad config {}", path.display()))
    }

    pub fn campaign(&self) -> CampaignConfig {
        self.campaign.clone().unwrap_or_default()
    }

    pub fn model(&self) -> ModelConfig {
        self.model.clone().unwrap_or_default()
    }
}
