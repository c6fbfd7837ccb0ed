use super::{BandwidthProfile, RadioChannelId, SliceId};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing slice config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid slice config: {0}")]
    Invalid(String),
}

/// Per-slice radio configuration.
///
/// The on-disk form is TOML with one flat table; see `docs/slice-config.md`.
/// Frequencies are integer Hz.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceConfig {
    pub slice_id: SliceId,
    #[serde(rename = "prbs")]
    pub profile: BandwidthProfile,
    pub dl_freq_hz: u64,
    pub ul_freq_hz: u64,
    #[serde(default)]
    pub rx_gain_db: i32,
    #[serde(default)]
    pub tx_gain_db: i32,
    pub radio_channel: RadioChannelId,
    #[serde(rename = "phy_profile")]
    pub phy_profile_name: String,
    /// Overrides the profile's default TX time advance, in samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_offset: Option<u64>,
}

impl SliceConfig {
    pub fn new(
        slice_id: u32,
        profile: BandwidthProfile,
        dl_freq_hz: u64,
        ul_freq_hz: u64,
        radio_channel: u32,
        phy_profile_name: &str,
    ) -> Self {
        Self {
            slice_id: SliceId(slice_id),
            profile,
            dl_freq_hz,
            ul_freq_hz,
            rx_gain_db: 0,
            tx_gain_db: 0,
            radio_channel: RadioChannelId(radio_channel),
            phy_profile_name: phy_profile_name.to_owned(),
            tx_offset: None,
        }
    }

    pub fn effective_tx_offset(&self) -> u64 {
        self.tx_offset.unwrap_or_else(|| self.profile.tx_offset())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SliceConfig = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("slice config always serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.dl_freq_hz == 0 || self.ul_freq_hz == 0 {
            return Err(ConfigError::Invalid("frequencies must be non-zero".into()));
        }
        if self.phy_profile_name.is_empty() {
            return Err(ConfigError::Invalid("phy_profile must be set".into()));
        }
        Ok(())
    }
}
