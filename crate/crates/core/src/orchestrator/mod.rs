//! Slice lifecycle control: one command loop owns every descriptor and the
//! backend, readers get published snapshots.

mod client;
mod core;
mod runtime;
mod server;
pub mod wire;

pub use self::core::{Orchestrator, OrchestratorOptions};
pub use client::{Client, ClientError};
pub use server::{serve, ServeConfig, ServiceHandle, DEFAULT_HTTP_PORT, DEFAULT_REQREP_PORT, SSE_PERIOD};

use crate::iqcore::{ConflictReport, FdmPlan, SliceConfig, SliceId};
use crate::pvback::SessionMetrics;
use crate::slicestack::{EndpointStats, Traffic};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version of every JSON document the orchestrator emits or accepts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceState {
    Requested,
    Running,
    Stopping,
    Stopped,
}

impl SliceState {
    /// The only moves a descriptor makes. A failed start goes straight from
    /// requested to stopped.
    pub fn can_become(self, next: SliceState) -> bool {
        use SliceState::*;
        matches!((self, next), (Requested, Running) | (Requested, Stopped) | (Running, Stopping) | (Stopping, Stopped))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceDescriptor {
    pub slice_id: u32,
    #[serde(rename = "phy_profile")]
    pub phy_profile_name: String,
    pub prbs: u32,
    pub dl_freq_hz: u64,
    pub ul_freq_hz: u64,
    pub radio_channel: u32,
    pub state: SliceState,
    /// Bumped by every restart (`set_band`); each generation walks the
    /// lifecycle once.
    pub generation: u32,
}

impl SliceDescriptor {
    fn new(cfg: &SliceConfig, generation: u32) -> Self {
        Self {
            slice_id: cfg.slice_id.0,
            phy_profile_name: cfg.phy_profile_name.clone(),
            prbs: cfg.profile.prbs(),
            dl_freq_hz: cfg.dl_freq_hz,
            ul_freq_hz: cfg.ul_freq_hz,
            radio_channel: cfg.radio_channel.0,
            state: SliceState::Requested,
            generation,
        }
    }
}

/// Offered load for a new slice, applied at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub offered_bps: f64,
    pub payload_len: usize,
}

impl TrafficSpec {
    pub fn to_traffic(self) -> Traffic {
        Traffic::new(self.offered_bps, self.payload_len)
    }
}

impl Default for TrafficSpec {
    fn default() -> Self {
        Self { offered_bps: 500e3, payload_len: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSlice {
    pub config: SliceConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficSpec>,
}

impl CreateSlice {
    pub fn new(config: SliceConfig) -> Self {
        Self { config, traffic: None }
    }
}

/// Counters of a slice at the moment it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalCounters {
    pub slice_id: u32,
    pub backend: Option<SessionMetrics>,
    /// Downlink as received by the UE.
    pub dl: Option<EndpointStats>,
    /// Uplink as received by the eNB.
    pub ul: Option<EndpointStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub slice_id: u32,
    pub state: SliceState,
    pub generation: u32,
    pub goodput_dl_bps: f64,
    pub goodput_ul_bps: f64,
    pub loss_dl: f64,
    pub loss_ul: f64,
    pub latency_dl_ms: f64,
    pub dl_payload_bytes: u64,
    pub dl_radio_seconds: f64,
    /// Late TX subframes plus skipped RX blocks in the backend.
    pub underruns: u64,
    pub rx_ring_high_water: u64,
    pub tx_ring_high_water: u64,
    pub achieved_rate: f64,
}

/// Everything a monitor needs, built from one pass over the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub schema_version: u32,
    /// Increases with every snapshot.
    pub seq: u64,
    pub active_slices: usize,
    pub plan: FdmPlan,
    pub slices: Vec<SliceMetrics>,
}

impl MetricsSnapshot {
    fn empty() -> Self {
        Self { schema_version: SCHEMA_VERSION, seq: 0, active_slices: 0, plan: FdmPlan::default(), slices: Vec::new() }
    }
}

/// One accepted mutation, in the order the command loop applied it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum LoggedCommand {
    Create(CreateSlice),
    Destroy { slice_id: u32 },
    SetBand { slice_id: u32, dl_freq_hz: u64, ul_freq_hz: u64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchError {
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("band plan conflict: {0}")]
    Conflict(ConflictReport),
    #[error("radio channel {0} is in use")]
    ChannelInUse(u32),
    #[error("no slice {0}")]
    UnknownSlice(u32),
    #[error("slice {0} already exists")]
    AlreadyExists(u32),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("orchestrator is shut down")]
    ShutDown,
}

impl OrchError {
    /// Stable identifier used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Validation(_) => "validation",
            Self::Conflict(_) => "fdm_conflict",
            Self::ChannelInUse(_) => "channel_in_use",
            Self::UnknownSlice(_) => "unknown_slice",
            Self::AlreadyExists(_) => "already_exists",
            Self::Backend(_) => "backend",
            Self::ShutDown => "shut_down",
        }
    }

    /// Slices standing in the way, for conflict errors.
    pub fn blockers(&self, own: u32) -> Vec<u32> {
        match self {
            Self::Conflict(r) => r.blockers_of(SliceId(own)).into_iter().map(|s| s.0).collect(),
            _ => Vec::new(),
        }
    }
}
