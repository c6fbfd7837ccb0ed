//! Transport and streaming measurements.

mod latency;
pub mod pubsub;
mod report;
mod stream;

pub use latency::{
    capacity_estimate, compare_transports, latency_oneway, CapacityEstimate, Comparison, LatencyStats,
    TransportKind, STAMP_BYTES, SUBFRAME_US,
};
pub use report::{emit_report, render_report, summary_table, BenchResult, REPORT_VERSION};
pub use stream::{stream, sustained_stream_test, SliceStreamReport, StreamOptions, StreamReport, StreamSlice, STALL_THRESHOLD};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("benchmark setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Vchan(#[from] crate::vchan::VchanError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
