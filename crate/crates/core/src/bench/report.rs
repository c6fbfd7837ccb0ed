use super::{CapacityEstimate, Comparison, LatencyStats, StreamReport, TransportKind};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub const REPORT_VERSION: u32 = 1;

/// One measurement in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchResult {
    Latency { transport: TransportKind, msg_bytes: usize, stats: LatencyStats },
    Comparison(Comparison),
    Capacity(CapacityEstimate),
    Stream(StreamReport),
}

#[derive(Serialize)]
struct Header {
    report: &'static str,
    version: u32,
    generated_unix_ms: u128,
    records: usize,
}

/// The report text: a header line, one JSON record per result, then a
/// plain-text summary table. Only the header's timestamp varies between
/// emissions of the same results.
pub fn render_report(results: &[BenchResult], generated_unix_ms: u128) -> String {
    let header = Header { report: "pvran-bench", version: REPORT_VERSION, generated_unix_ms, records: results.len() };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    if results.is_empty() {
        return out;
    }
    for r in results {
        out.push_str(&serde_json::to_string(r).expect("results serialize"));
        out.push('\n');
    }
    out.push('\n');
    out.push_str(&summary_table(results));
    out
}

fn latency_row(out: &mut String, name: &str, bytes: usize, s: &LatencyStats) {
    let _ = writeln!(
        out,
        "{name:<8} {bytes:>8} {:>8} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
        s.samples, s.min_us, s.median_us, s.p99_us, s.max_us, s.mean_us
    );
}

pub fn summary_table(results: &[BenchResult]) -> String {
    let mut out = String::new();
    let lat: Vec<_> = results
        .iter()
        .filter(|r| matches!(r, BenchResult::Latency { .. } | BenchResult::Comparison(_)))
        .collect();
    if !lat.is_empty() {
        out.push_str("latency (us)\n");
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "transport", "bytes", "samples", "min", "median", "p99", "max", "mean"
        );
        for r in lat {
            match r {
                BenchResult::Latency { transport, msg_bytes, stats } => latency_row(&mut out, transport.name(), *msg_bytes, stats),
                BenchResult::Comparison(c) => {
                    latency_row(&mut out, "shm", c.msg_bytes, &c.shm);
                    latency_row(&mut out, "pubsub", c.msg_bytes, &c.pubsub);
                    let _ = writeln!(out, "ratio pubsub/shm at {} bytes: {:.2}", c.msg_bytes, c.ratio);
                }
                _ => {}
            }
        }
    }
    let caps: Vec<_> = results.iter().filter_map(|r| if let BenchResult::Capacity(c) = r { Some(c) } else { None }).collect();
    if !caps.is_empty() {
        out.push_str("\ncapacity: floor(1000 us / (2 x mean one-way latency)), derived from measurement\n");
        let _ = writeln!(out, "{:>5} {:<8} {:>12} {:>14} {:>10}", "prbs", "transport", "mean_us", "per_slice_us", "max_slices");
        for c in caps {
            let _ = writeln!(
                out,
                "{:>5} {:<8} {:>12.2} {:>14.2} {:>10}",
                c.prbs,
                c.transport.name(),
                c.mean_oneway_us,
                c.per_slice_cost_us,
                c.max_slices
            );
        }
    }
    let streams: Vec<_> = results.iter().filter_map(|r| if let BenchResult::Stream(s) = r { Some(s) } else { None }).collect();
    if !streams.is_empty() {
        out.push_str("\nstream\n");
        let _ = writeln!(
            out,
            "{:>5} {:>5} {:<6} {:<6} {:>9} {:>14} {:>11} {:>9} {:>7} {:>7} {:>12} {:>8}",
            "slice", "prbs", "phy", "clock", "seconds", "achieved_sps", "rate_err", "underruns", "rx_cpu", "tx_cpu", "dl_goodput", "dl_loss"
        );
        for s in streams {
            for x in &s.slices {
                let _ = writeln!(
                    out,
                    "{:>5} {:>5} {:<6} {:<6} {:>9.2} {:>14.0} {:>+11.5} {:>9} {:>6.1}% {:>6.1}% {:>12.0} {:>8.4}",
                    x.slice_id,
                    x.prbs,
                    x.phy,
                    s.clock,
                    s.duration_s,
                    x.achieved_rate,
                    x.rate_error,
                    x.underruns,
                    x.rx_cpu_pct,
                    x.tx_cpu_pct,
                    x.ue.goodput_bps,
                    x.ue.loss_rate
                );
            }
            let _ = writeln!(out, "host stalls over 3 ms: {} (worst {:.2} ms)", s.host_stalls, s.worst_host_stall_ms);
        }
    }
    out
}

/// Writes the report to `path` and returns its text.
pub fn emit_report(results: &[BenchResult], path: &Path) -> io::Result<String> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    let text = render_report(results, now);
    std::fs::write(path, &text)?;
    Ok(text)
}
