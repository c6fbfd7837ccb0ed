use super::pubsub::{Publisher, Subscriber};
use super::BenchError;
use crate::iqcore::BandwidthProfile;
use crate::vchan::{RendezvousStore, StreamChannel, DEFAULT_RING_CAPACITY};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

/// Bytes at the head of every measured message: sequence number then send
/// time, both u64 little-endian.
pub const STAMP_BYTES: usize = 16;

/// Subframe period in microseconds.
pub const SUBFRAME_US: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    ShmVchan,
    PubsubSocket,
}

impl TransportKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::ShmVchan => "shm",
            Self::PubsubSocket => "pubsub",
        }
    }
}

impl std::str::FromStr for TransportKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "shm" | "shm_vchan" => Ok(Self::ShmVchan),
            "pubsub" | "pubsub_socket" => Ok(Self::PubsubSocket),
            other => Err(format!("unknown transport {other:?} (expected shm or pubsub)")),
        }
    }
}

/// Order statistics over raw per-message latencies, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub min_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
    pub mean_us: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles over the recorded samples. `None` when empty.
    pub fn from_samples(mut us: Vec<f64>) -> Option<Self> {
        if us.is_empty() {
            return None;
        }
        us.sort_by(|a, b| a.total_cmp(b));
        let n = us.len();
        let rank = |p: f64| us[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        Some(Self {
            samples: n,
            min_us: us[0],
            median_us: rank(0.5),
            p99_us: rank(0.99),
            max_us: us[n - 1],
            mean_us: us.iter().sum::<f64>() / n as f64,
        })
    }
}

impl fmt::Display for LatencyStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} min={:.2}us median={:.2}us p99={:.2}us max={:.2}us mean={:.2}us",
            self.samples, self.min_us, self.median_us, self.p99_us, self.max_us, self.mean_us
        )
    }
}

trait Sender: Send {
    fn send(&mut self, msg: &[u8]) -> Result<(), BenchError>;
}

trait Receiver: Send {
    fn recv(&mut self, buf: &mut Vec<u8>) -> Result<(), BenchError>;
}

struct ShmTx(StreamChannel);
struct ShmRx(StreamChannel, usize);

impl Sender for ShmTx {
    fn send(&mut self, msg: &[u8]) -> Result<(), BenchError> {
        self.0.write(msg)?;
        Ok(())
    }
}

impl Receiver for ShmRx {
    fn recv(&mut self, buf: &mut Vec<u8>) -> Result<(), BenchError> {
        buf.resize(self.1, 0);
        self.0.read_into(buf)?;
        Ok(())
    }
}

struct PubTx(Publisher);
struct SubRx(Subscriber);

impl Sender for PubTx {
    fn send(&mut self, msg: &[u8]) -> Result<(), BenchError> {
        if self.0.publish(msg)? == 0 {
            return Err(BenchError::Setup("subscriber went away".into()));
        }
        Ok(())
    }
}

impl Receiver for SubRx {
    fn recv(&mut self, buf: &mut Vec<u8>) -> Result<(), BenchError> {
        self.0.recv_into(buf)?;
        Ok(())
    }
}

fn endpoints(kind: TransportKind, msg_bytes: usize) -> Result<(Box<dyn Sender>, Box<dyn Receiver>, Option<RendezvousStore>), BenchError> {
    match kind {
        TransportKind::ShmVchan => {
            let store = RendezvousStore::temporary()?;
            let cap = DEFAULT_RING_CAPACITY.max((2 * msg_bytes).next_power_of_two() as u32);
            let server = StreamChannel::server_create(&store, "bench/latency", cap, cap, true)?;
            let client = StreamChannel::client_connect(&store, 0, "bench/latency")?;
            Ok((Box::new(ShmTx(server)), Box::new(ShmRx(client, msg_bytes)), Some(store)))
        }
        TransportKind::PubsubSocket => {
            let publisher = Publisher::bind_loopback()?;
            let sub = Subscriber::connect(publisher.addr())?;
            publisher.wait_for_subscribers(1, Duration::from_secs(5))?;
            Ok((Box::new(PubTx(publisher)), Box::new(SubRx(sub)), None))
        }
    }
}

/// One-way latency with one message in flight: the producer stamps the
/// monotonic clock into the message head, the consumer takes the delta once
/// the whole message has arrived, and the producer waits for that before
/// sending the next. The first `warmup` messages are discarded.
///
/// Messages shorter than the stamp carry it out of band instead (a shared
/// word written just before sending), which is exact with one in flight.
pub fn latency_oneway(kind: TransportKind, msg_bytes: usize, iters: usize, warmup: usize) -> Result<LatencyStats, BenchError> {
    if msg_bytes == 0 {
        return Err(BenchError::Setup("messages must be at least 1 byte".into()));
    }
    if iters == 0 {
        return Err(BenchError::Setup("iters must be positive".into()));
    }
    let (mut tx, mut rx, store) = endpoints(kind, msg_bytes)?;
    let origin = Instant::now();
    let total = warmup + iters;
    let acked = Arc::new(AtomicU64::new(0));
    let side_stamp = Arc::new(AtomicU64::new(0));
    let in_band = msg_bytes >= STAMP_BYTES;

    let consumer_ack = acked.clone();
    let consumer_stamp = side_stamp.clone();
    let consumer = thread::Builder::new().name("bench-consumer".into()).spawn(move || -> Result<Vec<f64>, BenchError> {
        let mut buf = Vec::with_capacity(msg_bytes);
        let mut out = Vec::with_capacity(iters);
        for n in 0..total as u64 {
            rx.recv(&mut buf)?;
            let arrived = origin.elapsed().as_nanos() as u64;
            let (seq, sent) = if in_band {
                (
                    u64::from_le_bytes(buf[0..8].try_into().unwrap()),
                    u64::from_le_bytes(buf[8..16].try_into().unwrap()),
                )
            } else {
                (n, consumer_stamp.load(Ordering::Acquire))
            };
            if seq >= warmup as u64 {
                out.push(arrived.saturating_sub(sent) as f64 / 1000.0);
            }
            consumer_ack.store(seq + 1, Ordering::Release);
        }
        Ok(out)
    })?;

    let mut msg = vec![0u8; msg_bytes];
    for (n, b) in msg.iter_mut().enumerate() {
        *b = n as u8;
    }
    let producer_result = (|| -> Result<(), BenchError> {
        for seq in 0..total as u64 {
            let now = origin.elapsed().as_nanos() as u64;
            if in_band {
                msg[0..8].copy_from_slice(&seq.to_le_bytes());
                msg[8..16].copy_from_slice(&now.to_le_bytes());
            } else {
                side_stamp.store(now, Ordering::Release);
            }
            tx.send(&msg)?;
            let deadline = Instant::now() + Duration::from_secs(5);
            while acked.load(Ordering::Acquire) <= seq {
                if consumer.is_finished() || Instant::now() > deadline {
                    return Err(BenchError::Setup("consumer stopped responding".into()));
                }
                thread::yield_now();
            }
        }
        Ok(())
    })();
    drop(tx);
    let samples = consumer.join().map_err(|_| BenchError::Setup("consumer panicked".into()))?;
    if let Some(store) = store {
        let _ = store.remove_all();
    }
    producer_result?;
    LatencyStats::from_samples(samples?).ok_or_else(|| BenchError::Setup("no samples".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub msg_bytes: usize,
    pub iters: usize,
    pub shm: LatencyStats,
    pub pubsub: LatencyStats,
    /// pubsub mean / shm mean
    pub ratio: f64,
}

/// Measures both transports back to back (never concurrently) with identical
/// message size and iteration count.
pub fn compare_transports(msg_bytes: usize, iters: usize) -> Result<Comparison, BenchError> {
    let warmup = (iters / 10).max(100);
    let shm = latency_oneway(TransportKind::ShmVchan, msg_bytes, iters, warmup)?;
    let pubsub = latency_oneway(TransportKind::PubsubSocket, msg_bytes, iters, warmup)?;
    Ok(Comparison { msg_bytes, iters, ratio: pubsub.mean_us / shm.mean_us, shm, pubsub })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub prbs: u32,
    pub transport: TransportKind,
    pub mean_oneway_us: f64,
    /// One subframe written plus one read per slice per subframe period.
    pub per_slice_cost_us: f64,
    pub max_slices: u64,
    /// Always `methodology-derived`: computed from latency, not observed with live slices.
    pub basis: String,
}

/// `floor(subframe period / (2 * mean one-way latency))`: each slice moves one
/// subframe in each direction every period.
pub fn capacity_estimate(profile: BandwidthProfile, transport: TransportKind, measured: &LatencyStats) -> CapacityEstimate {
    let per_slice = 2.0 * measured.mean_us;
    let max_slices = if per_slice > 0.0 { (SUBFRAME_US / per_slice).floor() as u64 } else { u64::MAX };
    CapacityEstimate {
        prbs: profile.prbs(),
        transport,
        mean_oneway_us: measured.mean_us,
        per_slice_cost_us: per_slice,
        max_slices,
        basis: "methodology-derived".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats_with_mean(mean: f64) -> LatencyStats {
        LatencyStats::from_samples(vec![mean; 10]).unwrap()
    }

    #[test]
    fn order_statistics() {
        let s = LatencyStats::from_samples((1..=100).map(f64::from).rev().collect()).unwrap();
        assert_eq!(s.samples, 100);
        assert_eq!(s.min_us, 1.0);
        assert_eq!(s.median_us, 50.0);
        assert_eq!(s.p99_us, 99.0);
        assert_eq!(s.max_us, 100.0);
        assert!((s.mean_us - 50.5).abs() < 1e-12);
        assert!(LatencyStats::from_samples(vec![]).is_none());
    }

    #[test]
    fn capacity_arithmetic() {
        let shm = capacity_estimate(BandwidthProfile::Prb25, TransportKind::ShmVchan, &stats_with_mean(5.0));
        assert_eq!(shm.max_slices, 100);
        let ps = capacity_estimate(BandwidthProfile::Prb25, TransportKind::PubsubSocket, &stats_with_mean(75.0));
        assert_eq!(ps.max_slices, 6);
        assert!(shm.max_slices > ps.max_slices);
    }

    #[test]
    fn transport_names_parse() {
        assert_eq!("shm".parse::<TransportKind>(), Ok(TransportKind::ShmVchan));
        assert_eq!("pubsub".parse::<TransportKind>(), Ok(TransportKind::PubsubSocket));
        assert!("zmq".parse::<TransportKind>().is_err());
    }

    #[test]
    fn small_runs_produce_sane_stats() {
        for kind in [TransportKind::ShmVchan, TransportKind::PubsubSocket] {
            let s = latency_oneway(kind, 1024, 200, 20).unwrap();
            assert_eq!(s.samples, 200);
            assert!(s.min_us > 0.0 && s.min_us <= s.median_us && s.median_us <= s.p99_us && s.p99_us <= s.max_us);
        }
    }

    #[test]
    fn one_byte_messages_use_side_stamp() {
        let s = latency_oneway(TransportKind::ShmVchan, 1, 100, 10).unwrap();
        assert_eq!(s.samples, 100);
        assert!(latency_oneway(TransportKind::ShmVchan, 0, 10, 0).is_err());
    }
}
