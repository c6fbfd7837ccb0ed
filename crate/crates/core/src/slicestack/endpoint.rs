use super::modem::{modulate, Demodulator};
use super::trx::{TrxError, TrxState};
use super::{Frame, PhyProfile};
use crate::iqcore::{BandwidthProfile, IqSample, SampleTimestamp};
use crate::radiodev::{RadioError, UeEndpoint};
use crate::remoting::{DeviceError, SdrDevice};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

/// The UE transmits uplink this many subframes after the downlink it has
/// just received.
pub const UL_OFFSET_SUBFRAMES: u64 = 4;
/// Every payload starts with the sender's slice id (u32) and the tick at
/// which the frame was generated (u64).
pub const PAYLOAD_HEADER_LEN: usize = 12;
/// Silence after each frame, in symbols.
const GUARD_SYMBOLS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Enb,
    Ue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Traffic {
    /// Payload bits per second handed to the link.
    pub offered_bps: f64,
    pub payload_len: usize,
    /// Frames waiting beyond this are dropped at the sender.
    pub queue_limit: usize,
}

impl Traffic {
    pub fn new(offered_bps: f64, payload_len: usize) -> Self {
        Self { offered_bps, payload_len: payload_len.max(PAYLOAD_HEADER_LEN), queue_limit: 64 }
    }

    pub fn idle() -> Self {
        Self::new(0.0, PAYLOAD_HEADER_LEN)
    }
}

/// Latest stats of a running endpoint, readable from other threads.
pub type LiveStats = Arc<Mutex<Option<EndpointStats>>>;

/// Subframes between updates of [`RunLimits::live`].
pub const LIVE_EVERY: u64 = 50;

/// When to stop a run and where to log.
#[derive(Default)]
pub struct RunLimits {
    pub subframes: Option<u64>,
    pub stop: Option<Arc<AtomicBool>>,
    /// Emits a [`StatsRecord`] line every this many subframes.
    pub report_every: Option<u64>,
    pub sink: Option<Box<dyn Write + Send>>,
    /// Refreshed every [`LIVE_EVERY`] subframes and once at the end.
    pub live: Option<LiveStats>,
}

impl RunLimits {
    pub fn subframes(n: u64) -> Self {
        Self { subframes: Some(n), ..Self::default() }
    }

    pub fn until(stop: Arc<AtomicBool>) -> Self {
        Self { stop: Some(stop), ..Self::default() }
    }

    fn done(&self, n: u64) -> bool {
        self.subframes.is_some_and(|max| n >= max) || self.stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointStats {
    pub role: Role,
    pub slice_id: u32,
    pub phy: String,
    pub subframes: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub frames_lost: u64,
    /// Frames that decoded cleanly but came from another slice.
    pub cross_slice_frames: u64,
    /// Frames the generator produced while the queue was full.
    pub offered_dropped: u64,
    pub payload_bytes_received: u64,
    pub goodput_bps: f64,
    pub loss_rate: f64,
    pub latency_mean_ms: f64,
    pub latency_max_ms: f64,
    /// Stream time covered, from sample ticks.
    pub radio_seconds: f64,
}

/// One line of an endpoint's stats log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub t_s: f64,
    pub role: Role,
    pub slice_id: u32,
    pub goodput_bps: f64,
    pub loss: f64,
    pub latency_ms: f64,
}

/// Link-layer state of one end of a slice, independent of how samples
/// reach it.
pub struct SliceEndpoint {
    role: Role,
    slice_id: u32,
    phy: &'static PhyProfile,
    rate: f64,
    traffic: Traffic,
    credit: f64,
    queue: VecDeque<Frame>,
    pending: VecDeque<IqSample>,
    next_seq: u32,
    demod: Demodulator,
    subframes: u64,
    samples: u64,
    frames_sent: u64,
    received: u64,
    first_seq: Option<u32>,
    last_seq: u32,
    cross: u64,
    dropped: u64,
    bytes: u64,
    latency_sum: u64,
    latency_max: u64,
}

impl SliceEndpoint {
    pub fn new(role: Role, slice_id: u32, phy: &'static PhyProfile, profile: BandwidthProfile, traffic: Traffic) -> Self {
        let mut traffic = traffic;
        traffic.payload_len = traffic.payload_len.clamp(PAYLOAD_HEADER_LEN, phy.max_payload);
        Self {
            role,
            slice_id,
            phy,
            rate: profile.sample_rate() as f64,
            traffic,
            credit: 0.0,
            queue: VecDeque::new(),
            pending: VecDeque::new(),
            next_seq: 0,
            demod: Demodulator::new(phy.clone()),
            subframes: 0,
            samples: 0,
            frames_sent: 0,
            received: 0,
            first_seq: None,
            last_seq: 0,
            cross: 0,
            dropped: 0,
            bytes: 0,
            latency_sum: 0,
            latency_max: 0,
        }
    }

    /// Consumes one received block and fills the next block to transmit.
    pub fn process(&mut self, rx: &[IqSample], rx_tick: u64, tx: &mut [IqSample]) {
        self.subframes += 1;
        self.samples += rx.len() as u64;
        self.demod.push(rx, rx_tick);
        for r in self.demod.drain() {
            let p = &r.frame.payload;
            let from = (p.len() >= PAYLOAD_HEADER_LEN).then(|| u32::from_le_bytes(p[..4].try_into().unwrap()));
            if from != Some(self.slice_id) {
                self.cross += 1;
                continue;
            }
            let gen = u64::from_le_bytes(p[4..12].try_into().unwrap());
            let lat = r.tick.saturating_sub(gen);
            self.latency_sum += lat;
            self.latency_max = self.latency_max.max(lat);
            self.received += 1;
            self.bytes += p.len() as u64;
            self.first_seq.get_or_insert(r.frame.seq);
            self.last_seq = self.last_seq.max(r.frame.seq);
        }

        let bits = (self.traffic.payload_len * 8) as f64;
        self.credit += self.traffic.offered_bps * rx.len() as f64 / self.rate / bits;
        while self.credit >= 1.0 {
            self.credit -= 1.0;
            if self.queue.len() >= self.traffic.queue_limit {
                self.dropped += 1;
                continue;
            }
            let f = self.make_frame(rx_tick);
            self.queue.push_back(f);
        }
        while self.pending.len() < tx.len() {
            let Some(f) = self.queue.pop_front() else { break };
            self.pending.extend(modulate(self.phy, &f).samples());
            self.pending.extend(std::iter::repeat_n(IqSample::ZERO, GUARD_SYMBOLS * self.phy.samples_per_symbol));
            self.frames_sent += 1;
        }
        let n = self.pending.len().min(tx.len());
        for (o, s) in tx.iter_mut().zip(self.pending.drain(..n)) {
            *o = s;
        }
        tx[n..].fill(IqSample::ZERO);
    }

    fn make_frame(&mut self, tick: u64) -> Frame {
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        let mut payload = Vec::with_capacity(self.traffic.payload_len);
        payload.extend_from_slice(&self.slice_id.to_le_bytes());
        payload.extend_from_slice(&tick.to_le_bytes());
        let mut x = u64::from(seq) ^ (u64::from(self.slice_id) << 32);
        while payload.len() < self.traffic.payload_len {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            payload.push((x >> 56) as u8);
        }
        Frame::new(seq, payload)
    }

    pub fn stats(&self) -> EndpointStats {
        let secs = self.samples as f64 / self.rate;
        let expected = self.first_seq.map_or(0, |f| u64::from(self.last_seq - f) + 1);
        let lost = expected.saturating_sub(self.received);
        let ms = |ticks: f64| ticks / self.rate * 1e3;
        EndpointStats {
            role: self.role,
            slice_id: self.slice_id,
            phy: self.phy.name.to_string(),
            subframes: self.subframes,
            frames_sent: self.frames_sent,
            frames_received: self.received,
            frames_lost: lost,
            cross_slice_frames: self.cross,
            offered_dropped: self.dropped,
            payload_bytes_received: self.bytes,
            goodput_bps: if secs > 0.0 { self.bytes as f64 * 8.0 / secs } else { 0.0 },
            loss_rate: if expected > 0 { lost as f64 / expected as f64 } else { 0.0 },
            latency_mean_ms: if self.received > 0 { ms(self.latency_sum as f64 / self.received as f64) } else { 0.0 },
            latency_max_ms: ms(self.latency_max as f64),
            radio_seconds: secs,
        }
    }

    pub fn record(&self) -> StatsRecord {
        let s = self.stats();
        StatsRecord {
            t_s: s.radio_seconds,
            role: s.role,
            slice_id: s.slice_id,
            goodput_bps: s.goodput_bps,
            loss: s.loss_rate,
            latency_ms: s.latency_mean_ms,
        }
    }

    fn report(&self, limits: &mut RunLimits) {
        if let Some(live) = &limits.live {
            if self.subframes % LIVE_EVERY == 0 {
                *live.lock().unwrap_or_else(|e| e.into_inner()) = Some(self.stats());
            }
        }
        let (Some(every), Some(sink)) = (limits.report_every, limits.sink.as_mut()) else { return };
        if every > 0 && self.subframes % every == 0 {
            if let Ok(line) = serde_json::to_string(&self.record()) {
                let _ = writeln!(sink, "{line}");
            }
        }
    }

    fn finish(&self, limits: &RunLimits) -> EndpointStats {
        let s = self.stats();
        if let Some(live) = &limits.live {
            *live.lock().unwrap_or_else(|e| e.into_inner()) = Some(s.clone());
        }
        s
    }
}

fn ended(e: &TrxError) -> bool {
    matches!(e, TrxError::Device(DeviceError::EndOfStream))
}

/// Base-station loop over a device: read a subframe, process, write the
/// next one at the ledger tick. A session that ends mid-run returns the
/// stats gathered so far.
pub fn run_enb(
    dev: &mut dyn SdrDevice,
    ep: &mut SliceEndpoint,
    mut limits: RunLimits,
) -> Result<EndpointStats, TrxError> {
    dev.find()?;
    let sps = dev.config().profile.samples_per_subframe() as usize;
    let mut trx = TrxState::new(dev.config().effective_tx_offset());
    let mut rx = vec![IqSample::ZERO; sps];
    let mut tx = vec![IqSample::ZERO; sps];
    let mut n = 0;
    while !limits.done(n) {
        let ts = match trx.trx_read(dev, &mut rx) {
            Ok(ts) => ts,
            Err(e) if ended(&e) => break,
            Err(e) => return Err(e),
        };
        ep.process(&rx, ts.0, &mut tx);
        let at = trx.next_tx_timestamp().expect("set by the first read");
        match trx.trx_write(dev, &tx, at) {
            Ok(()) => {}
            Err(e) if ended(&e) => break,
            Err(e) => return Err(e),
        }
        n += 1;
        ep.report(&mut limits);
    }
    Ok(ep.finish(&limits))
}

/// UE loop directly on the radio's UE end.
pub fn run_ue(ue: &mut UeEndpoint, ep: &mut SliceEndpoint, mut limits: RunLimits) -> Result<EndpointStats, RadioError> {
    let sps = ue.radio().tuning(ue.channel())?.rate as usize / 1000;
    let mut rx = vec![IqSample::ZERO; sps];
    let mut tx = vec![IqSample::ZERO; sps];
    let mut n = 0;
    while !limits.done(n) {
        let md = match ue.recv_into(&mut rx) {
            Ok(md) => md,
            // the slice was torn down under us
            Err(RadioError::Inactive(_)) => break,
            Err(e) => return Err(e),
        };
        ep.process(&rx, md.timestamp.0, &mut tx);
        match ue.send(&tx, SampleTimestamp(md.timestamp.0 + UL_OFFSET_SUBFRAMES * sps as u64)) {
            Ok(_) => {}
            Err(RadioError::Inactive(_)) => break,
            Err(e) => return Err(e),
        }
        n += 1;
        ep.report(&mut limits);
    }
    Ok(ep.finish(&limits))
}
