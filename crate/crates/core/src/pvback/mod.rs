//! The privileged backend: owns the radio and runs one RX and one TX
//! streamer per slice, moving a subframe per iteration between the slice's
//! radio channel and its data channels `pv/<id>/rx` and `pv/<id>/tx`.
//!
//! Timestamps cross the channel once. The RX streamer writes a
//! [`TimestampHeader`] with the tick of its first subframe and raw samples
//! after that; the TX streamer waits for that first tick and submits its
//! k-th subframe at `t0 + tx_offset + k * samples_per_subframe`. A slice
//! that counts samples the same way needs no further coordination.

mod sched;
pub mod wire;

pub use sched::{thread_cpu_ns, yield_priority};
pub use wire::{BadMagic, Ledger, TimestampHeader, TIMESTAMP_HEADER_LEN, TIMESTAMP_MAGIC};

use crate::iqcore::{
    encode_samples, ConflictKind, ConflictReport, FdmPlan, IqSample, PlanEntry, SampleTimestamp, SliceConfig, SliceId,
    SAMPLE_BYTES,
};
use crate::radiodev::{ChannelTuning, RadioError, TxStatus, VirtualRadio};
use crate::vchan::{ChannelStats, RendezvousStore, StreamChannel, VchanError, DEFAULT_RING_CAPACITY};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};
use thiserror::Error;

/// How long a streamer blocks on a channel before re-checking for stop.
const STOP_POLL: Duration = Duration::from_millis(50);

pub fn rx_path(id: SliceId) -> String {
    format!("pv/{}/rx", id.0)
}

pub fn tx_path(id: SliceId) -> String {
    format!("pv/{}/tx", id.0)
}

pub fn ctrl_path(id: SliceId) -> String {
    format!("pv/{}/ctrl", id.0)
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("FDM conflict: {0}")]
    FdmConflict(ConflictReport),
    #[error("radio channel {0} is already in use")]
    ChannelInUse(u32),
    #[error("slice {0} already has a live session")]
    AlreadyActive(SliceId),
    #[error("no session for slice {0}")]
    UnknownSlice(SliceId),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Vchan(#[from] VchanError),
}

#[derive(Debug, Clone)]
pub struct BackendOptions {
    pub ring_capacity: u32,
    /// Keep every RX and TX timestamp for later comparison.
    pub record_ledger: bool,
    /// Cores to pin the RX and TX streamers to.
    pub rx_core: Option<usize>,
    pub tx_core: Option<usize>,
}

impl Default for BackendOptions {
    fn default() -> Self {
        Self { ring_capacity: DEFAULT_RING_CAPACITY, record_ledger: false, rx_core: None, tx_core: None }
    }
}

#[derive(Default)]
struct StreamerCounters {
    timestamp: AtomicU64,
    iterations: AtomicU64,
    first_run_done: AtomicBool,
    underruns: AtomicU64,
    overruns: AtomicU64,
    gap_samples: AtomicU64,
    samples: AtomicU64,
    cpu_ns: AtomicU64,
}

/// Counters of one streamer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StreamerState {
    /// Tick of the most recent subframe: the first one's plus
    /// `iterations * samples_per_subframe`.
    pub timestamp: u64,
    /// Subframes after the first.
    pub iterations: u64,
    pub first_run_done: bool,
    /// TX submissions the radio reported late.
    pub underruns: u64,
    /// RX blocks the radio had to skip because the streamer lagged.
    pub overruns: u64,
    /// Silent samples written in place of skipped ones.
    pub gap_samples: u64,
    pub samples: u64,
    pub cpu_ns: u64,
}

impl StreamerCounters {
    fn snapshot(&self) -> StreamerState {
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        StreamerState {
            timestamp: g(&self.timestamp),
            iterations: g(&self.iterations),
            first_run_done: self.first_run_done.load(Ordering::Acquire),
            underruns: g(&self.underruns),
            overruns: g(&self.overruns),
            gap_samples: g(&self.gap_samples),
            samples: g(&self.samples),
            cpu_ns: g(&self.cpu_ns),
        }
    }
}

struct Shared {
    slice_id: SliceId,
    channel: usize,
    samples_per_subframe: u64,
    tx_offset: u64,
    stop: AtomicBool,
    rx: StreamerCounters,
    tx: StreamerCounters,
    t0: Mutex<Option<u64>>,
    t0_ready: Condvar,
    record: bool,
    rx_ledger: Mutex<Vec<u64>>,
    tx_ledger: Mutex<Vec<u64>>,
    origin: Instant,
    first_rx_ns: AtomicU64,
    last_rx_ns: AtomicU64,
    tx_backlog_high_water: AtomicU64,
    rx_alive: AtomicBool,
    tx_alive: AtomicBool,
}

/// Live metrics of one session, or its final counters once stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub slice_id: SliceId,
    pub prbs: u32,
    pub radio_channel: u32,
    pub alive: bool,
    pub rx: StreamerState,
    pub tx: StreamerState,
    /// Samples per second delivered to the slice since the first subframe.
    pub achieved_rate: f64,
    /// Highest fill of the RX ring, in bytes.
    pub rx_ring_high_water: u64,
    /// Most bytes seen waiting on the TX ring.
    pub tx_ring_high_water: u64,
    /// Time the RX streamer spent blocked on a full ring.
    pub rx_write_stall_ns: u64,
    pub uptime_s: f64,
}

pub struct SliceSession {
    config: SliceConfig,
    shared: Arc<Shared>,
    rx_stats: Arc<ChannelStats>,
    rx_thread: Option<JoinHandle<()>>,
    tx_thread: Option<JoinHandle<()>>,
}

impl SliceSession {
    pub fn config(&self) -> &SliceConfig {
        &self.config
    }

    pub fn metrics(&self) -> SessionMetrics {
        let s = &self.shared;
        let rx = s.rx.snapshot();
        let span_ns = s.last_rx_ns.load(Ordering::Relaxed).saturating_sub(s.first_rx_ns.load(Ordering::Relaxed));
        let achieved_rate = if span_ns > 0 {
            (rx.iterations * s.samples_per_subframe) as f64 / (span_ns as f64 / 1e9)
        } else {
            0.0
        };
        SessionMetrics {
            slice_id: s.slice_id,
            prbs: self.config.profile.prbs(),
            radio_channel: self.config.radio_channel.0,
            alive: s.rx_alive.load(Ordering::Relaxed) && s.tx_alive.load(Ordering::Relaxed),
            rx,
            tx: s.tx.snapshot(),
            achieved_rate,
            rx_ring_high_water: self.rx_stats.high_water(),
            tx_ring_high_water: s.tx_backlog_high_water.load(Ordering::Relaxed),
            rx_write_stall_ns: self.rx_stats.write_stall_ns.load(Ordering::Relaxed),
            uptime_s: s.origin.elapsed().as_secs_f64(),
        }
    }

    fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.shared.t0_ready.notify_all();
        for h in [self.rx_thread.take(), self.tx_thread.take()].into_iter().flatten() {
            let _ = h.join();
        }
    }
}

struct Finished {
    metrics: SessionMetrics,
    rx_ledger: Vec<u64>,
    tx_ledger: Vec<u64>,
}

#[derive(Default)]
struct State {
    plan: FdmPlan,
    live: HashMap<SliceId, SliceSession>,
    finished: HashMap<SliceId, Finished>,
}

/// A setting applied to a live session's radio channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    RxFreq(u64),
    TxFreq(u64),
    RxGain(i32),
    TxGain(i32),
    Rate(u64),
}

pub const MIN_FREQ_HZ: u64 = 10_000_000;
pub const MAX_FREQ_HZ: u64 = 6_000_000_000;
pub const MAX_GAIN_DB: i32 = 31;

pub struct Backend {
    radio: VirtualRadio,
    store: RendezvousStore,
    opts: BackendOptions,
    state: Mutex<State>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn conflict_error(report: ConflictReport, cfg: &SliceConfig) -> SessionError {
    let kinds: Vec<ConflictKind> = report.conflicts.iter().map(|c| c.kind).collect();
    if kinds.contains(&ConflictKind::DuplicateSliceId) {
        SessionError::AlreadyActive(cfg.slice_id)
    } else if kinds.iter().all(|k| *k == ConflictKind::SharedRadioChannel) {
        SessionError::ChannelInUse(cfg.radio_channel.0)
    } else {
        SessionError::FdmConflict(report)
    }
}

fn check_freq(hz: u64) -> Result<u64, SessionError> {
    if (MIN_FREQ_HZ..=MAX_FREQ_HZ).contains(&hz) {
        Ok(hz)
    } else {
        Err(SessionError::OutOfRange(format!("frequency {hz} Hz outside {MIN_FREQ_HZ}..={MAX_FREQ_HZ}")))
    }
}

impl Backend {
    pub fn new(radio: VirtualRadio, store: RendezvousStore, opts: BackendOptions) -> Self {
        Self { radio, store, opts, state: Mutex::new(State::default()) }
    }

    pub fn radio(&self) -> &VirtualRadio {
        &self.radio
    }

    pub fn store(&self) -> &RendezvousStore {
        &self.store
    }

    /// Validates `cfg` against the live plan, tunes its radio channel,
    /// publishes its data channels and starts both streamers.
    pub fn start_session(&self, cfg: &SliceConfig) -> Result<SessionMetrics, SessionError> {
        let mut st = lock(&self.state);
        if st.live.contains_key(&cfg.slice_id) {
            return Err(SessionError::AlreadyActive(cfg.slice_id));
        }
        let ch = cfg.radio_channel.index();
        if ch >= self.radio.n_channels() {
            return Err(SessionError::OutOfRange(format!(
                "radio channel {ch} (radio has {})",
                self.radio.n_channels()
            )));
        }
        check_freq(cfg.dl_freq_hz)?;
        check_freq(cfg.ul_freq_hz)?;
        st.plan.with(PlanEntry::from_config(cfg)).validate().map_err(|r| conflict_error(r, cfg))?;
        let tuning = ChannelTuning {
            rx_freq_hz: cfg.ul_freq_hz,
            tx_freq_hz: cfg.dl_freq_hz,
            rate: cfg.profile.sample_rate(),
            rx_gain_db: cfg.rx_gain_db.clamp(0, MAX_GAIN_DB),
            tx_gain_db: cfg.tx_gain_db.clamp(0, MAX_GAIN_DB),
            active: true,
        };
        self.radio.activate(ch, tuning).map_err(|e| match e {
            RadioError::Busy(_) => SessionError::ChannelInUse(cfg.radio_channel.0),
            other => other.into(),
        })?;
        let cap = self.opts.ring_capacity;
        let channels = StreamChannel::server_create(&self.store, &rx_path(cfg.slice_id), cap, cap, true)
            .and_then(|rx| Ok((rx, StreamChannel::server_create(&self.store, &tx_path(cfg.slice_id), cap, cap, true)?)));
        let (rx_chan, tx_chan) = match channels {
            Ok(pair) => pair,
            Err(e) => {
                let _ = self.radio.deactivate(ch);
                return Err(e.into());
            }
        };
        let shared = Arc::new(Shared {
            slice_id: cfg.slice_id,
            channel: ch,
            samples_per_subframe: cfg.profile.samples_per_subframe(),
            tx_offset: cfg.effective_tx_offset(),
            stop: AtomicBool::new(false),
            rx: StreamerCounters::default(),
            tx: StreamerCounters::default(),
            t0: Mutex::new(None),
            t0_ready: Condvar::new(),
            record: self.opts.record_ledger,
            rx_ledger: Mutex::new(Vec::new()),
            tx_ledger: Mutex::new(Vec::new()),
            origin: Instant::now(),
            first_rx_ns: AtomicU64::new(0),
            last_rx_ns: AtomicU64::new(0),
            tx_backlog_high_water: AtomicU64::new(0),
            rx_alive: AtomicBool::new(true),
            tx_alive: AtomicBool::new(true),
        });
        let rx_stats = rx_chan.stats();
        let spawn = |name: String, f: Box<dyn FnOnce() + Send>| thread::Builder::new().name(name).spawn(f);
        let (s, r, core) = (shared.clone(), self.radio.clone(), self.opts.rx_core);
        let rx_thread = spawn(format!("pv-rx-{}", cfg.slice_id.0), Box::new(move || rx_streamer(s, r, rx_chan, core)));
        let (s, r, core) = (shared.clone(), self.radio.clone(), self.opts.tx_core);
        let tx_thread = spawn(format!("pv-tx-{}", cfg.slice_id.0), Box::new(move || tx_streamer(s, r, tx_chan, core)));
        let mut session = SliceSession {
            config: cfg.clone(),
            shared,
            rx_stats,
            rx_thread: None,
            tx_thread: None,
        };
        match (rx_thread, tx_thread) {
            (Ok(a), Ok(b)) => {
                session.rx_thread = Some(a);
                session.tx_thread = Some(b);
            }
            (a, b) => {
                session.rx_thread = a.ok();
                session.tx_thread = b.ok();
                session.stop();
                let _ = self.radio.deactivate(ch);
                return Err(SessionError::Vchan(VchanError::Io(std::io::Error::other("could not spawn streamers"))));
            }
        }
        let metrics = session.metrics();
        st.plan.insert(PlanEntry::from_config(cfg));
        st.finished.remove(&cfg.slice_id);
        st.live.insert(cfg.slice_id, session);
        tracing::info!(slice = cfg.slice_id.0, channel = ch, prbs = cfg.profile.prbs(), "session started");
        Ok(metrics)
    }

    /// Stops a session and returns its final counters. Stopping an already
    /// stopped slice returns the same counters again.
    pub fn stop_session(&self, id: SliceId) -> Result<SessionMetrics, SessionError> {
        let mut st = lock(&self.state);
        if let Some(mut session) = st.live.remove(&id) {
            session.stop();
            let _ = self.radio.deactivate(session.shared.channel);
            st.plan.remove(id);
            let mut metrics = session.metrics();
            metrics.alive = false;
            let fin = Finished {
                metrics: metrics.clone(),
                rx_ledger: std::mem::take(&mut *lock(&session.shared.rx_ledger)),
                tx_ledger: std::mem::take(&mut *lock(&session.shared.tx_ledger)),
            };
            st.finished.insert(id, fin);
            tracing::info!(slice = id.0, "session stopped");
            return Ok(metrics);
        }
        st.finished.get(&id).map(|f| f.metrics.clone()).ok_or(SessionError::UnknownSlice(id))
    }

    pub fn stop_all(&self) {
        let ids: Vec<SliceId> = lock(&self.state).live.keys().copied().collect();
        for id in ids {
            let _ = self.stop_session(id);
        }
    }

    /// Applies a setting and returns the value actually in effect. Gains
    /// are clamped; frequencies must stay in range and keep the plan valid.
    pub fn apply(&self, id: SliceId, setting: Setting) -> Result<Setting, SessionError> {
        let mut st = lock(&self.state);
        let State { plan, live, .. } = &mut *st;
        let session = live.get_mut(&id).ok_or(SessionError::UnknownSlice(id))?;
        let ch = session.shared.channel;
        let mut cfg = session.config.clone();
        let applied = match setting {
            Setting::RxFreq(hz) => {
                cfg.ul_freq_hz = check_freq(hz)?;
                Setting::RxFreq(hz)
            }
            Setting::TxFreq(hz) => {
                cfg.dl_freq_hz = check_freq(hz)?;
                Setting::TxFreq(hz)
            }
            Setting::RxGain(db) => {
                cfg.rx_gain_db = db.clamp(0, MAX_GAIN_DB);
                Setting::RxGain(cfg.rx_gain_db)
            }
            Setting::TxGain(db) => {
                cfg.tx_gain_db = db.clamp(0, MAX_GAIN_DB);
                Setting::TxGain(cfg.tx_gain_db)
            }
            Setting::Rate(rate) => {
                if rate != cfg.profile.sample_rate() {
                    return Err(SessionError::OutOfRange(format!(
                        "rate {rate} does not match the slice's {} sps profile",
                        cfg.profile.sample_rate()
                    )));
                }
                Setting::Rate(rate)
            }
        };
        if matches!(setting, Setting::RxFreq(_) | Setting::TxFreq(_)) {
            let mut trial = plan.clone();
            trial.remove(id);
            trial.with(PlanEntry::from_config(&cfg)).validate().map_err(|r| conflict_error(r, &cfg))?;
        }
        match applied {
            Setting::RxFreq(hz) => self.radio.set_rx_freq(ch, hz).map(|_| ()),
            Setting::TxFreq(hz) => self.radio.set_tx_freq(ch, hz).map(|_| ()),
            Setting::RxGain(db) => self.radio.set_rx_gain(ch, db).map(|_| ()),
            Setting::TxGain(db) => self.radio.set_tx_gain(ch, db).map(|_| ()),
            Setting::Rate(_) => Ok(()),
        }?;
        plan.remove(id);
        plan.insert(PlanEntry::from_config(&cfg));
        session.config = cfg;
        Ok(applied)
    }

    pub fn session_count(&self) -> usize {
        lock(&self.state).live.len()
    }

    pub fn is_live(&self, id: SliceId) -> bool {
        lock(&self.state).live.contains_key(&id)
    }

    pub fn plan(&self) -> FdmPlan {
        lock(&self.state).plan.clone()
    }

    pub fn config(&self, id: SliceId) -> Option<SliceConfig> {
        lock(&self.state).live.get(&id).map(|s| s.config.clone())
    }

    /// Metrics of every live session, ordered by slice id, under one lock.
    pub fn metrics(&self) -> Vec<SessionMetrics> {
        let st = lock(&self.state);
        let mut out: Vec<SessionMetrics> = st.live.values().map(SliceSession::metrics).collect();
        out.sort_by_key(|m| m.slice_id);
        out
    }

    pub fn session_metrics(&self, id: SliceId) -> Option<SessionMetrics> {
        let st = lock(&self.state);
        st.live.get(&id).map(SliceSession::metrics).or_else(|| st.finished.get(&id).map(|f| f.metrics.clone()))
    }

    /// Recorded RX and TX timestamps (requires `record_ledger`).
    pub fn ledgers(&self, id: SliceId) -> Option<(Vec<u64>, Vec<u64>)> {
        let st = lock(&self.state);
        if let Some(s) = st.live.get(&id) {
            return Some((lock(&s.shared.rx_ledger).clone(), lock(&s.shared.tx_ledger).clone()));
        }
        st.finished.get(&id).map(|f| (f.rx_ledger.clone(), f.tx_ledger.clone()))
    }
}

impl Drop for Backend {
    fn drop(&mut self) {
        self.stop_all();
    }
}

/// Writes all of `buf` unless the session is stopped first.
fn write_all(chan: &mut StreamChannel, buf: &[u8], stop: &AtomicBool) -> Result<bool, VchanError> {
    let mut done = 0;
    while done < buf.len() {
        if stop.load(Ordering::Relaxed) {
            return Ok(false);
        }
        done += chan.write_until(&buf[done..], Instant::now() + STOP_POLL)?;
    }
    Ok(true)
}

fn read_exact(chan: &mut StreamChannel, buf: &mut [u8], stop: &AtomicBool) -> Result<bool, VchanError> {
    let mut done = 0;
    while done < buf.len() {
        if stop.load(Ordering::Relaxed) {
            return Ok(false);
        }
        done += chan.read_until(&mut buf[done..], Instant::now() + STOP_POLL)?;
    }
    Ok(true)
}

fn rx_streamer(s: Arc<Shared>, radio: VirtualRadio, mut chan: StreamChannel, core: Option<usize>) {
    sched::tune_current_thread(core);
    let sps = s.samples_per_subframe as usize;
    let mut samples = vec![IqSample::ZERO; sps];
    let mut out = vec![0u8; TIMESTAMP_HEADER_LEN + sps * SAMPLE_BYTES];
    let silence = vec![0u8; sps * SAMPLE_BYTES];
    let mut ledger = Ledger::default();
    let result = (|| -> Result<(), String> {
        while !s.stop.load(Ordering::Relaxed) {
            let md = radio.recv_into(s.channel, &mut samples).map_err(|e| e.to_string())?;
            let mut start = TIMESTAMP_HEADER_LEN;
            if !ledger.is_started() {
                ledger.begin(md.timestamp);
                *s.t0.lock().unwrap_or_else(|e| e.into_inner()) = Some(md.timestamp.0);
                s.t0_ready.notify_all();
                out[..TIMESTAMP_HEADER_LEN].copy_from_slice(&TimestampHeader { timestamp: md.timestamp }.encode());
                start = 0;
            } else if md.gap > 0 {
                // keep the sample count equal to device time: fill the hole
                s.rx.overruns.fetch_add(1, Ordering::Relaxed);
                s.rx.gap_samples.fetch_add(md.gap, Ordering::Relaxed);
                for _ in 0..md.gap / sps as u64 {
                    if !write_all(&mut chan, &silence, &s.stop).map_err(|e| e.to_string())? {
                        return Ok(());
                    }
                    step(&s, &s.rx, &mut ledger, sps as u64, &s.rx_ledger);
                }
            }
            encode_samples(&samples, &mut out[TIMESTAMP_HEADER_LEN..]);
            if !write_all(&mut chan, &out[start..], &s.stop).map_err(|e| e.to_string())? {
                return Ok(());
            }
            let now_ns = s.origin.elapsed().as_nanos() as u64;
            if !s.rx.first_run_done.load(Ordering::Relaxed) {
                s.first_rx_ns.store(now_ns, Ordering::Relaxed);
            }
            s.last_rx_ns.store(now_ns, Ordering::Relaxed);
            step(&s, &s.rx, &mut ledger, sps as u64, &s.rx_ledger);
            s.rx.cpu_ns.store(thread_cpu_ns(), Ordering::Relaxed);
        }
        Ok(())
    })();
    if let Err(e) = result {
        tracing::debug!(slice = s.slice_id.0, error = %e, "rx streamer ended");
    }
    s.rx_alive.store(false, Ordering::Relaxed);
    chan.close();
}

/// Books one subframe at `ledger.next()` and advances.
fn step(s: &Shared, c: &StreamerCounters, ledger: &mut Ledger, n: u64, record: &Mutex<Vec<u64>>) {
    let ts = ledger.next().0;
    if s.record {
        lock(record).push(ts);
    }
    c.timestamp.store(ts, Ordering::Relaxed);
    c.samples.fetch_add(n, Ordering::Relaxed);
    if c.first_run_done.load(Ordering::Relaxed) {
        c.iterations.fetch_add(1, Ordering::Relaxed);
    } else {
        c.first_run_done.store(true, Ordering::Release);
    }
    ledger.advance(n);
}

fn tx_streamer(s: Arc<Shared>, radio: VirtualRadio, mut chan: StreamChannel, core: Option<usize>) {
    sched::tune_current_thread(core);
    // parked until the RX streamer has published its first timestamp
    let t0 = {
        let mut t0 = lock(&s.t0);
        loop {
            if s.stop.load(Ordering::Relaxed) {
                s.tx_alive.store(false, Ordering::Relaxed);
                return;
            }
            if let Some(t) = *t0 {
                break t;
            }
            t0 = s.t0_ready.wait_timeout(t0, STOP_POLL).unwrap_or_else(|e| e.into_inner()).0;
        }
    };
    let sps = s.samples_per_subframe as usize;
    let mut ledger = Ledger::started(SampleTimestamp(t0 + s.tx_offset));
    let mut bytes = vec![0u8; sps * SAMPLE_BYTES];
    let mut samples = vec![IqSample::ZERO; sps];
    let result = (|| -> Result<(), String> {
        loop {
            let backlog = chan.data_ready() as u64;
            s.tx_backlog_high_water.fetch_max(backlog, Ordering::Relaxed);
            match read_exact(&mut chan, &mut bytes, &s.stop) {
                Ok(true) => {}
                Ok(false) => return Ok(()),
                Err(VchanError::EndOfStream) => return Ok(()),
                Err(e) => return Err(e.to_string()),
            }
            crate::iqcore::decode_samples(&bytes, &mut samples);
            match radio.send(s.channel, &samples, ledger.next()).map_err(|e| e.to_string())? {
                TxStatus::Sent => {}
                TxStatus::Late => {
                    s.tx.underruns.fetch_add(1, Ordering::Relaxed);
                }
            }
            step(&s, &s.tx, &mut ledger, sps as u64, &s.tx_ledger);
            s.tx.cpu_ns.store(thread_cpu_ns(), Ordering::Relaxed);
        }
    })();
    if let Err(e) = result {
        tracing::debug!(slice = s.slice_id.0, error = %e, "tx streamer ended");
    }
    s.tx_alive.store(false, Ordering::Relaxed);
    chan.close();
}
