//! Simulated multi-channel SDR and the medium joining it to UE endpoints.
//!
//! Device time is counted in ticks at each channel's own sample rate. In
//! paced mode a `recv` of `n` samples returns once the clock has passed the
//! last of them; in fast mode nothing waits and time is whatever the
//! receivers have consumed.
//!
//! The ideal medium joins base-station channel `c` to the UE attached to
//! `c` and nothing else. The wideband medium up-converts every channel's
//! transmissions into one shared stream per direction and each receiver
//! recovers its own band by shifting, filtering and decimating, so a
//! receiver hears its neighbours exactly as far as the filter lets them
//! through. The wideband path is computed per block and is far slower than
//! real time; it is meant for fast-clock runs.

mod capture;
mod clock;
pub mod dsp;
mod timeline;

pub use capture::{read_capture, sidecar_path, CaptureHeader, CaptureWriter};
pub use clock::{sleep_until, ClockMode};
pub use dsp::{mix_down, mix_up};

use crate::iqcore::{IqBuffer, IqSample, SampleTimestamp};
use clock::SampleClock;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;
use thiserror::Error;
use timeline::Link;

/// Signal power the phy modulators emit (amplitude 8192); SNR is relative to it.
pub const DEFAULT_REFERENCE_POWER: f64 = 8192.0 * 8192.0;

/// Fast-mode cap on samples waiting for a slow receiver, per link.
const FAST_PENDING_LIMIT: usize = 1 << 24;

#[derive(Debug, Error)]
pub enum RadioError {
    #[error("no radio channel {0}")]
    InvalidChannel(usize),
    #[error("radio channel {0} is not active")]
    Inactive(usize),
    #[error("radio channel {0} is already in use")]
    Busy(usize),
    #[error("a UE is already attached to channel {0}")]
    UeAttached(usize),
    #[error("band at offset {offset_hz} Hz, rate {rate} does not fit in a {wideband_rate} sps wideband")]
    BandOutsideWideband { offset_hz: i64, rate: u64, wideband_rate: u64 },
    #[error("invalid radio options: {0}")]
    InvalidOptions(String),
    #[error("empty sample buffer")]
    EmptyBuffer,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelTuning {
    pub rx_freq_hz: u64,
    pub tx_freq_hz: u64,
    pub rate: u64,
    pub rx_gain_db: i32,
    pub tx_gain_db: i32,
    pub active: bool,
}

impl ChannelTuning {
    pub fn new(rx_freq_hz: u64, tx_freq_hz: u64, rate: u64) -> Self {
        Self { rx_freq_hz, tx_freq_hz, rate, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidebandConfig {
    pub wideband_rate: u64,
    /// Centre of the shared downlink stream; a channel's DL offset is its
    /// `tx_freq_hz` minus this.
    pub dl_center_hz: u64,
    /// Centre of the shared uplink stream, against `rx_freq_hz`.
    pub ul_center_hz: u64,
    pub taps: usize,
}

impl WidebandConfig {
    pub fn new(wideband_rate: u64, dl_center_hz: u64, ul_center_hz: u64) -> Self {
        Self { wideband_rate, dl_center_hz, ul_center_hz, taps: dsp::DEFAULT_TAPS }
    }

    fn dl_offset(&self, t: &ChannelTuning) -> i64 {
        t.tx_freq_hz as i64 - self.dl_center_hz as i64
    }

    fn ul_offset(&self, t: &ChannelTuning) -> i64 {
        t.rx_freq_hz as i64 - self.ul_center_hz as i64
    }

    fn check(&self, t: &ChannelTuning) -> Result<(), RadioError> {
        dsp::check_band(self.dl_offset(t), t.rate, self.wideband_rate)?;
        dsp::check_band(self.ul_offset(t), t.rate, self.wideband_rate)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MediumMode {
    #[default]
    IdealLoopback,
    WidebandFdm(WidebandConfig),
}

#[derive(Debug, Clone)]
pub struct RadioOptions {
    /// Initial tuning of every channel; the length is the channel count.
    pub channels: Vec<ChannelTuning>,
    pub master_clock_rate: u64,
    pub medium: MediumMode,
    pub clock: ClockMode,
    pub epoch_tick: u64,
    /// How far a receiver may fall behind before samples are dropped.
    pub rx_buffer: Duration,
    /// Writes every channel's transmissions to `ch<N>-tx.iq` here.
    pub capture_dir: Option<PathBuf>,
}

impl RadioOptions {
    pub fn new(n_channels: usize, master_clock_rate: u64) -> Self {
        Self {
            channels: vec![ChannelTuning::default(); n_channels],
            master_clock_rate,
            medium: MediumMode::IdealLoopback,
            clock: ClockMode::Paced,
            epoch_tick: 0,
            rx_buffer: Duration::from_millis(20),
            capture_dir: None,
        }
    }

    pub fn medium(mut self, medium: MediumMode) -> Self {
        self.medium = medium;
        self
    }

    pub fn clock(mut self, clock: ClockMode) -> Self {
        self.clock = clock;
        self
    }

    pub fn epoch_tick(mut self, tick: u64) -> Self {
        self.epoch_tick = tick;
        self
    }

    pub fn capture_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.capture_dir = Some(dir.into());
        self
    }

    pub fn tune(mut self, ch: usize, tuning: ChannelTuning) -> Self {
        self.channels[ch] = tuning;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RxMetadata {
    /// Tick of the first returned sample.
    pub timestamp: SampleTimestamp,
    /// Samples skipped just before this block because the caller lagged.
    pub gap: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxStatus {
    Sent,
    /// The start tick had already passed; nothing was emitted.
    Late,
}

#[derive(Debug, Default)]
struct Counters {
    rx_samples: AtomicU64,
    rx_overflows: AtomicU64,
    rx_gap_samples: AtomicU64,
    tx_samples: AtomicU64,
    tx_late: AtomicU64,
    ue_rx_samples: AtomicU64,
    ue_tx_samples: AtomicU64,
    ue_tx_late: AtomicU64,
    dropped_samples: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelCounters {
    pub rx_samples: u64,
    pub rx_overflows: u64,
    pub rx_gap_samples: u64,
    pub tx_samples: u64,
    pub tx_late: u64,
    pub ue_rx_samples: u64,
    pub ue_tx_samples: u64,
    pub ue_tx_late: u64,
    pub dropped_samples: u64,
}

struct Awgn {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Awgn {
    fn new(snr_db: f64, reference_power: f64, seed: u64) -> Self {
        let noise_power = reference_power / 10f64.powf(snr_db / 10.0);
        let sigma = (noise_power / 2.0).sqrt();
        Self { rng: ChaCha8Rng::seed_from_u64(seed), normal: Normal::new(0.0, sigma).expect("finite sigma") }
    }

    fn apply(&mut self, out: &mut [IqSample]) {
        for s in out {
            let i = f64::from(s.i) + self.normal.sample(&mut self.rng);
            let q = f64::from(s.q) + self.normal.sample(&mut self.rng);
            *s = IqSample::new(
                i.round().clamp(-32768.0, 32767.0) as i16,
                q.round().clamp(-32768.0, 32767.0) as i16,
            );
        }
    }
}

struct ChannelState {
    tuning: ChannelTuning,
    rx_next: Option<u64>,
    capture: Option<CaptureWriter>,
    ue_attached: bool,
    ue_latency: u64,
}

struct Channel {
    state: Mutex<ChannelState>,
    /// Base station to UE.
    dl: Mutex<Link>,
    /// UE to base station; also holds the uplink noise source.
    ul: Mutex<Link>,
    ul_noise: Mutex<Option<Awgn>>,
    counters: Counters,
}

struct Inner {
    clock: SampleClock,
    medium: MediumMode,
    master_clock_rate: u64,
    rx_buffer: Duration,
    capture_dir: Option<PathBuf>,
    channels: Vec<Channel>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Shared handle to one simulated radio.
#[derive(Clone)]
pub struct VirtualRadio {
    inner: Arc<Inner>,
}

/// Direction of travel on the medium.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Base station to UE.
    Downlink,
    /// UE to base station.
    Uplink,
}

impl VirtualRadio {
    pub fn open(opts: RadioOptions) -> Result<Self, RadioError> {
        if opts.channels.is_empty() {
            return Err(RadioError::InvalidOptions("at least one channel is required".into()));
        }
        if opts.master_clock_rate == 0 {
            return Err(RadioError::InvalidOptions("master clock rate must be positive".into()));
        }
        let margin = match opts.medium {
            MediumMode::IdealLoopback => 0,
            MediumMode::WidebandFdm(w) => {
                if w.taps % 2 == 0 || w.taps == 0 {
                    return Err(RadioError::InvalidOptions("filter length must be odd".into()));
                }
                for t in opts.channels.iter().filter(|t| t.active) {
                    w.check(t)?;
                }
                w.taps as u64 + 1
            }
        };
        for t in opts.channels.iter().filter(|t| t.active) {
            if t.rate == 0 {
                return Err(RadioError::InvalidOptions("active channel needs a positive rate".into()));
            }
        }
        let channels = opts
            .channels
            .iter()
            .map(|&tuning| Channel {
                state: Mutex::new(ChannelState {
                    tuning,
                    rx_next: None,
                    capture: None,
                    ue_attached: false,
                    ue_latency: 0,
                }),
                dl: Mutex::new(Link::with_margin(margin)),
                ul: Mutex::new(Link::with_margin(margin)),
                ul_noise: Mutex::new(None),
                counters: Counters::default(),
            })
            .collect();
        let radio = Self {
            inner: Arc::new(Inner {
                clock: SampleClock::new(opts.clock, opts.epoch_tick),
                medium: opts.medium,
                master_clock_rate: opts.master_clock_rate,
                rx_buffer: opts.rx_buffer,
                capture_dir: opts.capture_dir,
                channels,
            }),
        };
        for (ch, t) in opts.channels.iter().enumerate() {
            if t.active {
                radio.register_bs_reader(ch);
            }
        }
        Ok(radio)
    }

    pub fn n_channels(&self) -> usize {
        self.inner.channels.len()
    }

    pub fn master_clock_rate(&self) -> u64 {
        self.inner.master_clock_rate
    }

    pub fn clock_mode(&self) -> ClockMode {
        self.inner.clock.mode
    }

    pub fn medium(&self) -> MediumMode {
        self.inner.medium
    }

    fn channel(&self, ch: usize) -> Result<&Channel, RadioError> {
        self.inner.channels.get(ch).ok_or(RadioError::InvalidChannel(ch))
    }

    pub fn tuning(&self, ch: usize) -> Result<ChannelTuning, RadioError> {
        Ok(lock(&self.channel(ch)?.state).tuning)
    }

    pub fn counters(&self, ch: usize) -> Result<ChannelCounters, RadioError> {
        let c = &self.channel(ch)?.counters;
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        Ok(ChannelCounters {
            rx_samples: g(&c.rx_samples),
            rx_overflows: g(&c.rx_overflows),
            rx_gap_samples: g(&c.rx_gap_samples),
            tx_samples: g(&c.tx_samples),
            tx_late: g(&c.tx_late),
            ue_rx_samples: g(&c.ue_rx_samples),
            ue_tx_samples: g(&c.ue_tx_samples),
            ue_tx_late: g(&c.ue_tx_late),
            dropped_samples: g(&c.dropped_samples),
        })
    }

    /// Claims a channel with the given tuning. Fails if it is already active.
    pub fn activate(&self, ch: usize, mut tuning: ChannelTuning) -> Result<(), RadioError> {
        if tuning.rate == 0 {
            return Err(RadioError::InvalidOptions("rate must be positive".into()));
        }
        if let MediumMode::WidebandFdm(w) = self.inner.medium {
            w.check(&tuning)?;
        }
        {
            let mut st = lock(&self.channel(ch)?.state);
            if st.tuning.active {
                return Err(RadioError::Busy(ch));
            }
            tuning.active = true;
            st.tuning = tuning;
            st.rx_next = None;
        }
        self.register_bs_reader(ch);
        Ok(())
    }

    /// Releases a channel. Idempotent.
    pub fn deactivate(&self, ch: usize) -> Result<(), RadioError> {
        let c = self.channel(ch)?;
        {
            let mut st = lock(&c.state);
            st.tuning.active = false;
            st.rx_next = None;
            if let Some(mut cap) = st.capture.take() {
                cap.flush()?;
            }
        }
        for link in self.uplinks_heard_by(ch) {
            lock(&self.inner.channels[link].ul).remove_reader(ch);
        }
        Ok(())
    }

    fn update_tuning(&self, ch: usize, f: impl FnOnce(&mut ChannelTuning)) -> Result<ChannelTuning, RadioError> {
        let mut st = lock(&self.channel(ch)?.state);
        let mut t = st.tuning;
        f(&mut t);
        if t.active {
            if let MediumMode::WidebandFdm(w) = self.inner.medium {
                w.check(&t)?;
            }
        }
        if t.rate != st.tuning.rate {
            st.rx_next = None;
        }
        st.tuning = t;
        Ok(t)
    }

    pub fn set_rx_freq(&self, ch: usize, hz: u64) -> Result<u64, RadioError> {
        self.update_tuning(ch, |t| t.rx_freq_hz = hz).map(|t| t.rx_freq_hz)
    }

    pub fn set_tx_freq(&self, ch: usize, hz: u64) -> Result<u64, RadioError> {
        self.update_tuning(ch, |t| t.tx_freq_hz = hz).map(|t| t.tx_freq_hz)
    }

    /// Gains are recorded; the simulated medium is unity-gain.
    pub fn set_rx_gain(&self, ch: usize, db: i32) -> Result<i32, RadioError> {
        self.update_tuning(ch, |t| t.rx_gain_db = db).map(|t| t.rx_gain_db)
    }

    pub fn set_tx_gain(&self, ch: usize, db: i32) -> Result<i32, RadioError> {
        self.update_tuning(ch, |t| t.tx_gain_db = db).map(|t| t.tx_gain_db)
    }

    pub fn set_rate(&self, ch: usize, rate: u64) -> Result<u64, RadioError> {
        if rate == 0 {
            return Err(RadioError::InvalidOptions("rate must be positive".into()));
        }
        self.update_tuning(ch, |t| t.rate = rate).map(|t| t.rate)
    }

    /// Current device time of a channel: the wall-clock tick when paced,
    /// the receive position when fast.
    pub fn now(&self, ch: usize) -> Result<SampleTimestamp, RadioError> {
        let st = lock(&self.channel(ch)?.state);
        Ok(SampleTimestamp(match self.inner.clock.mode {
            ClockMode::Paced => self.inner.clock.now_tick(st.tuning.rate.max(1)),
            ClockMode::Fast => st.rx_next.unwrap_or(self.inner.clock.epoch_tick),
        }))
    }

    /// Uplinks whose samples reach base-station receiver `ch`.
    fn uplinks_heard_by(&self, ch: usize) -> Vec<usize> {
        match self.inner.medium {
            MediumMode::IdealLoopback => vec![ch],
            MediumMode::WidebandFdm(_) => (0..self.n_channels()).collect(),
        }
    }

    fn register_bs_reader(&self, ch: usize) {
        for link in self.uplinks_heard_by(ch) {
            lock(&self.inner.channels[link].ul).add_reader(ch);
        }
    }

    /// Next block position for a receiver at `rate`, waiting in paced mode.
    /// Returns (start tick, gap skipped).
    fn next_block(&self, next: &mut Option<u64>, rate: u64, n: u64) -> (u64, u64) {
        let clock = &self.inner.clock;
        match clock.mode {
            ClockMode::Fast => {
                let start = next.unwrap_or(clock.epoch_tick);
                *next = Some(start + n);
                (start, 0)
            }
            ClockMode::Paced => {
                let now = clock.now_tick(rate);
                // first block starts on the next multiple of the block size
                let mut start = next.unwrap_or_else(|| now.div_ceil(n) * n);
                let depth = (self.inner.rx_buffer.as_nanos() * u128::from(rate) / 1_000_000_000) as u64;
                let mut gap = 0;
                if now > start + depth.max(n) {
                    let behind = now - start - depth.max(n);
                    let skip = behind.div_ceil(n) * n;
                    start += skip;
                    gap = skip;
                }
                *next = Some(start + n);
                clock.wait_for(start + n, rate);
                (start, gap)
            }
        }
    }

    /// Receives `out.len()` samples on base-station channel `ch`.
    pub fn recv_into(&self, ch: usize, out: &mut [IqSample]) -> Result<RxMetadata, RadioError> {
        if out.is_empty() {
            return Err(RadioError::EmptyBuffer);
        }
        let c = self.channel(ch)?;
        let n = out.len() as u64;
        let (tuning, mut next) = {
            let st = lock(&c.state);
            if !st.tuning.active {
                return Err(RadioError::Inactive(ch));
            }
            (st.tuning, st.rx_next)
        };
        let (start, gap) = self.next_block(&mut next, tuning.rate, n);
        {
            let mut st = lock(&c.state);
            if !st.tuning.active {
                return Err(RadioError::Inactive(ch));
            }
            st.rx_next = next;
        }
        self.gather(Direction::Uplink, ch, &tuning, start, out);
        if let Some(noise) = lock(&c.ul_noise).as_mut() {
            noise.apply(out);
        }
        c.counters.rx_samples.fetch_add(n, Ordering::Relaxed);
        if gap > 0 {
            c.counters.rx_overflows.fetch_add(1, Ordering::Relaxed);
            c.counters.rx_gap_samples.fetch_add(gap, Ordering::Relaxed);
        }
        Ok(RxMetadata { timestamp: SampleTimestamp(start), gap })
    }

    pub fn recv(&self, ch: usize, n: usize) -> Result<(IqBuffer, RxMetadata), RadioError> {
        let mut buf = IqBuffer::zeroed(n);
        let md = self.recv_into(ch, buf.samples_mut())?;
        Ok((buf, md))
    }

    /// Schedules `samples` for transmission on channel `ch` starting at `at`.
    pub fn send(&self, ch: usize, samples: &[IqSample], at: SampleTimestamp) -> Result<TxStatus, RadioError> {
        if samples.is_empty() {
            return Err(RadioError::EmptyBuffer);
        }
        let c = self.channel(ch)?;
        let mut st = lock(&c.state);
        if !st.tuning.active {
            return Err(RadioError::Inactive(ch));
        }
        let tuning = st.tuning;
        let status = self.emit(&c.dl, ch, st.ue_latency, tuning.rate, samples, at.0);
        match status {
            TxStatus::Late => {
                c.counters.tx_late.fetch_add(1, Ordering::Relaxed);
            }
            TxStatus::Sent => {
                c.counters.tx_samples.fetch_add(samples.len() as u64, Ordering::Relaxed);
                if let Some(dir) = &self.inner.capture_dir {
                    if st.capture.is_none() {
                        let header = CaptureHeader {
                            sample_rate: tuning.rate,
                            center_freq_hz: tuning.tx_freq_hz,
                            start_tick: at.0,
                        };
                        st.capture = Some(CaptureWriter::create(&dir.join(format!("ch{ch}-tx.iq")), &header)?);
                    }
                    st.capture.as_mut().expect("just created").write_at(at.0, samples)?;
                }
            }
        }
        Ok(status)
    }

    /// Puts a transmission on a link, applying the late rule.
    fn emit(&self, link: &Mutex<Link>, own: usize, latency: u64, rate: u64, samples: &[IqSample], at: u64) -> TxStatus {
        let clock = &self.inner.clock;
        let mut link = lock(link);
        let late = match clock.mode {
            ClockMode::Paced => at < clock.now_tick(rate),
            // reader positions are kept in source ticks
            ClockMode::Fast => link.reader_next(own).is_some_and(|next| at < next),
        };
        if late {
            return TxStatus::Late;
        }
        if !link.has_readers() {
            return TxStatus::Sent;
        }
        link.timeline.insert(at, samples);
        let dropped = match clock.mode {
            ClockMode::Paced => {
                let depth = (self.inner.rx_buffer.as_nanos() * u128::from(rate) / 1_000_000_000) as u64;
                let horizon = clock.now_tick(rate).saturating_sub(depth + link.margin + latency);
                link.timeline.prune_before(horizon);
                0
            }
            ClockMode::Fast => link.timeline.cap(FAST_PENDING_LIMIT),
        };
        if dropped > 0 {
            self.inner.channels[own].counters.dropped_samples.fetch_add(dropped, Ordering::Relaxed);
        }
        TxStatus::Sent
    }

    /// Fills `out` with what receiver `(who, ch)` hears over `[start, start+len)`.
    fn gather(&self, who: Direction, ch: usize, tuning: &ChannelTuning, start: u64, out: &mut [IqSample]) {
        out.fill(IqSample::ZERO);
        let latency = lock(&self.inner.channels[ch].state).ue_latency;
        let first = start as i64 - latency as i64;
        let end = start + out.len() as u64;
        match self.inner.medium {
            MediumMode::IdealLoopback => {
                let c = &self.inner.channels[ch];
                let mut link = lock(match who {
                    Direction::Uplink => &c.ul,
                    Direction::Downlink => &c.dl,
                });
                link.timeline.overlay(first, out);
                link.advance(ch, end.saturating_sub(latency));
            }
            MediumMode::WidebandFdm(w) => self.gather_wideband(&w, who, ch, tuning, first, out),
        }
    }

    fn gather_wideband(&self, w: &WidebandConfig, who: Direction, ch: usize, own: &ChannelTuning, first: i64, out: &mut [IqSample]) {
        let half = (w.taps / 2) as i64;
        let lr = (w.wideband_rate / own.rate) as i64;
        let b = first + out.len() as i64;
        let lo = first * lr - half;
        let hi = (b - 1) * lr + half + 1;
        let acc = self.wideband_sum(w, who, Some(ch), lo, hi);
        let offset = match who {
            Direction::Uplink => w.ul_offset(own),
            Direction::Downlink => w.dl_offset(own),
        };
        let h = dsp::channel_filter(w.taps, own.rate, w.wideband_rate);
        let get = |n: i64| acc[(n - lo) as usize];
        let base = dsp::downconvert_window(&get, lr as u64, offset, w.wideband_rate, &h, first, b);
        out.copy_from_slice(&dsp::to_samples(&base));
    }

    /// Sum of every active channel's up-converted transmissions over
    /// wideband ticks `[lo, hi)`. `reader` marks what it has consumed.
    fn wideband_sum(&self, w: &WidebandConfig, who: Direction, reader: Option<usize>, lo: i64, hi: i64) -> Vec<Complex64> {
        let wide = w.wideband_rate;
        let half = (w.taps / 2) as i64;
        let mut acc = vec![Complex64::new(0.0, 0.0); (hi - lo) as usize];
        for src in &self.inner.channels {
            let t = lock(&src.state).tuning;
            if !t.active || t.rate == 0 || wide % t.rate != 0 {
                continue;
            }
            let (link, offset) = match who {
                Direction::Uplink => (&src.ul, w.ul_offset(&t)),
                Direction::Downlink => (&src.dl, w.dl_offset(&t)),
            };
            let lj = (wide / t.rate) as i64;
            let h = dsp::channel_filter(w.taps, t.rate, wide);
            let t_lo = (lo - half).div_euclid(lj);
            let t_hi = (hi + half).div_euclid(lj) + 1;
            let mut block = vec![IqSample::ZERO; (t_hi - t_lo) as usize];
            let mut link = lock(link);
            link.timeline.overlay(t_lo, &mut block);
            if let Some(id) = reader {
                link.advance(id, t_lo.max(0) as u64);
            }
            drop(link);
            let src_c = dsp::to_complex(&block);
            let get = |t: i64| {
                let k = t - t_lo;
                if k >= 0 && (k as usize) < src_c.len() {
                    src_c[k as usize]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            };
            dsp::upconvert_window(&get, lj as u64, offset, wide, &h, lo, hi, &mut acc);
        }
        acc
    }

    /// The shared wideband stream over wideband ticks `[lo, hi)`, as any
    /// receiver would see it before channel filtering. Wideband medium only;
    /// samples are only retained while some receiver is listening.
    pub fn wideband_stream(&self, dir: Direction, lo: u64, hi: u64) -> Result<IqBuffer, RadioError> {
        let MediumMode::WidebandFdm(w) = self.inner.medium else {
            return Err(RadioError::InvalidOptions("not a wideband medium".into()));
        };
        let acc = self.wideband_sum(&w, dir, None, lo as i64, hi.max(lo) as i64);
        Ok(IqBuffer::new(dsp::to_samples(&acc)))
    }

    /// Attaches the UE end of channel `ch`.
    pub fn attach_ue(&self, ch: usize, opts: UeOptions) -> Result<UeEndpoint, RadioError> {
        let c = self.channel(ch)?;
        {
            let mut st = lock(&c.state);
            if st.ue_attached {
                return Err(RadioError::UeAttached(ch));
            }
            st.ue_attached = true;
            st.ue_latency = opts.latency_samples;
        }
        *lock(&c.ul_noise) = opts.snr_db.map(|snr| Awgn::new(snr, opts.reference_power, opts.seed ^ 0x5555_aaaa));
        for link in self.downlinks_heard_by(ch) {
            lock(&self.inner.channels[link].dl).add_reader(ch);
        }
        Ok(UeEndpoint {
            radio: self.clone(),
            ch,
            next: None,
            noise: opts.snr_db.map(|snr| Awgn::new(snr, opts.reference_power, opts.seed)),
        })
    }

    fn downlinks_heard_by(&self, ch: usize) -> Vec<usize> {
        self.uplinks_heard_by(ch)
    }

    fn detach_ue(&self, ch: usize) {
        let c = &self.inner.channels[ch];
        for link in self.downlinks_heard_by(ch) {
            lock(&self.inner.channels[link].dl).remove_reader(ch);
        }
        *lock(&c.ul_noise) = None;
        let mut st = lock(&c.state);
        st.ue_attached = false;
        st.ue_latency = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeOptions {
    /// One-way delay in both directions, in samples.
    pub latency_samples: u64,
    /// Adds white Gaussian noise at this SNR to both directions.
    pub snr_db: Option<f64>,
    pub reference_power: f64,
    pub seed: u64,
}

impl Default for UeOptions {
    fn default() -> Self {
        Self { latency_samples: 0, snr_db: None, reference_power: DEFAULT_REFERENCE_POWER, seed: 0 }
    }
}

/// The user-equipment end of one channel. Detaches on drop.
pub struct UeEndpoint {
    radio: VirtualRadio,
    ch: usize,
    next: Option<u64>,
    noise: Option<Awgn>,
}

impl UeEndpoint {
    pub fn channel(&self) -> usize {
        self.ch
    }

    pub fn radio(&self) -> &VirtualRadio {
        &self.radio
    }

    fn tuning(&self) -> Result<ChannelTuning, RadioError> {
        let t = self.radio.tuning(self.ch)?;
        if t.rate == 0 {
            return Err(RadioError::Inactive(self.ch));
        }
        Ok(t)
    }

    pub fn now(&self) -> Result<SampleTimestamp, RadioError> {
        let t = self.tuning()?;
        let clock = &self.radio.inner.clock;
        Ok(SampleTimestamp(match clock.mode {
            ClockMode::Paced => clock.now_tick(t.rate),
            ClockMode::Fast => self.next.unwrap_or(clock.epoch_tick),
        }))
    }

    pub fn recv_into(&mut self, out: &mut [IqSample]) -> Result<RxMetadata, RadioError> {
        if out.is_empty() {
            return Err(RadioError::EmptyBuffer);
        }
        let t = self.tuning()?;
        let n = out.len() as u64;
        let (start, gap) = self.radio.next_block(&mut self.next, t.rate, n);
        self.radio.gather(Direction::Downlink, self.ch, &t, start, out);
        if let Some(noise) = self.noise.as_mut() {
            noise.apply(out);
        }
        let c = &self.radio.inner.channels[self.ch].counters;
        c.ue_rx_samples.fetch_add(n, Ordering::Relaxed);
        Ok(RxMetadata { timestamp: SampleTimestamp(start), gap })
    }

    pub fn recv(&mut self, n: usize) -> Result<(IqBuffer, RxMetadata), RadioError> {
        let mut buf = IqBuffer::zeroed(n);
        let md = self.recv_into(buf.samples_mut())?;
        Ok((buf, md))
    }

    pub fn send(&mut self, samples: &[IqSample], at: SampleTimestamp) -> Result<TxStatus, RadioError> {
        if samples.is_empty() {
            return Err(RadioError::EmptyBuffer);
        }
        let t = self.tuning()?;
        let c = &self.radio.inner.channels[self.ch];
        let latency = lock(&c.state).ue_latency;
        let status = self.radio.emit(&c.ul, self.ch, latency, t.rate, samples, at.0);
        match status {
            TxStatus::Late => c.counters.ue_tx_late.fetch_add(1, Ordering::Relaxed),
            TxStatus::Sent => c.counters.ue_tx_samples.fetch_add(samples.len() as u64, Ordering::Relaxed),
        };
        Ok(status)
    }
}

impl Drop for UeEndpoint {
    fn drop(&mut self) {
        self.radio.detach_ue(self.ch);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const R25: u64 = 7_680_000;

    fn fast_radio(n: usize) -> VirtualRadio {
        let mut opts = RadioOptions::new(n, 30_720_000).clock(ClockMode::Fast);
        for ch in 0..n {
            opts = opts.tune(ch, ChannelTuning::new(580_000_000 + ch as u64 * 20_000_000, 595_000_000, R25));
        }
        VirtualRadio::open(opts).unwrap()
    }

    fn ramp(n: usize, base: i16) -> Vec<IqSample> {
        (0..n).map(|k| IqSample::new(base.wrapping_add(k as i16), -(k as i16))).collect()
    }

    #[test]
    fn open_counts_channels() {
        let r = VirtualRadio::open(RadioOptions::new(4, 30_720_000)).unwrap();
        assert_eq!(r.n_channels(), 4);
        assert_eq!(r.now(0).unwrap(), SampleTimestamp(0));
        assert!(VirtualRadio::open(RadioOptions::new(0, 30_720_000)).is_err());
    }

    #[test]
    fn open_rejects_band_outside_wideband() {
        let w = WidebandConfig::new(30_720_000, 587_500_000, 572_500_000);
        let mut t = ChannelTuning::new(572_500_000, 620_000_000, R25);
        t.active = true;
        let opts = RadioOptions::new(2, 30_720_000).medium(MediumMode::WidebandFdm(w)).tune(0, t);
        assert!(matches!(VirtualRadio::open(opts), Err(RadioError::BandOutsideWideband { .. })));
    }

    #[test]
    fn consecutive_recv_is_contiguous_and_silent() {
        let r = fast_radio(1);
        r.activate(0, ChannelTuning::new(580_000_000, 595_000_000, R25)).unwrap();
        let (a, ma) = r.recv(0, 7680).unwrap();
        let (_, mb) = r.recv(0, 7680).unwrap();
        assert_eq!(mb.timestamp.0 - ma.timestamp.0, 7680);
        assert!(a.samples().iter().all(|s| *s == IqSample::ZERO));
    }

    #[test]
    fn activation_is_exclusive() {
        let r = fast_radio(2);
        let t = ChannelTuning::new(1, 1, R25);
        r.activate(0, t).unwrap();
        assert!(matches!(r.activate(0, t), Err(RadioError::Busy(0))));
        r.deactivate(0).unwrap();
        r.activate(0, t).unwrap();
    }

    #[test]
    fn downlink_reaches_ue_at_commanded_tick() {
        let r = fast_radio(1);
        r.activate(0, ChannelTuning::new(580_000_000, 595_000_000, R25)).unwrap();
        let mut ue = r.attach_ue(0, UeOptions::default()).unwrap();
        let payload = ramp(100, 1);
        assert_eq!(r.send(0, &payload, SampleTimestamp(1000)).unwrap(), TxStatus::Sent);
        let (got, md) = ue.recv(2000).unwrap();
        assert_eq!(md.timestamp, SampleTimestamp(0));
        assert_eq!(&got.samples()[1000..1100], &payload[..]);
        assert!(got.samples()[..1000].iter().all(|s| *s == IqSample::ZERO));
        // the UE has read past tick 1000 now
        assert_eq!(r.send(0, &payload, SampleTimestamp(1500)).unwrap(), TxStatus::Late);
        assert_eq!(r.counters(0).unwrap().tx_late, 1);
    }

    #[test]
    fn contiguous_sends_are_seamless() {
        let r = fast_radio(1);
        r.activate(0, ChannelTuning::new(1, 1, R25)).unwrap();
        let mut ue = r.attach_ue(0, UeOptions::default()).unwrap();
        let all = ramp(300, 7);
        r.send(0, &all[..100], SampleTimestamp(0)).unwrap();
        r.send(0, &all[100..], SampleTimestamp(100)).unwrap();
        assert_eq!(ue.recv(300).unwrap().0.samples(), &all[..]);
    }

    #[test]
    fn uplink_ramp_arrives_with_latency() {
        let r = fast_radio(1);
        r.activate(0, ChannelTuning::new(1, 1, R25)).unwrap();
        let mut ue = r.attach_ue(0, UeOptions { latency_samples: 37, ..UeOptions::default() }).unwrap();
        let p = ramp(64, 100);
        ue.send(&p, SampleTimestamp(10)).unwrap();
        let (got, _) = r.recv(0, 200).unwrap();
        assert_eq!(&got.samples()[47..111], &p[..]);
        assert!(got.samples()[..47].iter().all(|s| *s == IqSample::ZERO));
    }

    #[test]
    fn ideal_channels_are_isolated() {
        let r = fast_radio(2);
        for ch in 0..2 {
            r.activate(ch, ChannelTuning::new(1, 1, R25)).unwrap();
        }
        let mut ue0 = r.attach_ue(0, UeOptions::default()).unwrap();
        let mut ue1 = r.attach_ue(1, UeOptions::default()).unwrap();
        r.send(0, &ramp(50, 1), SampleTimestamp(0)).unwrap();
        r.send(1, &ramp(50, 1000), SampleTimestamp(0)).unwrap();
        assert_eq!(ue0.recv(50).unwrap().0.samples(), &ramp(50, 1)[..]);
        assert_eq!(ue1.recv(50).unwrap().0.samples(), &ramp(50, 1000)[..]);
        assert!(matches!(r.attach_ue(0, UeOptions::default()), Err(RadioError::UeAttached(0))));
    }

    #[test]
    fn awgn_matches_configured_snr() {
        let r = fast_radio(1);
        r.activate(0, ChannelTuning::new(1, 1, R25)).unwrap();
        let opts = UeOptions { snr_db: Some(30.0), seed: 9, ..UeOptions::default() };
        let mut ue = r.attach_ue(0, opts).unwrap();
        let (noise, _) = ue.recv(200_000).unwrap();
        let measured = 10.0 * (DEFAULT_REFERENCE_POWER / dsp::mean_power(noise.samples())).log10();
        assert!((measured - 30.0).abs() <= 1.0, "measured {measured:.2} dB");
    }

    #[test]
    fn paced_recv_tracks_wall_clock() {
        let opts = RadioOptions::new(1, 30_720_000).tune(0, {
            let mut t = ChannelTuning::new(1, 1, R25);
            t.active = true;
            t
        });
        let r = VirtualRadio::open(opts).unwrap();
        let t0 = std::time::Instant::now();
        let (_, first) = r.recv(0, 7680).unwrap();
        assert_eq!(first.timestamp.0 % 7680, 0);
        for k in 1..=20u64 {
            let (_, md) = r.recv(0, 7680).unwrap();
            assert_eq!(md.timestamp.0, first.timestamp.0 + k * 7680);
        }
        assert!(t0.elapsed() >= Duration::from_millis(20));
        assert!(r.now(0).unwrap().0 >= first.timestamp.0 + 21 * 7680);
    }

    #[test]
    fn paced_late_send_is_dropped() {
        let opts = RadioOptions::new(1, 30_720_000);
        let r = VirtualRadio::open(opts).unwrap();
        r.activate(0, ChannelTuning::new(1, 1, R25)).unwrap();
        std::thread::sleep(Duration::from_millis(2));
        assert_eq!(r.send(0, &ramp(10, 0), SampleTimestamp(0)).unwrap(), TxStatus::Late);
        let ahead = r.now(0).unwrap() + 100_000;
        assert_eq!(r.send(0, &ramp(10, 0), ahead).unwrap(), TxStatus::Sent);
    }
}
