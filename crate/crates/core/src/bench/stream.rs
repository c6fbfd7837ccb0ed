use super::BenchError;
use crate::iqcore::{BandwidthProfile, SliceConfig};
use crate::pvback::{yield_priority, Backend, BackendOptions, SessionMetrics};
use crate::radiodev::{ClockMode, MediumMode, RadioOptions, UeOptions, VirtualRadio, WidebandConfig};
use crate::remoting::{Dispatcher, RemoteDevice, SdrDevice};
use crate::slicestack::{run_enb, run_ue, EndpointStats, PhyProfile, Role, RunLimits, SliceEndpoint, Traffic};
use crate::vchan::RendezvousStore;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

/// One slice of a streaming run.
#[derive(Debug, Clone)]
pub struct StreamSlice {
    pub config: SliceConfig,
    pub traffic: Traffic,
}

#[derive(Debug, Clone)]
pub struct StreamOptions {
    pub slices: Vec<StreamSlice>,
    pub duration: Duration,
    pub clock: ClockMode,
    pub medium: MediumMode,
}

impl StreamOptions {
    /// One `phy-a` slice at 595/580 MHz with light traffic.
    pub fn single(profile: BandwidthProfile, duration: Duration) -> Self {
        let config = SliceConfig::new(1, profile, 595_000_000, 580_000_000, 0, "phy-a");
        Self {
            slices: vec![StreamSlice { config, traffic: Traffic::new(500e3, 200) }],
            duration,
            clock: ClockMode::Paced,
            medium: MediumMode::IdealLoopback,
        }
    }

    /// Two 25 PRB slices with different PHYs, DL at 595 and 580 MHz.
    pub fn two_slices(duration: Duration) -> Self {
        let a = SliceConfig::new(1, BandwidthProfile::Prb25, 595_000_000, 550_000_000, 0, "phy-a");
        let b = SliceConfig::new(2, BandwidthProfile::Prb25, 580_000_000, 535_000_000, 1, "phy-b");
        Self {
            slices: vec![
                StreamSlice { config: a, traffic: Traffic::new(500e3, 200) },
                StreamSlice { config: b, traffic: Traffic::new(100e3, 64) },
            ],
            duration,
            clock: ClockMode::Paced,
            medium: MediumMode::IdealLoopback,
        }
    }

    /// Routes every slice through the shared wideband medium.
    pub fn wideband(mut self, config: WidebandConfig) -> Self {
        self.medium = MediumMode::WidebandFdm(config);
        self
    }
}

/// Outcome for one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceStreamReport {
    pub slice_id: u32,
    pub prbs: u32,
    pub phy: String,
    pub nominal_rate: f64,
    pub achieved_rate: f64,
    /// `achieved / nominal - 1`
    pub rate_error: f64,
    /// Late TX submissions plus RX blocks the backend fell behind on.
    pub underruns: u64,
    pub subframes: u64,
    /// Backend streamer CPU time as a share of the run's wall time.
    pub rx_cpu_pct: f64,
    pub tx_cpu_pct: f64,
    pub enb: EndpointStats,
    pub ue: EndpointStats,
    pub backend: SessionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub clock: String,
    pub duration_s: f64,
    pub slices: Vec<SliceStreamReport>,
    /// Times a sleeping probe thread woke more than [`STALL_THRESHOLD`]
    /// late, i.e. the host did not run us for that long.
    pub host_stalls: u64,
    pub worst_host_stall_ms: f64,
}

/// Wakeup delay that eats most of the 25 PRB TX budget (30640 samples,
/// minus the subframe being read).
pub const STALL_THRESHOLD: Duration = Duration::from_millis(3);
const PROBE_PERIOD: Duration = Duration::from_millis(1);

/// Sleeps in short steps and records how late each wakeup is.
fn stall_probe(stop: Arc<AtomicBool>) -> thread::JoinHandle<(u64, Duration)> {
    thread::spawn(move || {
        let (mut n, mut worst) = (0, Duration::ZERO);
        while !stop.load(Ordering::Relaxed) {
            let t = Instant::now();
            thread::sleep(PROBE_PERIOD);
            let late = t.elapsed().saturating_sub(PROBE_PERIOD);
            worst = worst.max(late);
            if late > STALL_THRESHOLD {
                n += 1;
            }
        }
        (n, worst)
    })
}

impl StreamReport {
    pub fn total_underruns(&self) -> u64 {
        self.slices.iter().map(|s| s.underruns).sum()
    }
}

/// Paced run of the whole pipeline for one slice: radio, backend,
/// dispatcher, remote device and the toy stacks on both ends.
pub fn sustained_stream_test(profile: BandwidthProfile, duration_s: f64) -> Result<StreamReport, BenchError> {
    stream(&StreamOptions::single(profile, Duration::from_secs_f64(duration_s)))
}

pub fn stream(opts: &StreamOptions) -> Result<StreamReport, BenchError> {
    let n = opts.slices.iter().map(|s| s.config.radio_channel.index() + 1).max().unwrap_or(1);
    let radio = VirtualRadio::open(RadioOptions::new(n, 30_720_000).clock(opts.clock).medium(opts.medium))
        .map_err(|e| BenchError::Setup(e.to_string()))?;
    let backend = Arc::new(Backend::new(radio.clone(), RendezvousStore::in_memory(), BackendOptions::default()));
    let dispatcher = Dispatcher::spawn(backend.clone());
    let stop = Arc::new(AtomicBool::new(false));
    let setup = |e: &dyn std::fmt::Display| BenchError::Setup(e.to_string());

    let mut workers = Vec::new();
    for s in &opts.slices {
        let c = &s.config;
        let phy = PhyProfile::by_name(&c.phy_profile_name).ok_or_else(|| setup(&c.phy_profile_name))?;
        dispatcher.admit(c.slice_id)?;
        let mut dev = RemoteDevice::connect(backend.store(), 0, c.clone(), Duration::from_secs(2)).map_err(|e| setup(&e))?;
        dev.find().map_err(|e| setup(&e))?;
        let mut ue = radio.attach_ue(c.radio_channel.index(), UeOptions::default()).map_err(|e| setup(&e))?;
        let id = c.slice_id.0;
        let mut enb = SliceEndpoint::new(Role::Enb, id, phy, c.profile, s.traffic.clone());
        let mut uep = SliceEndpoint::new(Role::Ue, id, phy, c.profile, s.traffic.clone());
        let (st, su) = (stop.clone(), stop.clone());
        let e = thread::spawn(move || run_enb(&mut dev, &mut enb, RunLimits::until(st)).map_err(|e| e.to_string()));
        let u = thread::spawn(move || {
            yield_priority();
            run_ue(&mut ue, &mut uep, RunLimits::until(su)).map_err(|e| e.to_string())
        });
        workers.push((c.clone(), e, u));
    }

    let probe_stop = Arc::new(AtomicBool::new(false));
    let probe = stall_probe(probe_stop.clone());
    let started = Instant::now();
    thread::sleep(opts.duration);
    // snapshot while everything is still streaming
    let live: Vec<_> = workers.iter().map(|(c, ..)| backend.session_metrics(c.slice_id)).collect();
    let wall = started.elapsed().as_secs_f64();
    stop.store(true, Ordering::SeqCst);
    probe_stop.store(true, Ordering::SeqCst);
    let (host_stalls, worst) = probe.join().unwrap_or_default();

    let mut slices = Vec::new();
    for ((c, e, u), m) in workers.into_iter().zip(live) {
        let enb = e.join().map_err(|_| setup(&"eNB thread panicked"))?.map_err(|e| setup(&e))?;
        let ue = u.join().map_err(|_| setup(&"UE thread panicked"))?.map_err(|e| setup(&e))?;
        let m = m.ok_or_else(|| setup(&format!("slice {} ended early", c.slice_id.0)))?;
        let nominal = c.profile.sample_rate() as f64;
        let achieved = m.achieved_rate;
        slices.push(SliceStreamReport {
            slice_id: c.slice_id.0,
            prbs: c.profile.prbs(),
            phy: c.phy_profile_name.clone(),
            nominal_rate: nominal,
            achieved_rate: achieved,
            rate_error: achieved / nominal - 1.0,
            underruns: m.tx.underruns + m.rx.overruns,
            subframes: m.rx.iterations + 1,
            rx_cpu_pct: m.rx.cpu_ns as f64 / 1e9 / wall * 100.0,
            tx_cpu_pct: m.tx.cpu_ns as f64 / 1e9 / wall * 100.0,
            enb,
            ue,
            backend: m,
        });
    }
    backend.stop_all();
    drop(dispatcher);
    let clock = match opts.clock {
        ClockMode::Paced => "paced",
        ClockMode::Fast => "fast",
    };
    Ok(StreamReport {
        clock: clock.into(),
        duration_s: wall,
        slices,
        host_stalls,
        worst_host_stall_ms: worst.as_secs_f64() * 1e3,
    })
}
