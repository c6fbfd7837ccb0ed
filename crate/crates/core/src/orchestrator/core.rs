use super::runtime::{snapshot, SliceRuntime};
use super::{
    CreateSlice, FinalCounters, LoggedCommand, MetricsSnapshot, OrchError, SliceDescriptor, SliceMetrics, SliceState,
    TrafficSpec, SCHEMA_VERSION,
};
use crate::iqcore::{ConflictKind, FdmPlan, PlanEntry, SliceConfig, SliceId};
use crate::pvback::{Backend, BackendOptions};
use crate::radiodev::{ClockMode, MediumMode, RadioOptions, VirtualRadio};
use crate::remoting::Dispatcher;
use crate::slicestack::PhyProfile;
use crate::vchan::RendezvousStore;
use arc_swap::ArcSwap;
use std::collections::BTreeMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct OrchestratorOptions {
    pub channels: usize,
    pub master_clock_rate: u64,
    pub clock: ClockMode,
    pub medium: MediumMode,
    pub backend: BackendOptions,
    /// Load for slices created without one.
    pub default_traffic: TrafficSpec,
    /// How often the metrics snapshot is rebuilt.
    pub metrics_period: Duration,
}

impl Default for OrchestratorOptions {
    fn default() -> Self {
        Self {
            channels: 4,
            master_clock_rate: 30_720_000,
            clock: ClockMode::Paced,
            medium: MediumMode::IdealLoopback,
            backend: BackendOptions::default(),
            default_traffic: TrafficSpec::default(),
            metrics_period: Duration::from_millis(100),
        }
    }
}

type Reply<T> = Sender<T>;

enum Command {
    Create(CreateSlice, Reply<Result<SliceDescriptor, OrchError>>),
    Destroy(u32, Reply<Result<FinalCounters, OrchError>>),
    SetBand(u32, u64, u64, Reply<Result<SliceDescriptor, OrchError>>),
    Crash(u32, Reply<Result<(), OrchError>>),
    Refresh(Reply<Arc<MetricsSnapshot>>),
    Watch(Sender<Vec<SliceDescriptor>>),
    Shutdown,
}

struct Published {
    descriptors: ArcSwap<Vec<SliceDescriptor>>,
    metrics: ArcSwap<MetricsSnapshot>,
    log: Mutex<Vec<LoggedCommand>>,
}

/// Handle to the command loop. Mutations queue behind each other; `list`
/// and `metrics` read the last published state without waiting.
pub struct Orchestrator {
    tx: Mutex<Sender<Command>>,
    published: Arc<Published>,
    backend: Arc<Backend>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl Orchestrator {
    pub fn start(opts: OrchestratorOptions) -> Result<Self, OrchError> {
        let radio = VirtualRadio::open(
            RadioOptions::new(opts.channels, opts.master_clock_rate).clock(opts.clock).medium(opts.medium),
        )
        .map_err(|e| OrchError::Backend(e.to_string()))?;
        let backend = Arc::new(Backend::new(radio, RendezvousStore::in_memory(), opts.backend.clone()));
        let dispatcher = Dispatcher::spawn(backend.clone());
        let published = Arc::new(Published {
            descriptors: ArcSwap::from_pointee(Vec::new()),
            metrics: ArcSwap::from_pointee(MetricsSnapshot::empty()),
            log: Mutex::new(Vec::new()),
        });
        let (tx, rx) = mpsc::channel();
        let mut core = Core {
            opts,
            backend: backend.clone(),
            dispatcher,
            slices: BTreeMap::new(),
            seq: 0,
            published: published.clone(),
            watchers: Vec::new(),
        };
        let thread = thread::Builder::new()
            .name("orchestrator".into())
            .spawn(move || core.run(rx))
            .map_err(|e| OrchError::Backend(e.to_string()))?;
        Ok(Self { tx: Mutex::new(tx), published, backend, thread: Mutex::new(Some(thread)) })
    }

    fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, OrchError> {
        let (tx, rx) = mpsc::channel();
        self.tx.lock().unwrap_or_else(|e| e.into_inner()).send(make(tx)).map_err(|_| OrchError::ShutDown)?;
        rx.recv().map_err(|_| OrchError::ShutDown)
    }

    pub fn create(&self, req: CreateSlice) -> Result<SliceDescriptor, OrchError> {
        self.call(|r| Command::Create(req, r))?
    }

    pub fn destroy(&self, slice_id: u32) -> Result<FinalCounters, OrchError> {
        self.call(|r| Command::Destroy(slice_id, r))?
    }

    /// Moves a slice to new bands by stopping and restarting it. On a
    /// conflict the slice keeps running where it was.
    pub fn set_band(&self, slice_id: u32, dl_freq_hz: u64, ul_freq_hz: u64) -> Result<SliceDescriptor, OrchError> {
        self.call(|r| Command::SetBand(slice_id, dl_freq_hz, ul_freq_hz, r))?
    }

    /// Fault injection: the slice's eNB drops its connection without
    /// shutting down. The orchestrator notices and stops the slice.
    pub fn crash_frontend(&self, slice_id: u32) -> Result<(), OrchError> {
        self.call(|r| Command::Crash(slice_id, r))?
    }

    pub fn list(&self) -> Vec<SliceDescriptor> {
        self.published.descriptors.load().as_ref().clone()
    }

    /// Last published snapshot.
    pub fn metrics(&self) -> Arc<MetricsSnapshot> {
        self.published.metrics.load_full()
    }

    /// Builds a fresh snapshot now.
    pub fn refresh_metrics(&self) -> Result<Arc<MetricsSnapshot>, OrchError> {
        self.call(Command::Refresh)
    }

    /// Receives the descriptor set after every change, starting with the
    /// current one.
    pub fn watch(&self) -> Result<Receiver<Vec<SliceDescriptor>>, OrchError> {
        let (tx, rx) = mpsc::channel();
        self.tx.lock().unwrap_or_else(|e| e.into_inner()).send(Command::Watch(tx)).map_err(|_| OrchError::ShutDown)?;
        Ok(rx)
    }

    /// Every accepted mutation so far.
    pub fn command_log(&self) -> Vec<LoggedCommand> {
        self.published.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Applies logged commands in order, ignoring their outcomes.
    pub fn replay(&self, log: &[LoggedCommand]) {
        for c in log {
            let _ = match c.clone() {
                LoggedCommand::Create(req) => self.create(req).map(drop),
                LoggedCommand::Destroy { slice_id } => self.destroy(slice_id).map(drop),
                LoggedCommand::SetBand { slice_id, dl_freq_hz, ul_freq_hz } => {
                    self.set_band(slice_id, dl_freq_hz, ul_freq_hz).map(drop)
                }
            };
        }
    }

    pub fn backend(&self) -> &Arc<Backend> {
        &self.backend
    }

    /// Stops every slice and the command loop.
    pub fn shutdown(&self) {
        let _ = self.tx.lock().unwrap_or_else(|e| e.into_inner()).send(Command::Shutdown);
        if let Some(t) = self.thread.lock().unwrap_or_else(|e| e.into_inner()).take() {
            let _ = t.join();
        }
    }
}

impl Drop for Orchestrator {
    fn drop(&mut self) {
        self.shutdown();
    }
}

struct Entry {
    config: SliceConfig,
    traffic: TrafficSpec,
    desc: SliceDescriptor,
    runtime: Option<SliceRuntime>,
    last: Option<FinalCounters>,
}

struct Core {
    opts: OrchestratorOptions,
    backend: Arc<Backend>,
    dispatcher: Dispatcher,
    slices: BTreeMap<u32, Entry>,
    seq: u64,
    published: Arc<Published>,
    watchers: Vec<Sender<Vec<SliceDescriptor>>>,
}

impl Core {
    fn run(&mut self, rx: Receiver<Command>) {
        loop {
            match rx.recv_timeout(self.opts.metrics_period) {
                Ok(Command::Create(req, r)) => {
                    let _ = r.send(self.create(req));
                }
                Ok(Command::Destroy(id, r)) => {
                    let _ = r.send(self.destroy(id));
                }
                Ok(Command::SetBand(id, dl, ul, r)) => {
                    let _ = r.send(self.set_band(id, dl, ul));
                }
                Ok(Command::Crash(id, r)) => {
                    let res = match self.slices.get(&id).and_then(|e| e.runtime.as_ref()) {
                        Some(rt) => {
                            rt.crash();
                            Ok(())
                        }
                        None => Err(OrchError::UnknownSlice(id)),
                    };
                    let _ = r.send(res);
                }
                Ok(Command::Refresh(r)) => {
                    self.reap();
                    let _ = r.send(self.publish_metrics());
                }
                Ok(Command::Watch(w)) => {
                    if w.send(self.descriptors()).is_ok() {
                        self.watchers.push(w);
                    }
                }
                Ok(Command::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                Err(RecvTimeoutError::Timeout) => {
                    self.reap();
                    self.publish_metrics();
                }
            }
        }
        let ids: Vec<u32> = self.slices.keys().copied().collect();
        for id in ids {
            let _ = self.destroy(id);
        }
        self.backend.stop_all();
    }

    fn descriptors(&self) -> Vec<SliceDescriptor> {
        self.slices.values().map(|e| e.desc.clone()).collect()
    }

    fn publish(&mut self) {
        let d = self.descriptors();
        self.watchers.retain(|w| w.send(d.clone()).is_ok());
        self.published.descriptors.store(Arc::new(d));
    }

    fn log(&self, c: LoggedCommand) {
        self.published.log.lock().unwrap_or_else(|e| e.into_inner()).push(c);
    }

    fn transition(&mut self, id: u32, next: SliceState) {
        if let Some(e) = self.slices.get_mut(&id) {
            debug_assert!(e.desc.state.can_become(next), "{:?} -> {next:?}", e.desc.state);
            e.desc.state = next;
        }
        self.publish();
    }

    /// Plan of every slice that holds spectrum, i.e. is not stopped.
    fn plan_without(&self, skip: Option<u32>) -> FdmPlan {
        FdmPlan::new(
            self.slices
                .values()
                .filter(|e| e.desc.state != SliceState::Stopped && Some(e.desc.slice_id) != skip)
                .map(|e| PlanEntry::from_config(&e.config))
                .collect(),
        )
    }

    fn check(&self, cfg: &SliceConfig, skip: Option<u32>) -> Result<(), OrchError> {
        if PhyProfile::by_name(&cfg.phy_profile_name).is_none() {
            return Err(OrchError::Validation(format!(
                "unknown PHY profile {:?} (known: {})",
                cfg.phy_profile_name,
                PhyProfile::NAMES.join(", ")
            )));
        }
        if cfg.radio_channel.index() >= self.opts.channels {
            return Err(OrchError::Validation(format!(
                "radio channel {} does not exist (the radio has {})",
                cfg.radio_channel, self.opts.channels
            )));
        }
        if let Err(report) = self.plan_without(skip).with(PlanEntry::from_config(cfg)).validate() {
            let only_channel = report.conflicts.iter().all(|c| c.kind == ConflictKind::SharedRadioChannel);
            return Err(if only_channel { OrchError::ChannelInUse(cfg.radio_channel.0) } else { OrchError::Conflict(report) });
        }
        Ok(())
    }

    fn create(&mut self, req: CreateSlice) -> Result<SliceDescriptor, OrchError> {
        let id = req.config.slice_id.0;
        if self.slices.get(&id).is_some_and(|e| e.desc.state != SliceState::Stopped) {
            return Err(OrchError::AlreadyExists(id));
        }
        self.check(&req.config, None)?;
        self.log(LoggedCommand::Create(req.clone()));
        let traffic = req.traffic.unwrap_or(self.opts.default_traffic);
        let generation = self.slices.get(&id).map_or(0, |e| e.desc.generation + 1);
        self.launch(req.config, traffic, generation)
    }

    /// Inserts a requested descriptor and starts it.
    fn launch(&mut self, config: SliceConfig, traffic: TrafficSpec, generation: u32) -> Result<SliceDescriptor, OrchError> {
        let id = config.slice_id.0;
        let desc = SliceDescriptor::new(&config, generation);
        self.slices.insert(id, Entry { config, traffic, desc, runtime: None, last: None });
        self.publish();
        let e = &self.slices[&id];
        match SliceRuntime::start(&self.backend, &self.dispatcher, &e.config, e.traffic.to_traffic()) {
            Ok(rt) => {
                self.slices.get_mut(&id).expect("just inserted").runtime = Some(rt);
                self.transition(id, SliceState::Running);
                Ok(self.slices[&id].desc.clone())
            }
            Err(e) => {
                self.transition(id, SliceState::Stopped);
                Err(OrchError::Backend(e))
            }
        }
    }

    /// Running → stopping → stopped, keeping the final counters.
    fn halt(&mut self, id: u32) -> FinalCounters {
        let running = self.slices.get(&id).is_some_and(|e| e.desc.state == SliceState::Running);
        if running {
            self.transition(id, SliceState::Stopping);
        }
        let e = self.slices.get_mut(&id).expect("caller checked");
        let mut counters = e.last.take().unwrap_or(FinalCounters { slice_id: id, backend: None, dl: None, ul: None });
        if let Some(mut rt) = e.runtime.take() {
            rt.stop();
            counters.dl = snapshot(&rt.ue_stats);
            counters.ul = snapshot(&rt.enb_stats);
            counters.backend = self.backend.stop_session(SliceId(id)).ok();
            self.dispatcher.revoke(SliceId(id));
        }
        self.slices.get_mut(&id).expect("caller checked").last = Some(counters.clone());
        if running {
            self.transition(id, SliceState::Stopped);
        }
        counters
    }

    fn destroy(&mut self, id: u32) -> Result<FinalCounters, OrchError> {
        if !self.slices.contains_key(&id) {
            return Err(OrchError::UnknownSlice(id));
        }
        self.log(LoggedCommand::Destroy { slice_id: id });
        let counters = self.halt(id);
        self.slices.remove(&id);
        self.publish();
        Ok(counters)
    }

    fn set_band(&mut self, id: u32, dl: u64, ul: u64) -> Result<SliceDescriptor, OrchError> {
        let e = self.slices.get(&id).ok_or(OrchError::UnknownSlice(id))?;
        if e.desc.state != SliceState::Running {
            return Err(OrchError::Validation(format!("slice {id} is {:?}, not running", e.desc.state)));
        }
        let mut next = e.config.clone();
        next.dl_freq_hz = dl;
        next.ul_freq_hz = ul;
        self.check(&next, Some(id))?;
        self.log(LoggedCommand::SetBand { slice_id: id, dl_freq_hz: dl, ul_freq_hz: ul });
        let (old, traffic, generation) = (e.config.clone(), e.traffic, e.desc.generation);
        self.halt(id);
        match self.launch(next, traffic, generation + 1) {
            Ok(d) => Ok(d),
            Err(err) => {
                // put it back where it was
                let _ = self.launch(old, traffic, generation + 2);
                Err(err)
            }
        }
    }

    /// Stops slices whose eNB went away on its own.
    fn reap(&mut self) {
        let dead: Vec<u32> = self
            .slices
            .values()
            .filter(|e| e.desc.state == SliceState::Running)
            .filter(|e| {
                e.runtime.as_ref().is_none_or(|rt| rt.enb_finished()) || !self.backend.is_live(e.config.slice_id)
            })
            .map(|e| e.desc.slice_id)
            .collect();
        for id in dead {
            tracing::warn!(slice = id, "slice frontend disappeared; stopping it");
            self.halt(id);
        }
    }

    fn publish_metrics(&mut self) -> Arc<MetricsSnapshot> {
        self.seq += 1;
        let backend = self.backend.metrics();
        let mut slices = Vec::new();
        for e in self.slices.values() {
            let (dl, ul) = match (&e.runtime, &e.last) {
                (Some(rt), _) => (snapshot(&rt.ue_stats), snapshot(&rt.enb_stats)),
                (None, Some(f)) => (f.dl.clone(), f.ul.clone()),
                (None, None) => (None, None),
            };
            let b = backend
                .iter()
                .find(|m| m.slice_id == e.config.slice_id)
                .cloned()
                .or_else(|| e.last.as_ref().and_then(|f| f.backend.clone()));
            slices.push(SliceMetrics {
                slice_id: e.desc.slice_id,
                state: e.desc.state,
                generation: e.desc.generation,
                goodput_dl_bps: dl.as_ref().map_or(0.0, |s| s.goodput_bps),
                goodput_ul_bps: ul.as_ref().map_or(0.0, |s| s.goodput_bps),
                loss_dl: dl.as_ref().map_or(0.0, |s| s.loss_rate),
                loss_ul: ul.as_ref().map_or(0.0, |s| s.loss_rate),
                latency_dl_ms: dl.as_ref().map_or(0.0, |s| s.latency_mean_ms),
                dl_payload_bytes: dl.as_ref().map_or(0, |s| s.payload_bytes_received),
                dl_radio_seconds: dl.as_ref().map_or(0.0, |s| s.radio_seconds),
                underruns: b.as_ref().map_or(0, |m| m.tx.underruns + m.rx.overruns),
                rx_ring_high_water: b.as_ref().map_or(0, |m| m.rx_ring_high_water),
                tx_ring_high_water: b.as_ref().map_or(0, |m| m.tx_ring_high_water),
                achieved_rate: b.as_ref().map_or(0.0, |m| m.achieved_rate),
            });
        }
        let snap = Arc::new(MetricsSnapshot {
            schema_version: SCHEMA_VERSION,
            seq: self.seq,
            active_slices: self.slices.values().filter(|e| e.desc.state == SliceState::Running).count(),
            plan: self.plan_without(None),
            slices,
        });
        self.published.metrics.store(snap.clone());
        snap
    }
}
