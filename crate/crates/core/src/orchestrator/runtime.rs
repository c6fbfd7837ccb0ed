use crate::iqcore::SliceConfig;
use crate::pvback::Backend;
use crate::radiodev::UeOptions;
use crate::remoting::{Dispatcher, RemoteDevice, SdrDevice};
use crate::slicestack::{run_enb, run_ue, EndpointStats, LiveStats, PhyProfile, Role, RunLimits, SliceEndpoint, Traffic};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);

/// The two ends of a running slice: the eNB over a remote device and the
/// UE on the radio.
pub(super) struct SliceRuntime {
    stop: Arc<AtomicBool>,
    crash: Arc<AtomicBool>,
    enb: Option<JoinHandle<()>>,
    ue: Option<JoinHandle<()>>,
    pub enb_stats: LiveStats,
    pub ue_stats: LiveStats,
}

fn live() -> LiveStats {
    Arc::new(Mutex::new(None))
}

pub(super) fn snapshot(s: &LiveStats) -> Option<EndpointStats> {
    s.lock().unwrap_or_else(|e| e.into_inner()).clone()
}

impl SliceRuntime {
    /// Sends INIT through the dispatcher and starts both ends. On error
    /// nothing is left running.
    pub fn start(
        backend: &Backend,
        dispatcher: &Dispatcher,
        cfg: &SliceConfig,
        traffic: Traffic,
    ) -> Result<Self, String> {
        let phy = PhyProfile::by_name(&cfg.phy_profile_name).ok_or("unknown PHY profile")?;
        dispatcher.admit(cfg.slice_id).map_err(|e| e.to_string())?;
        let started = (|| {
            let mut dev = RemoteDevice::connect(backend.store(), 0, cfg.clone(), CONNECT_TIMEOUT).map_err(|e| e.to_string())?;
            dev.find().map_err(|e| e.to_string())?;
            let ue = backend.radio().attach_ue(cfg.radio_channel.index(), UeOptions::default()).map_err(|e| e.to_string())?;
            Ok::<_, String>((dev, ue))
        })();
        let (mut dev, mut ue) = match started {
            Ok(x) => x,
            Err(e) => {
                let _ = backend.stop_session(cfg.slice_id);
                dispatcher.revoke(cfg.slice_id);
                return Err(e);
            }
        };

        let stop = Arc::new(AtomicBool::new(false));
        let crash = Arc::new(AtomicBool::new(false));
        let (enb_stats, ue_stats) = (live(), live());
        let id = cfg.slice_id.0;
        let mut enb_ep = SliceEndpoint::new(Role::Enb, id, phy, cfg.profile, traffic.clone());
        let mut ue_ep = SliceEndpoint::new(Role::Ue, id, phy, cfg.profile, traffic);

        let limits = |live: &LiveStats| RunLimits { stop: Some(stop.clone()), live: Some(live.clone()), ..RunLimits::default() };
        let enb_limits = limits(&enb_stats);
        let ue_limits = limits(&ue_stats);
        let crashed = crash.clone();
        let enb = thread::Builder::new()
            .name(format!("enb-{id}"))
            .spawn(move || {
                if let Err(e) = run_enb(&mut dev, &mut enb_ep, enb_limits) {
                    tracing::warn!(slice = id, error = %e, "eNB stopped");
                }
                if crashed.load(Ordering::SeqCst) {
                    dev.sever();
                }
            })
            .map_err(|e| e.to_string())?;
        let ue = thread::Builder::new()
            .name(format!("ue-{id}"))
            .spawn(move || {
                if let Err(e) = run_ue(&mut ue, &mut ue_ep, ue_limits) {
                    tracing::warn!(slice = id, error = %e, "UE stopped");
                }
            })
            .map_err(|e| e.to_string())?;
        Ok(Self { stop, crash, enb: Some(enb), ue: Some(ue), enb_stats, ue_stats })
    }

    /// True once the eNB loop has returned.
    pub fn enb_finished(&self) -> bool {
        self.enb.as_ref().is_none_or(|h| h.is_finished())
    }

    /// Makes the eNB vanish without a SHUTDOWN, as if its process died.
    pub fn crash(&self) {
        self.crash.store(true, Ordering::SeqCst);
        self.stop.store(true, Ordering::SeqCst);
    }

    /// Stops both ends and waits for them.
    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for h in [self.enb.take(), self.ue.take()].into_iter().flatten() {
            let _ = h.join();
        }
    }
}

impl Drop for SliceRuntime {
    fn drop(&mut self) {
        self.stop();
    }
}
