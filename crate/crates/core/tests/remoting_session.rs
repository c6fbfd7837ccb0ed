//! Frontend, dispatcher and backend together over in-memory channels.

use pvran::iqcore::{BandwidthProfile, IqSample, SampleTimestamp, SliceConfig, SliceId};
use pvran::pvback::{Backend, BackendOptions};
use pvran::radiodev::{ClockMode, RadioOptions, UeOptions, VirtualRadio};
use pvran::remoting::codec::{RawHeader, HEADER_LEN};
use pvran::remoting::{
    ControlMessage, DeviceError, Dispatcher, LocalDevice, Opcode, RemoteDevice, Request, SdrDevice, Status,
};
use pvran::vchan::{RendezvousStore, StreamChannel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

// timing-sensitive tests share one core
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn system(clock: ClockMode, record: bool) -> (Arc<Backend>, Dispatcher) {
    let radio = VirtualRadio::open(RadioOptions::new(4, 30_720_000).clock(clock)).unwrap();
    let opts = BackendOptions { record_ledger: record, ..BackendOptions::default() };
    let backend = Arc::new(Backend::new(radio, RendezvousStore::in_memory(), opts));
    let d = Dispatcher::spawn(backend.clone());
    (backend, d)
}

fn cfg(id: u32, profile: BandwidthProfile, dl_mhz: u64, ch: u32) -> SliceConfig {
    SliceConfig::new(id, profile, dl_mhz * 1_000_000, (dl_mhz - 40) * 1_000_000, ch, "phy-a")
}

fn remote(b: &Backend, d: &Dispatcher, c: SliceConfig) -> RemoteDevice {
    d.admit(c.slice_id).unwrap();
    RemoteDevice::connect(b.store(), 0, c, Duration::from_secs(2)).unwrap()
}

fn wait_until(what: &str, f: impl Fn() -> bool) {
    let t = Instant::now();
    while !f() {
        assert!(t.elapsed() < Duration::from_secs(3), "timed out waiting for {what}");
        thread::sleep(Duration::from_millis(2));
    }
}

#[test]
fn handshake_settings_and_teardown() {
    let _g = serial();
    let (b, d) = system(ClockMode::Paced, false);
    let mut dev = remote(&b, &d, cfg(1, BandwidthProfile::Prb25, 595, 0));
    assert!(matches!(dev.set_tx_gain(10), Err(DeviceError::NotEstablished)));
    let t = Instant::now();
    assert_eq!(dev.find().unwrap(), "X310-sim");
    let mut buf = vec![IqSample::ZERO; 7680];
    dev.recv(&mut buf).unwrap();
    assert!(t.elapsed() < Duration::from_millis(100), "first RX after {:?}", t.elapsed());
    assert_eq!(b.session_count(), 1);

    assert_eq!(dev.set_rx_freq(595_000_000).unwrap(), 595_000_000);
    assert_eq!(dev.set_rate(7_680_000).unwrap(), 7_680_000);
    assert_eq!(dev.set_tx_gain(40).unwrap(), 31);
    assert_eq!(b.radio().tuning(0).unwrap().tx_gain_db, 31);
    let e = dev.set_rx_freq(5).unwrap_err();
    assert_eq!(e.status(), Some(Status::OutOfRange));

    let t = Instant::now();
    dev.shutdown().unwrap();
    assert!(t.elapsed() < Duration::from_secs(1));
    assert_eq!(b.session_count(), 0);
    assert!(!b.store().is_published(0, "pv/1/rx"));
    assert!(!b.store().is_published(0, "pv/1/tx"));
    drop(dev);
    wait_until("ctrl unpublished", || !b.store().is_published(0, "pv/1/ctrl"));
    assert_eq!(d.connections(), 0);
}

#[test]
fn rejections_and_timeouts() {
    let _g = serial();
    let (b, d) = system(ClockMode::Fast, false);
    let mut a = remote(&b, &d, cfg(1, BandwidthProfile::Prb25, 595, 0));
    a.find().unwrap();
    let mut overlap = remote(&b, &d, cfg(2, BandwidthProfile::Prb25, 597, 1));
    assert_eq!(overlap.find().unwrap_err().status(), Some(Status::FdmConflict));
    let mut same_ch = remote(&b, &d, cfg(3, BandwidthProfile::Prb25, 700, 0));
    assert_eq!(same_ch.find().unwrap_err().status(), Some(Status::ChannelInUse));
    assert_eq!(b.session_count(), 1);

    // nobody admitted slice 9
    let t = Instant::now();
    let none = RemoteDevice::connect(b.store(), 0, cfg(9, BandwidthProfile::Prb25, 900, 2), Duration::from_millis(200));
    assert!(matches!(none, Err(DeviceError::Timeout)));
    assert!(t.elapsed() >= Duration::from_millis(200));
}

fn raw_exchange(chan: &mut StreamChannel, frame: &[u8]) -> (RawHeader, Vec<u8>) {
    chan.write(frame).unwrap();
    let head = chan.read(HEADER_LEN).unwrap();
    let h = RawHeader::parse(&head).unwrap();
    let mut all = head;
    if h.payload_len > 0 {
        all.extend(chan.read(h.payload_len as usize).unwrap());
    }
    (h, all)
}

fn raw_call(chan: &mut StreamChannel, frame: &[u8]) -> ControlMessage {
    let (_, all) = raw_exchange(chan, frame);
    ControlMessage::decode(&all).unwrap_or_else(|e| panic!("undecodable reply {e}: {all:?}"))
}

#[test]
fn dispatcher_survives_bad_input_and_double_init() {
    let _g = serial();
    let (b, d) = system(ClockMode::Fast, false);
    d.admit(SliceId(4)).unwrap();
    let mut chan = pvran::vchan::client_connect_wait(b.store(), 0, "pv/4/ctrl", Duration::from_secs(2)).unwrap();
    chan.set_timeout(Some(Duration::from_secs(2)));

    let mut unknown = Request::Find.to_message(77).encode();
    unknown[0] = 0x3f;
    let (h, _) = raw_exchange(&mut chan, &unknown);
    assert_eq!((h.opcode, h.correlation_id, h.status), (0x80 | 0x3f, 77, Status::UnknownOpcode as u16));

    let r = raw_call(&mut chan, &ControlMessage::request(Opcode::SetRate, 78, vec![1, 2, 3]).encode());
    assert_eq!((r.correlation_id, r.status()), (78, Some(Status::BadRequest)));

    let r = raw_call(&mut chan, &Request::SetTxGain(3).to_message(79).encode());
    assert_eq!(r.status(), Some(Status::NotEstablished));

    let init = Request::Init(cfg(4, BandwidthProfile::Prb25, 595, 2));
    assert_eq!(raw_call(&mut chan, &init.to_message(80).encode()).status(), Some(Status::Ok));
    assert_eq!(raw_call(&mut chan, &init.to_message(81).encode()).status(), Some(Status::AlreadyActive));
    let wrong_id = Request::Init(cfg(5, BandwidthProfile::Prb25, 700, 3));
    assert_eq!(raw_call(&mut chan, &wrong_id.to_message(82).encode()).status(), Some(Status::BadRequest));

    let r = raw_call(&mut chan, &Request::Find.to_message(83).encode());
    assert_eq!((r.status(), r.payload.as_slice()), (Some(Status::Ok), b"X310-sim".as_slice()));
    let r = raw_call(&mut chan, &Request::Shutdown.to_message(84).encode());
    assert_eq!(r.status(), Some(Status::Ok));
    assert_eq!(b.session_count(), 0);

    // a frontend that disappears takes its session with it
    assert_eq!(raw_call(&mut chan, &init.to_message(85).encode()).status(), Some(Status::Ok));
    drop(chan);
    wait_until("session reaped", || b.session_count() == 0);
}

#[test]
fn every_request_gets_exactly_one_matching_reply() {
    let _g = serial();
    let (b, d) = system(ClockMode::Fast, false);
    d.admit(SliceId(6)).unwrap();
    let mut chan = pvran::vchan::client_connect_wait(b.store(), 0, "pv/6/ctrl", Duration::from_secs(2)).unwrap();
    chan.set_timeout(Some(Duration::from_secs(2)));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let init = Request::Init(cfg(6, BandwidthProfile::Prb25, 595, 0));
    for round in 0..20 {
        // pipeline a burst of requests, then collect the replies
        let mut sent = Vec::new();
        for _ in 0..rng.random_range(1..12) {
            let cid: u32 = rng.random();
            let msg = match rng.random_range(0..7) {
                0 => init.to_message(cid).encode(),
                1 => Request::SetTxGain(rng.random_range(-50..50)).to_message(cid).encode(),
                2 => Request::SetRxFreq(rng.random_range(0..7_000_000_000)).to_message(cid).encode(),
                3 => Request::Find.to_message(cid).encode(),
                4 => Request::Shutdown.to_message(cid).encode(),
                5 => {
                    let mut m = Request::Find.to_message(cid).encode();
                    m[0] = rng.random_range(9..127);
                    m
                }
                _ => ControlMessage::request(Opcode::SetRate, cid, vec![0; rng.random_range(0..7)]).encode(),
            };
            chan.write(&msg).unwrap();
            sent.push(cid);
        }
        for cid in sent {
            let head = chan.read(HEADER_LEN).unwrap();
            let h = RawHeader::parse(&head).unwrap();
            if h.payload_len > 0 {
                chan.read(h.payload_len as usize).unwrap();
            }
            assert_eq!(h.correlation_id, cid, "round {round}");
            assert!(h.opcode & 0x80 != 0);
        }
        assert_eq!(chan.data_ready(), 0, "an extra reply arrived");
    }
    assert!(d.served() >= 20);
}

/// Runs `n` subframes through a device, transmitting each received block
/// back at the ledger-derived tick. Returns RX and TX timestamps.
fn drive(dev: &mut dyn SdrDevice, n: usize) -> (Vec<u64>, Vec<u64>) {
    let sps = dev.config().profile.samples_per_subframe() as usize;
    let off = dev.config().effective_tx_offset();
    let mut buf = vec![IqSample::ZERO; sps];
    let (mut rx, mut tx) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let ts = dev.recv(&mut buf).unwrap();
        rx.push(ts.0);
        let at = SampleTimestamp(rx[0] + off + (k * sps) as u64);
        dev.send(&buf, at).unwrap();
        tx.push(at.0);
    }
    (rx, tx)
}

fn dual_ledger(profile: BandwidthProfile) {
    let (b, d) = system(ClockMode::Fast, true);
    let c = cfg(1, profile, 595, 0);
    let id = c.slice_id;
    let mut dev = remote(&b, &d, c);
    dev.find().unwrap();
    let n = 10_000;
    let (rx, tx) = drive(&mut dev, n);
    // a skipped tick would be rejected as out of sequence
    assert!(matches!(
        dev.send(&[IqSample::ZERO; 8], SampleTimestamp(tx[n - 1] + 2 * profile.samples_per_subframe())),
        Err(DeviceError::OutOfSequence { .. })
    ));
    wait_until("backend catches up", || b.session_metrics(id).unwrap().tx.iterations + 1 >= n as u64);
    dev.shutdown().unwrap();
    let (brx, btx) = b.ledgers(id).unwrap();
    assert!(brx.len() >= n);
    assert_eq!(&brx[..n], &rx[..], "rx ledgers differ");
    assert_eq!(btx, tx, "tx ledgers differ");
    assert_eq!(tx[0] - rx[0], profile.tx_offset());
    let m = b.session_metrics(id).unwrap();
    assert_eq!(m.tx.timestamp, tx[0] + m.tx.iterations * profile.samples_per_subframe());
    assert_eq!(m.rx.timestamp, rx[0] + m.rx.iterations * profile.samples_per_subframe());
}

#[test]
fn dual_ledger_25_prb() {
    let _g = serial();
    dual_ledger(BandwidthProfile::Prb25);
}

#[test]
fn dual_ledger_50_prb() {
    let _g = serial();
    dual_ledger(BandwidthProfile::Prb50);
}

#[test]
fn local_and_remote_bindings_agree() {
    let _g = serial();
    let (b, d) = system(ClockMode::Fast, false);
    let mut dev = remote(&b, &d, cfg(1, BandwidthProfile::Prb25, 595, 0));
    dev.find().unwrap();
    let remote_run = drive(&mut dev, 50);
    dev.shutdown().unwrap();

    let radio = VirtualRadio::open(RadioOptions::new(4, 30_720_000).clock(ClockMode::Fast)).unwrap();
    let mut local = LocalDevice::new(radio, cfg(1, BandwidthProfile::Prb25, 595, 0));
    assert_eq!(local.find().unwrap(), "X310-sim");
    let local_run = drive(&mut local, 50);
    assert_eq!(local_run, remote_run);
}

#[test]
fn stop_wakes_a_blocked_reader() {
    let _g = serial();
    let (b, d) = system(ClockMode::Paced, false);
    let mut dev = remote(&b, &d, cfg(1, BandwidthProfile::Prb25, 595, 0));
    dev.find().unwrap();
    let reader = thread::spawn(move || {
        let mut buf = vec![IqSample::ZERO; 7680];
        loop {
            if let Err(e) = dev.recv(&mut buf) {
                return e;
            }
        }
    });
    thread::sleep(Duration::from_millis(50));
    let t = Instant::now();
    let m = b.stop_session(SliceId(1)).unwrap();
    assert!(t.elapsed() < Duration::from_secs(1));
    assert!(!m.alive);
    assert!(matches!(reader.join().unwrap(), DeviceError::EndOfStream));
    assert_eq!(b.stop_session(SliceId(1)).unwrap(), m);
}

fn pattern(slice: u32, tick: u64) -> IqSample {
    let mut x = tick.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ u64::from(slice).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x ^= x >> 29;
    IqSample::new(x as i16 | 1, (x >> 16) as i16)
}

#[test]
fn slices_only_see_their_own_samples() {
    let _g = serial();
    let (b, d) = system(ClockMode::Fast, false);
    let configs = [cfg(1, BandwidthProfile::Prb25, 595, 0), cfg(2, BandwidthProfile::Prb25, 580, 1)];
    let mut devs: Vec<RemoteDevice> = configs.iter().map(|c| remote(&b, &d, c.clone())).collect();
    let mut ues: Vec<_> = (0..2).map(|ch| b.radio().attach_ue(ch, UeOptions::default()).unwrap()).collect();
    for dev in &mut devs {
        dev.find().unwrap();
    }
    const SF: u64 = 7680;
    const LEAD: u64 = 64;
    let subframes = 700u64;
    let mut ue_next = [0u64; 2];
    let mut front = [0u64; 2];
    let mut checked = 0u64;
    let mut buf = vec![IqSample::ZERO; SF as usize];
    for _ in 0..subframes {
        for s in 0..2 {
            let slice = configs[s].slice_id.0;
            // stay well ahead of the backend, which can run at most a ring ahead of us
            let base = front[s];
            while ue_next[s] < base + LEAD * SF {
                let t = ue_next[s].max(base);
                let block: Vec<IqSample> = (t..t + SF).map(|k| pattern(slice, k)).collect();
                ues[s].send(&block, SampleTimestamp(t)).unwrap();
                ue_next[s] = t + SF;
            }
            let ts = devs[s].recv(&mut buf).unwrap().0;
            front[s] = ts + SF;
            for (k, got) in buf.iter().enumerate() {
                let tick = ts + k as u64;
                if *got != IqSample::ZERO {
                    assert_eq!(*got, pattern(slice, tick), "slice {slice} tick {tick}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked >= 10_000_000, "only {checked} samples verified");
}
