//! Medium behaviour of the simulated radio: FDM leakage, superposition,
//! determinism, pacing and capture.

use pvran::iqcore::{IqBuffer, IqSample, SampleTimestamp};
use pvran::radiodev::dsp::{mean_power, tone};
use pvran::radiodev::{
    mix_up, read_capture, ChannelTuning, ClockMode, Direction, MediumMode, RadioOptions, UeOptions, VirtualRadio,
    WidebandConfig,
};
use std::time::{Duration, Instant};

const R25: u64 = 7_680_000;
const WIDE: u64 = 30_720_000;

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Two 5 MHz slices, DL at 580 and 595 MHz, sharing one 30.72 Msps wideband.
fn two_slice_wideband() -> VirtualRadio {
    let w = WidebandConfig::new(WIDE, 587_500_000, 572_500_000);
    let opts = RadioOptions::new(2, WIDE).medium(MediumMode::WidebandFdm(w)).clock(ClockMode::Fast);
    let r = VirtualRadio::open(opts).unwrap();
    r.activate(0, ChannelTuning::new(565_000_000, 580_000_000, R25)).unwrap();
    r.activate(1, ChannelTuning::new(580_000_000, 595_000_000, R25)).unwrap();
    r
}

#[test]
fn fdm_cross_leakage_below_minus_40_db() {
    let r = two_slice_wideband();
    let mut ue0 = r.attach_ue(0, UeOptions::default()).unwrap();
    let mut ue1 = r.attach_ue(1, UeOptions::default()).unwrap();
    // test tone only on slice 1, inside its band
    let t = tone(1_000_000, R25, 8000.0, 4 * 7680);
    r.send(1, t.samples(), SampleTimestamp(0)).unwrap();
    let (own, _) = ue1.recv(4 * 7680).unwrap();
    let (other, _) = ue0.recv(4 * 7680).unwrap();
    // skip the filter transients at the burst edges
    let mid = 256..4 * 7680 - 256;
    let in_band = mean_power(&own.samples()[mid.clone()]);
    let leak = mean_power(&other.samples()[mid]).max(1e-3);
    let ratio = db(leak / in_band);
    assert!(in_band > 0.9 * 8000.0 * 8000.0, "in-band power {in_band}");
    assert!(ratio <= -40.0, "cross-leakage {ratio:.1} dB");
}

#[test]
fn wideband_block_size_does_not_change_output() {
    let run = |chunk: usize| -> Vec<IqSample> {
        let r = two_slice_wideband();
        let mut ue = r.attach_ue(1, UeOptions::default()).unwrap();
        let t = tone(-700_000, R25, 6000.0, 3000);
        r.send(1, t.samples(), SampleTimestamp(100)).unwrap();
        let mut out = Vec::new();
        while out.len() < 3840 {
            out.extend_from_slice(ue.recv(chunk).unwrap().0.samples());
        }
        out.truncate(3840);
        out
    };
    assert_eq!(run(3840), run(640));
}

fn superposition(offsets_mhz: &[i64]) {
    let n = offsets_mhz.len();
    let w = WidebandConfig::new(WIDE, 600_000_000, 500_000_000);
    let r = VirtualRadio::open(RadioOptions::new(n, WIDE).medium(MediumMode::WidebandFdm(w)).clock(ClockMode::Fast))
        .unwrap();
    let mut ues = Vec::new();
    let mut expected = vec![(0f64, 0f64); 1024 * 4];
    for (ch, &off) in offsets_mhz.iter().enumerate() {
        let tx = (600 + off) as u64 * 1_000_000;
        r.activate(ch, ChannelTuning::new(500_000_000 + ch as u64, tx, R25)).unwrap();
        ues.push(r.attach_ue(ch, UeOptions::default()).unwrap());
        let x = tone(200_000 * (ch as i64 + 1), R25, 3000.0, 1024);
        r.send(ch, x.samples(), SampleTimestamp(0)).unwrap();
        let up = mix_up(&x, off * 1_000_000, R25, WIDE).unwrap();
        for (e, s) in expected.iter_mut().zip(up.samples()) {
            e.0 += f64::from(s.i);
            e.1 += f64::from(s.q);
        }
    }
    let stream = r.wideband_stream(Direction::Downlink, 0, 4096).unwrap();
    let worst = stream
        .samples()
        .iter()
        .zip(&expected)
        .map(|(s, e)| (f64::from(s.i) - e.0).abs().max((f64::from(s.q) - e.1).abs()))
        .fold(0.0, f64::max);
    // each contribution was rounded separately in the reference
    assert!(worst <= n as f64, "superposition error {worst} with {n} transmitters");
}

#[test]
fn wideband_is_sum_of_contributions() {
    superposition(&[-5, 7]);
    superposition(&[-10, 0, 10]);
}

#[test]
fn fast_clock_runs_are_bit_identical() {
    let run = || -> Vec<u8> {
        let opts = RadioOptions::new(1, WIDE).clock(ClockMode::Fast).epoch_tick(1_000_000);
        let r = VirtualRadio::open(opts).unwrap();
        r.activate(0, ChannelTuning::new(1, 1, R25)).unwrap();
        let mut ue = r.attach_ue(0, UeOptions { snr_db: Some(10.0), seed: 42, ..UeOptions::default() }).unwrap();
        let mut bytes = Vec::new();
        for k in 0..20u64 {
            let t = tone(300_000, R25, 5000.0, 7680);
            r.send(0, t.samples(), SampleTimestamp(1_000_000 + k * 7680)).unwrap();
            ue.send(t.samples(), SampleTimestamp(1_000_000 + k * 7680)).unwrap();
            bytes.extend(ue.recv(7680).unwrap().0.to_le_bytes());
            bytes.extend(r.recv(0, 7680).unwrap().0.to_le_bytes());
        }
        bytes
    };
    assert_eq!(run(), run());
}

#[test]
fn paced_sample_conservation() {
    let r = VirtualRadio::open(RadioOptions::new(1, WIDE)).unwrap();
    r.activate(0, ChannelTuning::new(1, 1, R25)).unwrap();
    let mut buf = IqBuffer::zeroed(7680);
    let (_, first) = r.recv(0, 7680).unwrap();
    let start = Instant::now();
    let mut got = 0u64;
    while start.elapsed() < Duration::from_millis(200) {
        r.recv_into(0, buf.samples_mut()).unwrap();
        got += 7680;
    }
    let expected = (start.elapsed().as_secs_f64() * R25 as f64) as u64;
    assert!(got.abs_diff(expected) <= 2 * 7680, "got {got} expected {expected}");
    assert_eq!(r.counters(0).unwrap().rx_overflows, 0);
    assert!(first.timestamp.0 > 0 || r.now(0).unwrap().0 > 0);
}

#[test]
fn lagging_receiver_sees_truthful_gap() {
    let r = VirtualRadio::open(RadioOptions::new(1, WIDE)).unwrap();
    r.activate(0, ChannelTuning::new(1, 1, R25)).unwrap();
    let (_, a) = r.recv(0, 7680).unwrap();
    std::thread::sleep(Duration::from_millis(60));
    let (_, b) = r.recv(0, 7680).unwrap();
    assert!(b.gap > 0);
    assert_eq!(b.timestamp.0, a.timestamp.0 + 7680 + b.gap);
    // the new block is within the receive buffer of the present
    let now = r.now(0).unwrap().0;
    assert!(now - b.timestamp.0 <= (R25 / 1000) * 21 + 7680);
    let c = r.counters(0).unwrap();
    assert_eq!(c.rx_overflows, 1);
    assert_eq!(c.rx_gap_samples, b.gap);
}

#[test]
fn capture_records_transmissions() {
    let dir = tempfile::tempdir().unwrap();
    let r = VirtualRadio::open(RadioOptions::new(1, WIDE).clock(ClockMode::Fast).capture_dir(dir.path())).unwrap();
    r.activate(0, ChannelTuning::new(580_000_000, 595_000_000, R25)).unwrap();
    let t = tone(100_000, R25, 1000.0, 500);
    r.send(0, t.samples(), SampleTimestamp(40)).unwrap();
    r.send(0, t.samples(), SampleTimestamp(540)).unwrap();
    r.deactivate(0).unwrap();
    let (h, buf) = read_capture(&dir.path().join("ch0-tx.iq")).unwrap();
    assert_eq!((h.sample_rate, h.center_freq_hz, h.start_tick), (R25, 595_000_000, 40));
    assert_eq!(buf.len(), 1000);
    assert_eq!(&buf.samples()[500..], t.samples());
}
