use super::{Frame, Modulation, PhyProfile};
use crate::iqcore::{IqBuffer, IqSample};
use num_complex::Complex32;
use std::f32::consts::FRAC_1_SQRT_2;

/// Peak amplitude of a modulated symbol.
pub const AMPLITUDE: f32 = 8192.0;
/// Normalized preamble correlation needed to attempt a decode.
const DETECT: f32 = 0.6;
/// Windows quieter than this (mean power) are not searched.
const SILENCE_POWER: f64 = 400.0 * 400.0;

fn symbols_for(profile: &PhyProfile, bytes: &[u8]) -> Vec<Complex32> {
    let bit = |i: usize| (bytes[i / 8] >> (i % 8)) & 1;
    let level = |b: u8| if b == 0 { 1.0 } else { -1.0 };
    let nbits = bytes.len() * 8;
    match profile.modulation {
        Modulation::Bpsk => (0..nbits).map(|i| Complex32::new(level(bit(i)), 0.0)).collect(),
        Modulation::Qpsk => (0..nbits)
            .step_by(2)
            .map(|i| {
                let q = if i + 1 < nbits { level(bit(i + 1)) } else { 1.0 };
                Complex32::new(level(bit(i)), q) * FRAC_1_SQRT_2
            })
            .collect(),
    }
}

/// Preamble, then the frame bytes LSB first, rectangular pulses.
pub fn modulate(profile: &PhyProfile, frame: &Frame) -> IqBuffer {
    let mut out = Vec::with_capacity(profile.frame_samples(frame.payload.len()));
    let body = symbols_for(profile, &frame.to_bytes());
    for s in profile.preamble.iter().chain(&body) {
        let v = *s * AMPLITUDE;
        let sample = IqSample::new(v.re.round() as i16, v.im.round() as i16);
        out.extend(std::iter::repeat_n(sample, profile.samples_per_symbol));
    }
    IqBuffer::new(out)
}

/// All clean frames in a block.
pub fn demodulate(profile: &PhyProfile, stream: &IqBuffer) -> Vec<Frame> {
    let mut d = Demodulator::new(profile.clone());
    d.push(stream.samples(), 0);
    d.drain().into_iter().map(|r| r.frame).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Received {
    pub frame: Frame,
    /// Tick of the first preamble sample.
    pub tick: u64,
}

/// Streaming receiver: preamble correlation on integrate-and-dump
/// outputs, phase from the preamble, hard decisions, CRC check.
pub struct Demodulator {
    profile: PhyProfile,
    x: Vec<Complex32>,
    /// Running sums over one symbol: `mf[i] = x[i] + ... + x[i+sps-1]`.
    mf: Vec<Complex32>,
    /// Prefix sums of |x|^2.
    energy: Vec<f64>,
    base: u64,
    scan: usize,
    out: Vec<Received>,
    rejected: u64,
}

impl Demodulator {
    pub fn new(profile: PhyProfile) -> Self {
        Self { profile, x: Vec::new(), mf: Vec::new(), energy: vec![0.0], base: 0, scan: 0, out: Vec::new(), rejected: 0 }
    }

    pub fn profile(&self) -> &PhyProfile {
        &self.profile
    }

    /// Candidates that failed the CRC or length checks.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Appends samples starting at `tick`. A discontinuity drops whatever
    /// partial frame was buffered.
    pub fn push(&mut self, samples: &[IqSample], tick: u64) {
        if tick != self.base + self.x.len() as u64 {
            self.x.clear();
            self.mf.clear();
            self.energy.truncate(1);
            self.base = tick;
            self.scan = 0;
        }
        let sps = self.profile.samples_per_symbol;
        let mut acc = *self.energy.last().unwrap();
        for s in samples {
            let c = Complex32::new(f32::from(s.i), f32::from(s.q));
            acc += f64::from(c.norm_sqr());
            self.energy.push(acc);
            self.x.push(c);
            let n = self.x.len();
            if n >= sps {
                let start = n - sps;
                let v = if start == 0 {
                    self.x[..sps].iter().sum()
                } else {
                    self.mf[start - 1] - self.x[start - 1] + c
                };
                self.mf.push(v);
            }
        }
        self.search();
        self.compact();
    }

    pub fn drain(&mut self) -> Vec<Received> {
        std::mem::take(&mut self.out)
    }

    fn preamble_span(&self) -> usize {
        self.profile.preamble.len() * self.profile.samples_per_symbol
    }

    /// Correlation of the preamble against the symbol sums starting at `p`,
    /// and the energy of those sums.
    fn correlate(&self, p: usize) -> (Complex32, f32) {
        let sps = self.profile.samples_per_symbol;
        let mut c = Complex32::new(0.0, 0.0);
        let mut e = 0.0;
        for (k, pre) in self.profile.preamble.iter().enumerate() {
            let m = self.mf[p + k * sps];
            c += m * pre.conj();
            e += m.norm_sqr();
        }
        (c, e)
    }

    fn rho(&self, c: Complex32, e: f32) -> f32 {
        if e <= 0.0 {
            return 0.0;
        }
        c.norm() / ((self.profile.preamble.len() as f32).sqrt() * e.sqrt())
    }

    fn search(&mut self) {
        let span = self.preamble_span();
        loop {
            // need room for a full peak search window past the candidate
            if self.scan + 2 * span > self.mf.len() {
                return;
            }
            let p = self.scan;
            let power = (self.energy[p + span] - self.energy[p]) / span as f64;
            if power < SILENCE_POWER {
                self.scan += 1;
                continue;
            }
            let (c, e) = self.correlate(p);
            if self.rho(c, e) < DETECT {
                self.scan += 1;
                continue;
            }
            // the threshold can trip on a partial overlap; take the peak
            let (best, bc, be) = (p..p + span)
                .map(|q| {
                    let (c, e) = self.correlate(q);
                    (q, c, e)
                })
                .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
                .unwrap();
            if self.rho(bc, be) < DETECT {
                self.scan += 1;
                continue;
            }
            match self.decode_at(best, bc) {
                Decode::NeedMore => {
                    self.scan = best;
                    return;
                }
                Decode::Frame(frame, len) => {
                    self.out.push(Received { frame, tick: self.base + best as u64 });
                    self.scan = best + len;
                }
                Decode::Reject => {
                    self.rejected += 1;
                    self.scan = best + 1;
                }
            }
        }
    }

    fn decode_at(&self, q: usize, c: Complex32) -> Decode {
        let sps = self.profile.samples_per_symbol;
        let bps = self.profile.modulation.bits_per_symbol();
        let derot = c.conj() / c.norm();
        let first = q + self.profile.preamble.len() * sps;
        let bytes_from = |nbytes: usize| -> Option<Vec<u8>> {
            let nsym = (nbytes * 8).div_ceil(bps);
            if first + (nsym - 1) * sps >= self.mf.len() {
                return None;
            }
            let mut out = vec![0u8; nbytes];
            for k in 0..nsym {
                let y = self.mf[first + k * sps] * derot;
                let bits = [(y.re < 0.0) as u8, (y.im < 0.0) as u8];
                for (j, b) in bits.iter().take(bps).enumerate() {
                    let i = k * bps + j;
                    if i < nbytes * 8 {
                        out[i / 8] |= b << (i % 8);
                    }
                }
            }
            Some(out)
        };
        let Some(head) = bytes_from(Frame::HEADER) else { return Decode::NeedMore };
        let len = Frame::peek_len(&head).unwrap();
        if len > self.profile.max_payload {
            return Decode::Reject;
        }
        let Some(all) = bytes_from(Frame::OVERHEAD + len) else { return Decode::NeedMore };
        match Frame::from_bytes(&all, self.profile.max_payload) {
            Ok(f) => Decode::Frame(f, self.profile.frame_samples(len)),
            Err(_) => Decode::Reject,
        }
    }

    /// Drops samples the search has moved past.
    fn compact(&mut self) {
        let drop = self.scan.min(self.mf.len());
        if drop < 4096 {
            return;
        }
        self.x.drain(..drop);
        self.mf.drain(..drop);
        let offset = self.energy[drop];
        self.energy.drain(..drop);
        self.energy.iter_mut().for_each(|e| *e -= offset);
        self.base += drop as u64;
        self.scan -= drop;
    }
}

enum Decode {
    NeedMore,
    Frame(Frame, usize),
    Reject,
}
