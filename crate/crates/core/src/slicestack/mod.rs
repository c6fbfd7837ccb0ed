//! Two toy PHY/link stacks that sit on top of [`SdrDevice`]: framing with a
//! CRC, single-carrier QPSK or BPSK with a known preamble, and eNB/UE loops
//! that process one subframe per read.
//!
//! [`SdrDevice`]: crate::remoting::SdrDevice

mod endpoint;
mod modem;
mod trx;

pub use endpoint::{
    run_enb, run_ue, EndpointStats, LiveStats, Role, RunLimits, SliceEndpoint, StatsRecord, Traffic, LIVE_EVERY, PAYLOAD_HEADER_LEN,
    UL_OFFSET_SUBFRAMES,
};
pub use modem::{demodulate, modulate, Demodulator, Received, AMPLITUDE};
pub use trx::{TrxError, TrxState};

use num_complex::Complex32;
use std::f32::consts::FRAC_1_SQRT_2;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    Bpsk,
    Qpsk,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhyProfile {
    pub name: &'static str,
    pub modulation: Modulation,
    pub samples_per_symbol: usize,
    /// Unit-magnitude preamble symbols.
    pub preamble: Vec<Complex32>,
    pub max_payload: usize,
}

/// Galois LFSR output as ±1.
fn lfsr(taps: u32, seed: u32, len: usize) -> Vec<f32> {
    let mut state = seed;
    (0..len)
        .map(|_| {
            let bit = state & 1;
            state >>= 1;
            if bit == 1 {
                state ^= taps;
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

fn phy_a() -> PhyProfile {
    // x^7 + x^6 + 1; seeds picked for low autocorrelation sidelobes
    let re = lfsr(0x60, 112, 32);
    let im = lfsr(0x60, 29, 32);
    PhyProfile {
        name: "phy-a",
        modulation: Modulation::Qpsk,
        samples_per_symbol: 4,
        preamble: re.iter().zip(&im).map(|(&i, &q)| Complex32::new(i, q) * FRAC_1_SQRT_2).collect(),
        max_payload: 256,
    }
}

fn phy_b() -> PhyProfile {
    PhyProfile {
        name: "phy-b",
        modulation: Modulation::Bpsk,
        samples_per_symbol: 8,
        // x^9 + x^5 + 1
        preamble: lfsr(0x110, 366, 48).into_iter().map(|b| Complex32::new(b, 0.0)).collect(),
        max_payload: 64,
    }
}

impl PhyProfile {
    pub const NAMES: [&'static str; 2] = ["phy-a", "phy-b"];

    pub fn by_name(name: &str) -> Option<&'static PhyProfile> {
        static PROFILES: OnceLock<[PhyProfile; 2]> = OnceLock::new();
        PROFILES.get_or_init(|| [phy_a(), phy_b()]).iter().find(|p| p.name == name)
    }

    /// Samples occupied by a frame with `payload_len` bytes.
    pub fn frame_samples(&self, payload_len: usize) -> usize {
        let bits = (Frame::OVERHEAD + payload_len) * 8;
        (self.preamble.len() + bits.div_ceil(self.modulation.bits_per_symbol())) * self.samples_per_symbol
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("payload of {len} bytes exceeds the {max}-byte limit")]
    TooLong { len: usize, max: usize },
    #[error("frame truncated")]
    Truncated,
    #[error("CRC mismatch")]
    BadCrc,
}

/// `seq: u32 | len: u16 | payload | crc32`, little-endian; the CRC covers
/// everything before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub seq: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub const HEADER: usize = 6;
    pub const OVERHEAD: usize = Self::HEADER + 4;

    pub fn new(seq: u32, payload: Vec<u8>) -> Self {
        Self { seq, payload }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::OVERHEAD + self.payload.len());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Payload length announced by a header, if `b` holds one.
    pub fn peek_len(b: &[u8]) -> Option<usize> {
        (b.len() >= Self::HEADER).then(|| usize::from(u16::from_le_bytes([b[4], b[5]])))
    }

    pub fn from_bytes(b: &[u8], max_payload: usize) -> Result<Self, FrameError> {
        let len = Self::peek_len(b).ok_or(FrameError::Truncated)?;
        if len > max_payload {
            return Err(FrameError::TooLong { len, max: max_payload });
        }
        let end = Self::HEADER + len;
        if b.len() < end + 4 {
            return Err(FrameError::Truncated);
        }
        let crc = u32::from_le_bytes(b[end..end + 4].try_into().unwrap());
        if crc32fast::hash(&b[..end]) != crc {
            return Err(FrameError::BadCrc);
        }
        Ok(Self { seq: u32::from_le_bytes(b[..4].try_into().unwrap()), payload: b[Self::HEADER..end].to_vec() })
    }
}
