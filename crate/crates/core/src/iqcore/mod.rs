//! Sample formats, bandwidth profiles, timestamp arithmetic and band planning.
//!
//! Everything in here is plain data and pure functions; the streaming layers
//! build on these types and never re-derive subframe sizes themselves.

mod config;
mod plan;

pub use config::{ConfigError, SliceConfig};
pub use plan::{validate_fdm_plan, Band, Conflict, ConflictKind, ConflictReport, FdmPlan, PlanEntry};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use thiserror::Error;

/// Width of one serialized sample in bytes (16-bit I, 16-bit Q).
pub const SAMPLE_BYTES: usize = 4;

/// Time advance applied to the TX stream at 25 PRB, in samples.
pub const TX_OFFSET_25PRB: u64 = 30_640;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("unsupported PRB count {0} (expected 25, 50 or 100)")]
    UnsupportedPrbs(u32),
}

/// One complex baseband sample in ADC units.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct IqSample {
    pub i: i16,
    pub q: i16,
}

impl IqSample {
    pub const ZERO: IqSample = IqSample { i: 0, q: 0 };

    pub const fn new(i: i16, q: i16) -> Self {
        Self { i, q }
    }

    /// Interleaved little-endian wire form: I then Q.
    pub fn to_le_bytes(self) -> [u8; SAMPLE_BYTES] {
        let i = self.i.to_le_bytes();
        let q = self.q.to_le_bytes();
        [i[0], i[1], q[0], q[1]]
    }

    pub fn from_le_bytes(b: [u8; SAMPLE_BYTES]) -> Self {
        Self {
            i: i16::from_le_bytes([b[0], b[1]]),
            q: i16::from_le_bytes([b[2], b[3]]),
        }
    }

    pub fn power(self) -> f64 {
        let i = f64::from(self.i);
        let q = f64::from(self.q);
        i * i + q * q
    }
}

/// Serializes `samples` into `out`, which must be exactly `4 * samples.len()` bytes.
pub fn encode_samples(samples: &[IqSample], out: &mut [u8]) {
    assert_eq!(out.len(), samples.len() * SAMPLE_BYTES, "output length mismatch");
    for (s, chunk) in samples.iter().zip(out.chunks_exact_mut(SAMPLE_BYTES)) {
        chunk.copy_from_slice(&s.to_le_bytes());
    }
}

/// Inverse of [`encode_samples`].
pub fn decode_samples(bytes: &[u8], out: &mut [IqSample]) {
    assert_eq!(bytes.len(), out.len() * SAMPLE_BYTES, "input length mismatch");
    for (s, chunk) in out.iter_mut().zip(bytes.chunks_exact(SAMPLE_BYTES)) {
        *s = IqSample::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
    }
}

/// A contiguous run of samples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IqBuffer {
    samples: Vec<IqSample>,
}

impl IqBuffer {
    pub fn new(samples: Vec<IqSample>) -> Self {
        Self { samples }
    }

    pub fn zeroed(len: usize) -> Self {
        Self { samples: vec![IqSample::ZERO; len] }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn byte_len(&self) -> usize {
        self.samples.len() * SAMPLE_BYTES
    }

    pub fn samples(&self) -> &[IqSample] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [IqSample] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<IqSample> {
        self.samples
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.byte_len()];
        encode_samples(&self.samples, &mut out);
        out
    }

    /// Fails if the byte count is not a whole number of samples.
    pub fn from_le_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() % SAMPLE_BYTES != 0 {
            return None;
        }
        let mut samples = vec![IqSample::ZERO; bytes.len() / SAMPLE_BYTES];
        decode_samples(bytes, &mut samples);
        Some(Self { samples })
    }
}

impl From<Vec<IqSample>> for IqBuffer {
    fn from(samples: Vec<IqSample>) -> Self {
        Self::new(samples)
    }
}

/// Sample count since the radio epoch, at the channel sample rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleTimestamp(pub u64);

impl SampleTimestamp {
    pub const fn ticks(self) -> u64 {
        self.0
    }
}

impl Add<u64> for SampleTimestamp {
    type Output = SampleTimestamp;
    fn add(self, rhs: u64) -> Self::Output {
        SampleTimestamp(self.0 + rhs)
    }
}

impl AddAssign<u64> for SampleTimestamp {
    fn add_assign(&mut self, rhs: u64) {
        self.0 += rhs;
    }
}

impl Sub for SampleTimestamp {
    type Output = i128;
    fn sub(self, rhs: Self) -> i128 {
        i128::from(self.0) - i128::from(rhs.0)
    }
}

impl fmt::Display for SampleTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// LTE channel bandwidth, in physical resource blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum BandwidthProfile {
    Prb25,
    Prb50,
    Prb100,
}

impl BandwidthProfile {
    pub const ALL: [BandwidthProfile; 3] = [Self::Prb25, Self::Prb50, Self::Prb100];

    pub fn from_prbs(prbs: u32) -> Result<Self, ProfileError> {
        match prbs {
            25 => Ok(Self::Prb25),
            50 => Ok(Self::Prb50),
            100 => Ok(Self::Prb100),
            other => Err(ProfileError::UnsupportedPrbs(other)),
        }
    }

    pub fn prbs(self) -> u32 {
        match self {
            Self::Prb25 => 25,
            Self::Prb50 => 50,
            Self::Prb100 => 100,
        }
    }

    /// Samples in one 1 ms subframe.
    pub fn samples_per_subframe(self) -> u64 {
        match self {
            Self::Prb25 => 7_680,
            Self::Prb50 => 15_360,
            Self::Prb100 => 30_720,
        }
    }

    pub fn bytes_per_subframe(self) -> usize {
        self.samples_per_subframe() as usize * SAMPLE_BYTES
    }

    /// Samples per second.
    pub fn sample_rate(self) -> u64 {
        self.samples_per_subframe() * 1_000
    }

    /// Fronthaul bit rate needed to carry the stream (32 bits per sample).
    pub fn required_link_rate(self) -> u64 {
        self.sample_rate() * 32
    }

    /// Default TX time advance. The 25 PRB constant scaled by sample rate,
    /// rounded half-up.
    pub fn tx_offset(self) -> u64 {
        let base = BandwidthProfile::Prb25.samples_per_subframe();
        (TX_OFFSET_25PRB * self.samples_per_subframe() + base / 2) / base
    }

    pub fn from_sample_rate(rate: u64) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.sample_rate() == rate)
    }
}

impl TryFrom<u32> for BandwidthProfile {
    type Error = ProfileError;
    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Self::from_prbs(v)
    }
}

impl From<BandwidthProfile> for u32 {
    fn from(p: BandwidthProfile) -> u32 {
        p.prbs()
    }
}

impl fmt::Display for BandwidthProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} PRB", self.prbs())
    }
}

pub fn samples_per_subframe(prbs: u32) -> Result<u64, ProfileError> {
    Ok(BandwidthProfile::from_prbs(prbs)?.samples_per_subframe())
}

pub fn bytes_per_subframe(prbs: u32) -> Result<usize, ProfileError> {
    Ok(BandwidthProfile::from_prbs(prbs)?.bytes_per_subframe())
}

pub fn required_link_rate(prbs: u32) -> Result<u64, ProfileError> {
    Ok(BandwidthProfile::from_prbs(prbs)?.required_link_rate())
}

pub fn tx_offset(prbs: u32) -> Result<u64, ProfileError> {
    Ok(BandwidthProfile::from_prbs(prbs)?.tx_offset())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SliceId(pub u32);

impl fmt::Display for SliceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RadioChannelId(pub u32);

impl RadioChannelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for RadioChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
