//! What travels on a slice's data channels.
//!
//! The RX channel starts with one 12-byte header, `b"PVTS"` followed by the
//! u64 little-endian tick of the first sample, and is raw samples from then
//! on. Both ends derive every later timestamp by counting samples; the TX
//! channel carries samples only.

use crate::iqcore::SampleTimestamp;

pub const TIMESTAMP_MAGIC: [u8; 4] = *b"PVTS";
pub const TIMESTAMP_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimestampHeader {
    pub timestamp: SampleTimestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("bad stream magic {0:02x?}, expected \"PVTS\"")]
pub struct BadMagic(pub [u8; 4]);

impl TimestampHeader {
    pub fn encode(&self) -> [u8; TIMESTAMP_HEADER_LEN] {
        let mut out = [0u8; TIMESTAMP_HEADER_LEN];
        out[..4].copy_from_slice(&TIMESTAMP_MAGIC);
        out[4..].copy_from_slice(&self.timestamp.0.to_le_bytes());
        out
    }

    pub fn decode(b: &[u8; TIMESTAMP_HEADER_LEN]) -> Result<Self, BadMagic> {
        let magic: [u8; 4] = b[..4].try_into().unwrap();
        if magic != TIMESTAMP_MAGIC {
            return Err(BadMagic(magic));
        }
        Ok(Self { timestamp: SampleTimestamp(u64::from_le_bytes(b[4..].try_into().unwrap())) })
    }
}

/// Timestamp bookkeeping shared by both ends of a stream: the first tick
/// plus however many samples have gone by since.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ledger {
    start: Option<u64>,
    samples: u64,
}

impl Ledger {
    pub fn started(start: SampleTimestamp) -> Self {
        Self { start: Some(start.0), samples: 0 }
    }

    pub fn start(&self) -> Option<SampleTimestamp> {
        self.start.map(SampleTimestamp)
    }

    pub fn is_started(&self) -> bool {
        self.start.is_some()
    }

    pub fn begin(&mut self, start: SampleTimestamp) {
        self.start = Some(start.0);
        self.samples = 0;
    }

    /// Tick of the next sample to go by. Panics before `begin`.
    pub fn next(&self) -> SampleTimestamp {
        SampleTimestamp(self.start.expect("ledger not started") + self.samples)
    }

    pub fn advance(&mut self, n: u64) {
        self.samples += n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip_and_magic() {
        let h = TimestampHeader { timestamp: SampleTimestamp(1_000_000) };
        let b = h.encode();
        assert_eq!(&b[..4], b"PVTS");
        assert_eq!(TimestampHeader::decode(&b).unwrap(), h);
        let mut bad = b;
        bad[0] = b'X';
        assert!(TimestampHeader::decode(&bad).is_err());
    }

    #[test]
    fn ledger_arithmetic() {
        let mut l = Ledger::started(SampleTimestamp(1_000_000));
        for _ in 0..3 {
            l.advance(7680);
        }
        assert_eq!(l.next(), SampleTimestamp(1_023_040));
    }
}
