//! Bit-exact layout of a shared channel region.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "PVCH" (bytes 50 56 43 48)
//!      4     2  version (1)
//!      6     2  role of the creating endpoint (0 = server)
//!      8     4  read ring offset         (server's read ring, client -> server)
//!     12     4  read ring capacity
//!     16     4  write ring offset        (server's write ring, server -> client)
//!     20     4  write ring capacity
//!     24     4  read ring producer counter offset
//!     28     4  read ring consumer counter offset
//!     32     4  write ring producer counter offset
//!     36     4  write ring consumer counter offset
//!     40     4  read ring doorbell offset  {seq u32, waiters u32}
//!     44     4  write ring doorbell offset {seq u32, waiters u32}
//!     48     4  endpoint state offset      {server u32, client u32}
//!     52     4  doorbell port (random, must match the published credentials)
//!     56     8  reserved, zero
//!     64   448  control block: each counter, doorbell and the state pair on
//!               its own 64-byte line, at the offsets named above
//!   4096     -  read ring bytes, then write ring bytes
//! ```
//!
//! All integers are little-endian. Counters are free-running u32 values;
//! a ring position is `counter & (capacity - 1)`.

pub const MAGIC: [u8; 4] = *b"PVCH";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;
pub const ROLE_SERVER: u16 = 0;

pub const READ_PROD: usize = 64;
pub const READ_CONS: usize = 128;
pub const WRITE_PROD: usize = 192;
pub const WRITE_CONS: usize = 256;
pub const READ_BELL: usize = 320;
pub const WRITE_BELL: usize = 384;
pub const STATE: usize = 448;
pub const RINGS: usize = 4096;

pub const MIN_CAPACITY: u32 = 64;
pub const MAX_CAPACITY: u32 = 1 << 30;

/// Endpoint lifecycle values stored in the state pair.
pub const STATE_NEVER: u32 = 0;
pub const STATE_OPEN: u32 = 1;
pub const STATE_CLOSED: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub role: u16,
    pub read_off: u32,
    pub read_cap: u32,
    pub write_off: u32,
    pub write_cap: u32,
    pub read_prod: u32,
    pub read_cons: u32,
    pub write_prod: u32,
    pub write_cons: u32,
    pub read_bell: u32,
    pub write_bell: u32,
    pub state: u32,
    pub port: u32,
}

impl Header {
    pub fn new(read_cap: u32, write_cap: u32, port: u32) -> Self {
        Self {
            version: VERSION,
            role: ROLE_SERVER,
            read_off: RINGS as u32,
            read_cap,
            write_off: RINGS as u32 + read_cap,
            write_cap,
            read_prod: READ_PROD as u32,
            read_cons: READ_CONS as u32,
            write_prod: WRITE_PROD as u32,
            write_cons: WRITE_CONS as u32,
            read_bell: READ_BELL as u32,
            write_bell: WRITE_BELL as u32,
            state: STATE as u32,
            port,
        }
    }

    pub fn region_len(&self) -> usize {
        RINGS + self.read_cap as usize + self.write_cap as usize
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..8].copy_from_slice(&self.role.to_le_bytes());
        let words = [
            self.read_off,
            self.read_cap,
            self.write_off,
            self.write_cap,
            self.read_prod,
            self.read_cons,
            self.write_prod,
            self.write_cons,
            self.read_bell,
            self.write_bell,
            self.state,
            self.port,
        ];
        for (n, w) in words.iter().enumerate() {
            let at = 8 + 4 * n;
            out[at..at + 4].copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < HEADER_LEN || b[0..4] != MAGIC {
            return None;
        }
        let u16_at = |at: usize| u16::from_le_bytes([b[at], b[at + 1]]);
        let u32_at = |at: usize| u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]);
        Some(Self {
            version: u16_at(4),
            role: u16_at(6),
            read_off: u32_at(8),
            read_cap: u32_at(12),
            write_off: u32_at(16),
            write_cap: u32_at(20),
            read_prod: u32_at(24),
            read_cons: u32_at(28),
            write_prod: u32_at(32),
            write_cons: u32_at(36),
            read_bell: u32_at(40),
            write_bell: u32_at(44),
            state: u32_at(48),
            port: u32_at(52),
        })
    }

    /// Structural checks a client performs before trusting a mapped region.
    pub fn is_consistent(&self, region_len: usize) -> bool {
        let cap_ok = |c: u32| c.is_power_of_two() && (MIN_CAPACITY..=MAX_CAPACITY).contains(&c);
        let line_ok = |off: u32| (off as usize) >= HEADER_LEN && (off as usize) + 8 <= RINGS && off % 4 == 0;
        self.version == VERSION
            && cap_ok(self.read_cap)
            && cap_ok(self.write_cap)
            && self.read_off as usize >= RINGS
            && self.write_off as usize >= RINGS
            && self.read_off as usize + self.read_cap as usize <= region_len
            && self.write_off as usize + self.write_cap as usize <= region_len
            && [
                self.read_prod,
                self.read_cons,
                self.write_prod,
                self.write_cons,
                self.read_bell,
                self.write_bell,
                self.state,
            ]
            .into_iter()
            .all(line_ok)
    }
}
