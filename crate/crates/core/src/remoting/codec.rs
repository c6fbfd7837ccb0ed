//! Control frames: a 12-byte little-endian header followed by the payload.
//!
//! ```text
//! 0      2              6        8              12
//! | op u16 | cid u32     | status | payload_len u32 | payload ...
//! ```
//!
//! Replies carry `128 | op` and echo the request's correlation id.

use crate::iqcore::SliceConfig;
use std::fmt;
use thiserror::Error;

pub const HEADER_LEN: usize = 12;
pub const REPLY_BIT: u16 = 0x80;
/// Larger payloads are refused before any allocation.
pub const MAX_PAYLOAD: u32 = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum Opcode {
    Init = 1,
    Find = 2,
    SetRxFreq = 3,
    SetTxFreq = 4,
    SetRxGain = 5,
    SetTxGain = 6,
    SetRate = 7,
    Shutdown = 8,
}

impl Opcode {
    pub const ALL: [Opcode; 8] = [
        Opcode::Init,
        Opcode::Find,
        Opcode::SetRxFreq,
        Opcode::SetTxFreq,
        Opcode::SetRxGain,
        Opcode::SetTxGain,
        Opcode::SetRate,
        Opcode::Shutdown,
    ];

    pub fn from_u16(v: u16) -> Option<Self> {
        Self::ALL.iter().copied().find(|o| *o as u16 == v)
    }
}

/// Reply status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum Status {
    Ok = 0,
    BadRequest = 1,
    UnknownOpcode = 2,
    FdmConflict = 3,
    ChannelInUse = 4,
    AlreadyActive = 5,
    NotEstablished = 6,
    OutOfRange = 7,
    Internal = 8,
}

impl Status {
    pub fn from_u16(v: u16) -> Option<Self> {
        use Status::*;
        [Ok, BadRequest, UnknownOpcode, FdmConflict, ChannelInUse, AlreadyActive, NotEstablished, OutOfRange, Internal]
            .into_iter()
            .find(|s| *s as u16 == v)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Ok => "ok",
            Status::BadRequest => "bad request",
            Status::UnknownOpcode => "unknown opcode",
            Status::FdmConflict => "FDM conflict",
            Status::ChannelInUse => "channel in use",
            Status::AlreadyActive => "already active",
            Status::NotEstablished => "not established",
            Status::OutOfRange => "out of range",
            Status::Internal => "internal error",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("truncated frame: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unknown opcode {0:#06x}")]
    UnknownOpcode(u16),
    #[error("payload of {0} bytes exceeds the limit")]
    PayloadTooLarge(u32),
    #[error("{0} trailing bytes after frame")]
    Trailing(usize),
    #[error("bad payload: {0}")]
    BadPayload(String),
}

/// Header fields as they appear on the wire, opcode not yet validated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawHeader {
    pub opcode: u16,
    pub correlation_id: u32,
    pub status: u16,
    pub payload_len: u32,
}

impl RawHeader {
    pub fn parse(b: &[u8]) -> Result<Self, CodecError> {
        if b.len() < HEADER_LEN {
            return Err(CodecError::Truncated { need: HEADER_LEN, have: b.len() });
        }
        Ok(Self {
            opcode: u16::from_le_bytes([b[0], b[1]]),
            correlation_id: u32::from_le_bytes([b[2], b[3], b[4], b[5]]),
            status: u16::from_le_bytes([b[6], b[7]]),
            payload_len: u32::from_le_bytes([b[8], b[9], b[10], b[11]]),
        })
    }

    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload_len as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlMessage {
    pub opcode: Opcode,
    pub reply: bool,
    pub correlation_id: u32,
    /// Meaningful on replies only; see [`Status`].
    pub status: u16,
    pub payload: Vec<u8>,
}

impl ControlMessage {
    pub fn request(opcode: Opcode, correlation_id: u32, payload: Vec<u8>) -> Self {
        Self { opcode, reply: false, correlation_id, status: 0, payload }
    }

    pub fn reply_to(&self, status: Status, payload: Vec<u8>) -> Self {
        Self { opcode: self.opcode, reply: true, correlation_id: self.correlation_id, status: status as u16, payload }
    }

    pub fn wire_opcode(&self) -> u16 {
        self.opcode as u16 | if self.reply { REPLY_BIT } else { 0 }
    }

    pub fn status(&self) -> Option<Status> {
        Status::from_u16(self.status)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.wire_opcode().to_le_bytes());
        out.extend_from_slice(&self.correlation_id.to_le_bytes());
        out.extend_from_slice(&self.status.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes exactly one frame occupying all of `b`.
    pub fn decode(b: &[u8]) -> Result<Self, CodecError> {
        let (msg, used) = Self::decode_prefix(b)?;
        if used != b.len() {
            return Err(CodecError::Trailing(b.len() - used));
        }
        Ok(msg)
    }

    /// Decodes the frame at the start of `b`, returning it and its length.
    pub fn decode_prefix(b: &[u8]) -> Result<(Self, usize), CodecError> {
        let h = RawHeader::parse(b)?;
        if h.payload_len > MAX_PAYLOAD {
            return Err(CodecError::PayloadTooLarge(h.payload_len));
        }
        let opcode = Opcode::from_u16(h.opcode & !REPLY_BIT).ok_or(CodecError::UnknownOpcode(h.opcode))?;
        let need = h.frame_len();
        if b.len() < need {
            return Err(CodecError::Truncated { need, have: b.len() });
        }
        let msg = Self {
            opcode,
            reply: h.opcode & REPLY_BIT != 0,
            correlation_id: h.correlation_id,
            status: h.status,
            payload: b[HEADER_LEN..need].to_vec(),
        };
        Ok((msg, need))
    }
}

/// A decoded request with its typed argument.
#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Init(SliceConfig),
    Find,
    SetRxFreq(u64),
    SetTxFreq(u64),
    SetRxGain(i32),
    SetTxGain(i32),
    SetRate(u64),
    Shutdown,
}

fn u64_arg(p: &[u8]) -> Result<u64, CodecError> {
    let b: [u8; 8] = p.try_into().map_err(|_| CodecError::BadPayload(format!("expected 8 bytes, got {}", p.len())))?;
    Ok(u64::from_le_bytes(b))
}

fn i32_arg(p: &[u8]) -> Result<i32, CodecError> {
    let b: [u8; 4] = p.try_into().map_err(|_| CodecError::BadPayload(format!("expected 4 bytes, got {}", p.len())))?;
    Ok(i32::from_le_bytes(b))
}

fn empty(p: &[u8]) -> Result<(), CodecError> {
    if p.is_empty() {
        Ok(())
    } else {
        Err(CodecError::BadPayload(format!("expected no payload, got {} bytes", p.len())))
    }
}

impl Request {
    pub fn opcode(&self) -> Opcode {
        match self {
            Request::Init(_) => Opcode::Init,
            Request::Find => Opcode::Find,
            Request::SetRxFreq(_) => Opcode::SetRxFreq,
            Request::SetTxFreq(_) => Opcode::SetTxFreq,
            Request::SetRxGain(_) => Opcode::SetRxGain,
            Request::SetTxGain(_) => Opcode::SetTxGain,
            Request::SetRate(_) => Opcode::SetRate,
            Request::Shutdown => Opcode::Shutdown,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        match self {
            Request::Init(cfg) => cfg.to_toml_string().into_bytes(),
            Request::Find | Request::Shutdown => Vec::new(),
            Request::SetRxFreq(v) | Request::SetTxFreq(v) | Request::SetRate(v) => v.to_le_bytes().to_vec(),
            Request::SetRxGain(v) | Request::SetTxGain(v) => v.to_le_bytes().to_vec(),
        }
    }

    pub fn to_message(&self, correlation_id: u32) -> ControlMessage {
        ControlMessage::request(self.opcode(), correlation_id, self.payload())
    }

    pub fn parse(op: Opcode, p: &[u8]) -> Result<Self, CodecError> {
        Ok(match op {
            Opcode::Init => {
                let text = std::str::from_utf8(p).map_err(|e| CodecError::BadPayload(e.to_string()))?;
                Request::Init(SliceConfig::from_toml_str(text).map_err(|e| CodecError::BadPayload(e.to_string()))?)
            }
            Opcode::Find => empty(p).map(|_| Request::Find)?,
            Opcode::Shutdown => empty(p).map(|_| Request::Shutdown)?,
            Opcode::SetRxFreq => Request::SetRxFreq(u64_arg(p)?),
            Opcode::SetTxFreq => Request::SetTxFreq(u64_arg(p)?),
            Opcode::SetRate => Request::SetRate(u64_arg(p)?),
            Opcode::SetRxGain => Request::SetRxGain(i32_arg(p)?),
            Opcode::SetTxGain => Request::SetTxGain(i32_arg(p)?),
        })
    }
}

/// Reply payload of a SET request: the value in effect, same encoding.
pub fn decode_u64(p: &[u8]) -> Result<u64, CodecError> {
    u64_arg(p)
}

pub fn decode_i32(p: &[u8]) -> Result<i32, CodecError> {
    i32_arg(p)
}
