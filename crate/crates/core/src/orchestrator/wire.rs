//! Request-reply frames on the control port: a 4-byte big-endian length,
//! then that many bytes of UTF-8 JSON. See `docs/orchestrator-protocol.md`.

use super::{CreateSlice, OrchError, Orchestrator, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::io::{self, Read, Write};

/// Frames longer than this close the connection.
pub const MAX_FRAME: u32 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Create,
    Destroy,
    List,
    Metrics,
    SetBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub schema_version: u32,
    pub verb: Verb,
    #[serde(default)]
    pub body: Value,
}

impl Request {
    pub fn new(verb: Verb, body: Value) -> Self {
        Self { schema_version: SCHEMA_VERSION, verb, body }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplyStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// `bad_request`, `unsupported_schema` or one of [`OrchError::code`].
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blockers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub schema_version: u32,
    pub status: ReplyStatus,
    #[serde(default)]
    pub body: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Reply {
    pub fn ok(body: Value) -> Self {
        Self { schema_version: SCHEMA_VERSION, status: ReplyStatus::Ok, body, error: None }
    }

    pub fn error(code: &str, message: impl Into<String>, blockers: Vec<u32>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            status: ReplyStatus::Error,
            body: Value::Null,
            error: Some(ErrorBody { code: code.into(), message: message.into(), blockers }),
        }
    }

    pub fn from_error(e: &OrchError, slice_id: u32) -> Self {
        Self::error(e.code(), e.to_string(), e.blockers(slice_id))
    }
}

#[derive(Debug, Deserialize)]
struct SliceRef {
    slice_id: u32,
}

#[derive(Debug, Deserialize)]
struct Bands {
    slice_id: u32,
    dl_freq_hz: u64,
    ul_freq_hz: u64,
}

fn body<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, Reply> {
    serde_json::from_value(v).map_err(|e| Reply::error("bad_request", format!("bad body: {e}"), Vec::new()))
}

fn json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Runs one request against the command core.
pub fn handle(orch: &Orchestrator, req: Request) -> Reply {
    if req.schema_version != SCHEMA_VERSION {
        return Reply::error(
            "unsupported_schema",
            format!("schema_version {} not supported (this service speaks {SCHEMA_VERSION})", req.schema_version),
            Vec::new(),
        );
    }
    let run = || -> Result<Reply, Reply> {
        Ok(match req.verb {
            Verb::List => Reply::ok(json(&orch.list())),
            Verb::Metrics => Reply::ok(json(orch.metrics().as_ref())),
            Verb::Create => {
                let c: CreateSlice = body(req.body)?;
                let id = c.config.slice_id.0;
                orch.create(c).map(|d| Reply::ok(json(&d))).unwrap_or_else(|e| Reply::from_error(&e, id))
            }
            Verb::Destroy => {
                let r: SliceRef = body(req.body)?;
                orch.destroy(r.slice_id).map(|f| Reply::ok(json(&f))).unwrap_or_else(|e| Reply::from_error(&e, r.slice_id))
            }
            Verb::SetBand => {
                let b: Bands = body(req.body)?;
                orch.set_band(b.slice_id, b.dl_freq_hz, b.ul_freq_hz)
                    .map(|d| Reply::ok(json(&d)))
                    .unwrap_or_else(|e| Reply::from_error(&e, b.slice_id))
            }
        })
    };
    run().unwrap_or_else(|r| r)
}

/// Decodes a frame body; anything unparsable becomes a `bad_request` reply.
pub fn parse_request(bytes: &[u8]) -> Result<Request, Reply> {
    serde_json::from_slice(bytes).map_err(|e| Reply::error("bad_request", format!("malformed request: {e}"), Vec::new()))
}

pub fn encode_frame(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    out
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    w.write_all(&encode_frame(body))?;
    w.flush()
}

pub fn read_frame(r: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds {MAX_FRAME}")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
