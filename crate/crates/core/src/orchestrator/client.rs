use super::wire::{read_frame, write_frame, Reply, ReplyStatus, Request, Verb};
use super::{CreateSlice, FinalCounters, MetricsSnapshot, SliceDescriptor};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use std::io;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed reply: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("{code}: {message}")]
    Rejected { code: String, message: String, blockers: Vec<u32> },
}

/// Blocking client for the request-reply port. One request in flight.
pub struct Client {
    stream: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_secs(30)))?;
        Ok(Self { stream })
    }

    /// Sends one request and returns the raw reply.
    pub fn call(&mut self, req: &Request) -> Result<Reply, ClientError> {
        write_frame(&mut self.stream, &serde_json::to_vec(req)?)?;
        Ok(serde_json::from_slice(&read_frame(&mut self.stream)?)?)
    }

    fn verb<T: DeserializeOwned>(&mut self, verb: Verb, body: Value) -> Result<T, ClientError> {
        let r = self.call(&Request::new(verb, body))?;
        match (r.status, r.error) {
            (ReplyStatus::Ok, _) => Ok(serde_json::from_value(r.body)?),
            (ReplyStatus::Error, Some(e)) => {
                Err(ClientError::Rejected { code: e.code, message: e.message, blockers: e.blockers })
            }
            (ReplyStatus::Error, None) => {
                Err(ClientError::Rejected { code: "unknown".into(), message: String::new(), blockers: Vec::new() })
            }
        }
    }

    pub fn list(&mut self) -> Result<Vec<SliceDescriptor>, ClientError> {
        self.verb(Verb::List, Value::Null)
    }

    pub fn metrics(&mut self) -> Result<MetricsSnapshot, ClientError> {
        self.verb(Verb::Metrics, Value::Null)
    }

    pub fn create(&mut self, req: &CreateSlice) -> Result<SliceDescriptor, ClientError> {
        self.verb(Verb::Create, serde_json::to_value(req)?)
    }

    pub fn destroy(&mut self, slice_id: u32) -> Result<FinalCounters, ClientError> {
        self.verb(Verb::Destroy, json!({ "slice_id": slice_id }))
    }

    pub fn set_band(&mut self, slice_id: u32, dl_freq_hz: u64, ul_freq_hz: u64) -> Result<SliceDescriptor, ClientError> {
        self.verb(Verb::SetBand, json!({ "slice_id": slice_id, "dl_freq_hz": dl_freq_hz, "ul_freq_hz": ul_freq_hz }))
    }
}
