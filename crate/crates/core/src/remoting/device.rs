use super::codec::{decode_i32, decode_u64, CodecError, ControlMessage, Request, Status};
use crate::iqcore::{decode_samples, encode_samples, IqSample, SampleTimestamp, SliceConfig, SAMPLE_BYTES};
use crate::pvback::{ctrl_path, rx_path, tx_path, BadMagic, Ledger, TimestampHeader, TIMESTAMP_HEADER_LEN};
use crate::radiodev::{ChannelTuning, RadioError, VirtualRadio};
use crate::vchan::{client_connect_wait, RendezvousStore, StreamChannel, VchanError};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Device type reported by the simulated radio.
pub const DEVICE_TYPE: &str = "X310-sim";
pub const INIT_TIMEOUT: Duration = Duration::from_secs(5);
pub const SET_TIMEOUT: Duration = Duration::from_secs(1);

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("device handle is not established")]
    NotEstablished,
    #[error("timed out waiting for the backend")]
    Timeout,
    #[error("backend rejected the request ({status}): {message}")]
    Rejected { status: Status, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    BadMagic(#[from] BadMagic),
    #[error("end of stream")]
    EndOfStream,
    #[error("out-of-sequence transmit: expected tick {expected}, got {got}")]
    OutOfSequence { expected: u64, got: u64 },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Vchan(VchanError),
    #[error(transparent)]
    Radio(#[from] RadioError),
}

impl From<VchanError> for DeviceError {
    fn from(e: VchanError) -> Self {
        match e {
            VchanError::EndOfStream | VchanError::PeerClosed => DeviceError::EndOfStream,
            VchanError::TimedOut => DeviceError::Timeout,
            other => DeviceError::Vchan(other),
        }
    }
}

impl DeviceError {
    pub fn status(&self) -> Option<Status> {
        match self {
            DeviceError::Rejected { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// The radio API a slice stack is written against. Streaming is one
/// subframe-sized block per call; timestamps are sample ticks.
pub trait SdrDevice: Send {
    /// Brings the device up and returns its type.
    fn find(&mut self) -> Result<String, DeviceError>;
    fn config(&self) -> &SliceConfig;
    fn is_established(&self) -> bool;
    fn set_rx_freq(&mut self, hz: u64) -> Result<u64, DeviceError>;
    fn set_tx_freq(&mut self, hz: u64) -> Result<u64, DeviceError>;
    fn set_rx_gain(&mut self, db: i32) -> Result<i32, DeviceError>;
    fn set_tx_gain(&mut self, db: i32) -> Result<i32, DeviceError>;
    fn set_rate(&mut self, rate: u64) -> Result<u64, DeviceError>;
    /// Fills `out` and returns the tick of its first sample.
    fn recv(&mut self, out: &mut [IqSample]) -> Result<SampleTimestamp, DeviceError>;
    /// Transmits at `at`, which must continue the TX sequence: the first
    /// RX tick plus the TX offset, then contiguous.
    fn send(&mut self, samples: &[IqSample], at: SampleTimestamp) -> Result<(), DeviceError>;
    fn shutdown(&mut self) -> Result<(), DeviceError>;
}

/// Frontend stub: forwards control calls to the backend dispatcher over
/// `pv/<id>/ctrl` and streams on `pv/<id>/rx` and `pv/<id>/tx`.
pub struct RemoteDevice {
    store: RendezvousStore,
    server_id: u32,
    config: SliceConfig,
    ctrl: StreamChannel,
    rx: Option<StreamChannel>,
    tx: Option<StreamChannel>,
    next_cid: u32,
    device_type: Option<String>,
    rx_ledger: Ledger,
    tx_ledger: Option<Ledger>,
    bytes: Vec<u8>,
}

impl RemoteDevice {
    /// Connects to the slice's control channel, waiting up to `timeout`
    /// for it to be published.
    pub fn connect(
        store: &RendezvousStore,
        server_id: u32,
        config: SliceConfig,
        timeout: Duration,
    ) -> Result<Self, DeviceError> {
        let ctrl = client_connect_wait(store, server_id, &ctrl_path(config.slice_id), timeout)?;
        Ok(Self {
            store: store.clone(),
            server_id,
            config,
            ctrl,
            rx: None,
            tx: None,
            next_cid: 1,
            device_type: None,
            rx_ledger: Ledger::default(),
            tx_ledger: None,
            bytes: Vec::new(),
        })
    }

    pub fn device_type(&self) -> Option<&str> {
        self.device_type.as_deref()
    }

    /// Drops every channel without saying SHUTDOWN, the way a crashed
    /// frontend would disappear.
    pub fn sever(mut self) {
        self.device_type = None;
    }

    /// Sends one request and waits for its reply.
    fn call(&mut self, req: &Request, timeout: Duration) -> Result<ControlMessage, DeviceError> {
        let cid = self.next_cid;
        self.next_cid = self.next_cid.wrapping_add(1);
        let deadline = Instant::now() + timeout;
        let frame = req.to_message(cid).encode();
        let mut sent = 0;
        while sent < frame.len() {
            sent += self.ctrl.write_until(&frame[sent..], deadline)?;
            if sent < frame.len() && Instant::now() >= deadline {
                return Err(DeviceError::Timeout);
            }
        }
        let mut head = [0u8; super::codec::HEADER_LEN];
        self.read_full(&mut head, deadline)?;
        let h = super::codec::RawHeader::parse(&head)?;
        if h.payload_len > super::codec::MAX_PAYLOAD {
            return Err(CodecError::PayloadTooLarge(h.payload_len).into());
        }
        let mut frame = head.to_vec();
        frame.resize(h.frame_len(), 0);
        self.read_full(&mut frame[super::codec::HEADER_LEN..], deadline)?;
        let reply = ControlMessage::decode(&frame)?;
        if !reply.reply || reply.correlation_id != cid || reply.opcode != req.opcode() {
            return Err(DeviceError::Protocol(format!(
                "reply {:#06x} cid {} does not answer request cid {cid}",
                reply.wire_opcode(),
                reply.correlation_id
            )));
        }
        match reply.status() {
            Some(Status::Ok) => Ok(reply),
            Some(status) => {
                Err(DeviceError::Rejected { status, message: String::from_utf8_lossy(&reply.payload).into_owned() })
            }
            None => Err(DeviceError::Protocol(format!("unknown status {}", reply.status))),
        }
    }

    fn read_full(&mut self, buf: &mut [u8], deadline: Instant) -> Result<(), DeviceError> {
        let mut done = 0;
        while done < buf.len() {
            done += self.ctrl.read_until(&mut buf[done..], deadline)?;
            if done < buf.len() && Instant::now() >= deadline {
                return Err(DeviceError::Timeout);
            }
        }
        Ok(())
    }

    fn established(&self) -> Result<(), DeviceError> {
        if self.device_type.is_some() {
            Ok(())
        } else {
            Err(DeviceError::NotEstablished)
        }
    }

    fn set_u64(&mut self, req: Request) -> Result<u64, DeviceError> {
        self.established()?;
        Ok(decode_u64(&self.call(&req, SET_TIMEOUT)?.payload)?)
    }

    fn set_i32(&mut self, req: Request) -> Result<i32, DeviceError> {
        self.established()?;
        Ok(decode_i32(&self.call(&req, SET_TIMEOUT)?.payload)?)
    }
}

impl SdrDevice for RemoteDevice {
    fn find(&mut self) -> Result<String, DeviceError> {
        if let Some(t) = &self.device_type {
            return Ok(t.clone());
        }
        let reply = self.call(&Request::Init(self.config.clone()), INIT_TIMEOUT)?;
        let kind = String::from_utf8(reply.payload).map_err(|e| DeviceError::Protocol(e.to_string()))?;
        let id = self.config.slice_id;
        let mut rx = client_connect_wait(&self.store, self.server_id, &rx_path(id), INIT_TIMEOUT)?;
        let mut tx = client_connect_wait(&self.store, self.server_id, &tx_path(id), INIT_TIMEOUT)?;
        rx.set_timeout(None);
        tx.set_timeout(None);
        self.rx = Some(rx);
        self.tx = Some(tx);
        self.device_type = Some(kind.clone());
        Ok(kind)
    }

    fn config(&self) -> &SliceConfig {
        &self.config
    }

    fn is_established(&self) -> bool {
        self.device_type.is_some()
    }

    fn set_rx_freq(&mut self, hz: u64) -> Result<u64, DeviceError> {
        let v = self.set_u64(Request::SetRxFreq(hz))?;
        self.config.ul_freq_hz = v;
        Ok(v)
    }

    fn set_tx_freq(&mut self, hz: u64) -> Result<u64, DeviceError> {
        let v = self.set_u64(Request::SetTxFreq(hz))?;
        self.config.dl_freq_hz = v;
        Ok(v)
    }

    fn set_rx_gain(&mut self, db: i32) -> Result<i32, DeviceError> {
        let v = self.set_i32(Request::SetRxGain(db))?;
        self.config.rx_gain_db = v;
        Ok(v)
    }

    fn set_tx_gain(&mut self, db: i32) -> Result<i32, DeviceError> {
        let v = self.set_i32(Request::SetTxGain(db))?;
        self.config.tx_gain_db = v;
        Ok(v)
    }

    fn set_rate(&mut self, rate: u64) -> Result<u64, DeviceError> {
        self.set_u64(Request::SetRate(rate))
    }

    fn recv(&mut self, out: &mut [IqSample]) -> Result<SampleTimestamp, DeviceError> {
        let rx = self.rx.as_mut().ok_or(DeviceError::NotEstablished)?;
        if !self.rx_ledger.is_started() {
            let mut head = [0u8; TIMESTAMP_HEADER_LEN];
            rx.read_into(&mut head)?;
            let h = TimestampHeader::decode(&head)?;
            self.rx_ledger.begin(h.timestamp);
            self.tx_ledger = Some(Ledger::started(h.timestamp + self.config.effective_tx_offset()));
        }
        self.bytes.resize(out.len() * SAMPLE_BYTES, 0);
        rx.read_into(&mut self.bytes)?;
        decode_samples(&self.bytes, out);
        let ts = self.rx_ledger.next();
        self.rx_ledger.advance(out.len() as u64);
        Ok(ts)
    }

    fn send(&mut self, samples: &[IqSample], at: SampleTimestamp) -> Result<(), DeviceError> {
        let tx = self.tx.as_mut().ok_or(DeviceError::NotEstablished)?;
        let ledger = self.tx_ledger.as_mut().ok_or(DeviceError::NotEstablished)?;
        if at != ledger.next() {
            return Err(DeviceError::OutOfSequence { expected: ledger.next().0, got: at.0 });
        }
        self.bytes.resize(samples.len() * SAMPLE_BYTES, 0);
        encode_samples(samples, &mut self.bytes);
        tx.write(&self.bytes)?;
        ledger.advance(samples.len() as u64);
        Ok(())
    }

    fn shutdown(&mut self) -> Result<(), DeviceError> {
        if self.device_type.take().is_none() {
            return Ok(());
        }
        let result = self.call(&Request::Shutdown, SET_TIMEOUT).map(|_| ());
        self.rx = None;
        self.tx = None;
        result
    }
}

impl Drop for RemoteDevice {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

/// Binds a slice directly to a radio channel, with no backend in between.
/// Gaps the radio reports are filled with silence so timestamps stay
/// contiguous, as they are through the backend.
pub struct LocalDevice {
    radio: VirtualRadio,
    config: SliceConfig,
    established: bool,
    rx_ledger: Ledger,
    tx_ledger: Option<Ledger>,
    silence: u64,
    carry: Vec<IqSample>,
}

impl LocalDevice {
    pub fn new(radio: VirtualRadio, config: SliceConfig) -> Self {
        Self {
            radio,
            config,
            established: false,
            rx_ledger: Ledger::default(),
            tx_ledger: None,
            silence: 0,
            carry: Vec::new(),
        }
    }

    fn channel(&self) -> Result<usize, DeviceError> {
        if self.established {
            Ok(self.config.radio_channel.index())
        } else {
            Err(DeviceError::NotEstablished)
        }
    }
}

impl SdrDevice for LocalDevice {
    fn find(&mut self) -> Result<String, DeviceError> {
        if !self.established {
            let c = &self.config;
            let mut tuning = ChannelTuning::new(c.ul_freq_hz, c.dl_freq_hz, c.profile.sample_rate());
            tuning.rx_gain_db = c.rx_gain_db;
            tuning.tx_gain_db = c.tx_gain_db;
            self.radio.activate(c.radio_channel.index(), tuning)?;
            self.established = true;
        }
        Ok(DEVICE_TYPE.to_string())
    }

    fn config(&self) -> &SliceConfig {
        &self.config
    }

    fn is_established(&self) -> bool {
        self.established
    }

    fn set_rx_freq(&mut self, hz: u64) -> Result<u64, DeviceError> {
        let v = self.radio.set_rx_freq(self.channel()?, hz)?;
        self.config.ul_freq_hz = v;
        Ok(v)
    }

    fn set_tx_freq(&mut self, hz: u64) -> Result<u64, DeviceError> {
        let v = self.radio.set_tx_freq(self.channel()?, hz)?;
        self.config.dl_freq_hz = v;
        Ok(v)
    }

    fn set_rx_gain(&mut self, db: i32) -> Result<i32, DeviceError> {
        Ok(self.radio.set_rx_gain(self.channel()?, db)?)
    }

    fn set_tx_gain(&mut self, db: i32) -> Result<i32, DeviceError> {
        Ok(self.radio.set_tx_gain(self.channel()?, db)?)
    }

    fn set_rate(&mut self, rate: u64) -> Result<u64, DeviceError> {
        Ok(self.radio.set_rate(self.channel()?, rate)?)
    }

    fn recv(&mut self, out: &mut [IqSample]) -> Result<SampleTimestamp, DeviceError> {
        let ch = self.channel()?;
        let mut filled = 0;
        while filled < out.len() {
            if self.silence > 0 {
                let n = (self.silence as usize).min(out.len() - filled);
                out[filled..filled + n].fill(IqSample::ZERO);
                self.silence -= n as u64;
                filled += n;
            } else if !self.carry.is_empty() {
                let n = self.carry.len().min(out.len() - filled);
                out[filled..filled + n].copy_from_slice(&self.carry[..n]);
                self.carry.drain(..n);
                filled += n;
            } else {
                let mut block = vec![IqSample::ZERO; out.len()];
                let md = self.radio.recv_into(ch, &mut block)?;
                if !self.rx_ledger.is_started() {
                    self.rx_ledger.begin(md.timestamp);
                    self.tx_ledger = Some(Ledger::started(md.timestamp + self.config.effective_tx_offset()));
                } else {
                    self.silence = md.gap;
                }
                self.carry = block;
            }
        }
        let ts = self.rx_ledger.next();
        self.rx_ledger.advance(out.len() as u64);
        Ok(ts)
    }

    fn send(&mut self, samples: &[IqSample], at: SampleTimestamp) -> Result<(), DeviceError> {
        let ch = self.channel()?;
        let ledger = self.tx_ledger.as_mut().ok_or(DeviceError::NotEstablished)?;
        if at != ledger.next() {
            return Err(DeviceError::OutOfSequence { expected: ledger.next().0, got: at.0 });
        }
        self.radio.send(ch, samples, at)?;
        ledger.advance(samples.len() as u64);
        Ok(())
    }

    fn shutdown(&mut self) -> Result<(), DeviceError> {
        if std::mem::take(&mut self.established) {
            self.radio.deactivate(self.config.radio_channel.index())?;
        }
        Ok(())
    }
}

impl Drop for LocalDevice {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}
