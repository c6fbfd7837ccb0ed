use super::codec::{CodecError, ControlMessage, RawHeader, Request, Status, HEADER_LEN, MAX_PAYLOAD, REPLY_BIT};
use super::device::DEVICE_TYPE;
use crate::iqcore::SliceId;
use crate::pvback::{ctrl_path, Backend, SessionError, Setting};
use crate::vchan::{StreamChannel, VchanError};
use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

const CTRL_RING: u32 = 16 * 1024;
const IDLE_BACKOFF: Duration = Duration::from_millis(1);
const REPLY_DEADLINE: Duration = Duration::from_secs(1);

enum Cmd {
    Admit(SliceId, StreamChannel),
    Revoke(SliceId, Sender<()>),
}

/// Serves every slice's control channel from one loop and turns requests
/// into backend calls.
pub struct Dispatcher {
    backend: Arc<Backend>,
    cmds: Sender<Cmd>,
    stop: Arc<AtomicBool>,
    connections: Arc<AtomicUsize>,
    served: Arc<AtomicU64>,
    thread: Option<JoinHandle<()>>,
}

struct Conn {
    chan: StreamChannel,
    buf: Vec<u8>,
}

impl Dispatcher {
    pub fn spawn(backend: Arc<Backend>) -> Self {
        let (cmds, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let connections = Arc::new(AtomicUsize::new(0));
        let served = Arc::new(AtomicU64::new(0));
        let mut lp = Loop {
            backend: backend.clone(),
            cmds: rx,
            conns: HashMap::new(),
            stop: stop.clone(),
            connections: connections.clone(),
            served: served.clone(),
        };
        let thread = thread::Builder::new()
            .name("pv-dispatch".into())
            .spawn(move || lp.run())
            .expect("spawning dispatcher thread");
        Self { backend, cmds, stop, connections, served, thread: Some(thread) }
    }

    pub fn backend(&self) -> &Arc<Backend> {
        &self.backend
    }

    /// Publishes `pv/<id>/ctrl` so that slice's frontend can connect.
    pub fn admit(&self, id: SliceId) -> Result<(), VchanError> {
        let chan = StreamChannel::server_create(self.backend.store(), &ctrl_path(id), CTRL_RING, CTRL_RING, false)?;
        self.connections.fetch_add(1, Ordering::SeqCst);
        let _ = self.cmds.send(Cmd::Admit(id, chan));
        Ok(())
    }

    /// Withdraws a slice's control channel and waits until its path is
    /// free again. Its session, if any, is left to the caller.
    pub fn revoke(&self, id: SliceId) {
        let (done, wait) = mpsc::channel();
        if self.cmds.send(Cmd::Revoke(id, done)).is_ok() {
            let _ = wait.recv_timeout(REPLY_DEADLINE);
        }
    }

    /// Control channels currently held.
    pub fn connections(&self) -> usize {
        self.connections.load(Ordering::SeqCst)
    }

    /// Requests answered so far.
    pub fn served(&self) -> u64 {
        self.served.load(Ordering::Relaxed)
    }
}

impl Drop for Dispatcher {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

struct Loop {
    backend: Arc<Backend>,
    cmds: Receiver<Cmd>,
    conns: HashMap<SliceId, Conn>,
    stop: Arc<AtomicBool>,
    connections: Arc<AtomicUsize>,
    served: Arc<AtomicU64>,
}

fn raw_reply(opcode: u16, cid: u32, status: Status, msg: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + msg.len());
    out.extend_from_slice(&(opcode | REPLY_BIT).to_le_bytes());
    out.extend_from_slice(&cid.to_le_bytes());
    out.extend_from_slice(&(status as u16).to_le_bytes());
    out.extend_from_slice(&(msg.len() as u32).to_le_bytes());
    out.extend_from_slice(msg.as_bytes());
    out
}

fn session_status(e: &SessionError) -> Status {
    match e {
        SessionError::FdmConflict(_) => Status::FdmConflict,
        SessionError::ChannelInUse(_) => Status::ChannelInUse,
        SessionError::AlreadyActive(_) => Status::AlreadyActive,
        SessionError::UnknownSlice(_) => Status::NotEstablished,
        SessionError::OutOfRange(_) => Status::OutOfRange,
        SessionError::Radio(_) | SessionError::Vchan(_) => Status::Internal,
    }
}

impl Loop {
    fn run(&mut self) {
        while !self.stop.load(Ordering::SeqCst) {
            let mut busy = false;
            while let Ok(cmd) = self.cmds.try_recv() {
                busy = true;
                match cmd {
                    Cmd::Admit(id, chan) => {
                        if self.conns.insert(id, Conn { chan, buf: Vec::new() }).is_some() {
                            self.connections.fetch_sub(1, Ordering::SeqCst);
                        }
                    }
                    Cmd::Revoke(id, done) => {
                        self.drop_conn(id);
                        let _ = done.send(());
                    }
                }
            }
            let ids: Vec<SliceId> = self.conns.keys().copied().collect();
            for id in ids {
                busy |= self.poll(id);
            }
            if !busy {
                thread::sleep(IDLE_BACKOFF);
            }
        }
        let ids: Vec<SliceId> = self.conns.keys().copied().collect();
        for id in ids {
            self.drop_conn(id);
        }
    }

    fn drop_conn(&mut self, id: SliceId) {
        if self.conns.remove(&id).is_some() {
            self.connections.fetch_sub(1, Ordering::SeqCst);
        }
    }

    /// Reads what is available on one control channel and answers every
    /// complete request. Returns whether anything happened.
    fn poll(&mut self, id: SliceId) -> bool {
        let Some(conn) = self.conns.get_mut(&id) else { return false };
        let mut chunk = [0u8; 4096];
        match conn.chan.read_into(&mut chunk) {
            Ok(0) => return false,
            Ok(n) => conn.buf.extend_from_slice(&chunk[..n]),
            Err(e) => {
                // the frontend went away; whatever it was streaming ends too
                tracing::info!(slice = id.0, reason = %e, "control channel closed");
                self.drop_conn(id);
                if self.backend.is_live(id) {
                    let _ = self.backend.stop_session(id);
                }
                return true;
            }
        }
        loop {
            let Some(conn) = self.conns.get_mut(&id) else { return true };
            let Ok(h) = RawHeader::parse(&conn.buf) else { return true };
            if h.payload_len > MAX_PAYLOAD {
                // cannot find the next frame boundary; give up on this peer
                let reply = raw_reply(h.opcode & !REPLY_BIT, h.correlation_id, Status::BadRequest, "payload too large");
                self.send(id, &reply);
                self.drop_conn(id);
                return true;
            }
            if conn.buf.len() < h.frame_len() {
                return true;
            }
            let frame: Vec<u8> = conn.buf.drain(..h.frame_len()).collect();
            let reply = self.handle(id, h, &frame);
            self.send(id, &reply);
            self.served.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn send(&mut self, id: SliceId, bytes: &[u8]) {
        let Some(conn) = self.conns.get_mut(&id) else { return };
        conn.chan.set_blocking(true);
        let deadline = Instant::now() + REPLY_DEADLINE;
        let mut done = 0;
        while done < bytes.len() && Instant::now() < deadline {
            match conn.chan.write_until(&bytes[done..], deadline) {
                Ok(n) => done += n,
                Err(_) => break,
            }
        }
        conn.chan.set_blocking(false);
        if done < bytes.len() {
            tracing::warn!(slice = id.0, "could not deliver control reply");
        }
    }

    fn handle(&self, id: SliceId, h: RawHeader, frame: &[u8]) -> Vec<u8> {
        let msg = match ControlMessage::decode(frame) {
            Ok(m) => m,
            Err(CodecError::UnknownOpcode(op)) => {
                return raw_reply(op & !REPLY_BIT, h.correlation_id, Status::UnknownOpcode, "unknown opcode");
            }
            Err(e) => return raw_reply(h.opcode, h.correlation_id, Status::BadRequest, &e.to_string()),
        };
        if msg.reply {
            return msg.reply_to(Status::BadRequest, b"replies are not requests".to_vec()).encode();
        }
        let req = match Request::parse(msg.opcode, &msg.payload) {
            Ok(r) => r,
            Err(e) => return msg.reply_to(Status::BadRequest, e.to_string().into_bytes()).encode(),
        };
        let (status, payload) = match self.execute(id, req) {
            Ok(p) => (Status::Ok, p),
            Err((s, text)) => (s, text.into_bytes()),
        };
        msg.reply_to(status, payload).encode()
    }

    fn execute(&self, id: SliceId, req: Request) -> Result<Vec<u8>, (Status, String)> {
        let fail = |e: SessionError| (session_status(&e), e.to_string());
        let set = |s: Setting| self.backend.apply(id, s).map_err(fail);
        match req {
            Request::Init(cfg) => {
                if cfg.slice_id != id {
                    return Err((Status::BadRequest, format!("config is for slice {}, channel is slice {id}", cfg.slice_id)));
                }
                self.backend.start_session(&cfg).map_err(fail)?;
                Ok(DEVICE_TYPE.as_bytes().to_vec())
            }
            Request::Find => Ok(DEVICE_TYPE.as_bytes().to_vec()),
            Request::SetRxFreq(v) => set(Setting::RxFreq(v)).map(|_| v.to_le_bytes().to_vec()),
            Request::SetTxFreq(v) => set(Setting::TxFreq(v)).map(|_| v.to_le_bytes().to_vec()),
            Request::SetRate(v) => set(Setting::Rate(v)).map(|_| v.to_le_bytes().to_vec()),
            Request::SetRxGain(v) => match set(Setting::RxGain(v))? {
                Setting::RxGain(g) => Ok(g.to_le_bytes().to_vec()),
                _ => unreachable!(),
            },
            Request::SetTxGain(v) => match set(Setting::TxGain(v))? {
                Setting::TxGain(g) => Ok(g.to_le_bytes().to_vec()),
                _ => unreachable!(),
            },
            Request::Shutdown => {
                if !self.backend.is_live(id) {
                    return Err((Status::NotEstablished, format!("slice {id} has no session")));
                }
                let m = self.backend.stop_session(id).map_err(fail)?;
                Ok(serde_json::to_vec(&m).unwrap_or_default())
            }
        }
    }
}
