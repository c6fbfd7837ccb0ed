//! Bi-directional shared-memory byte channels.
//!
//! A server allocates a region holding two SPSC byte rings and publishes its
//! credentials under a path in a [`RendezvousStore`]; a client looks the path
//! up, maps the same region and validates the doorbell port. Afterwards each
//! side writes into one ring and reads from the other. A doorbell per ring
//! carries "something changed" notifications in both directions.
//!
//! Endpoints take `&mut self` for every data operation, so one direction can
//! never have two concurrent producers or consumers.

mod doorbell;
pub mod layout;
mod region;
mod rendezvous;
mod ring;

pub use region::default_region_dir;
pub use rendezvous::{RendezvousStore, RingCredentials};

use doorbell::Doorbell;
use layout::Header;
use region::{HeapBlock, Region};
use rendezvous::{check_path, Published};
use ring::Ring;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Default per-direction capacity: two subframes at 100 PRB, rounded up.
pub const DEFAULT_RING_CAPACITY: u32 = 256 * 1024;

/// Yields tried before parking on a doorbell.
const SPIN_YIELDS: u32 = 8;
/// Longest single park; state is re-checked after each.
const PARK_SLICE: Duration = Duration::from_millis(20);

#[derive(Debug, Error)]
pub enum VchanError {
    #[error("path {0:?} is already published")]
    PathInUse(String),
    #[error("no channel published at {0:?}")]
    UnknownPath(String),
    #[error("invalid channel path {0:?}")]
    InvalidPath(String),
    #[error("ring capacity {0} must be a power of two in [64, 2^30]")]
    InvalidCapacity(u32),
    #[error("credentials rejected: {0}")]
    BadCredentials(String),
    #[error("channel already has a client")]
    AlreadyConnected,
    #[error("peer closed the channel")]
    PeerClosed,
    #[error("end of stream")]
    EndOfStream,
    #[error("channel is closed")]
    Closed,
    #[error("timed out")]
    TimedOut,
    #[error("ring counters are corrupt")]
    Corrupted,
    #[error("zero-length read")]
    EmptyRead,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ring::Corrupt> for VchanError {
    fn from(_: ring::Corrupt) -> Self {
        VchanError::Corrupted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Server,
    Client,
}

/// Counters an endpoint keeps about its own traffic; readable from other
/// threads while the channel is in use.
#[derive(Debug, Default)]
pub struct ChannelStats {
    pub bytes_written: AtomicU64,
    pub bytes_read: AtomicU64,
    /// Highest fill level seen on the outbound ring right after a write.
    pub high_water: AtomicU64,
    /// Nanoseconds spent parked in blocking writes waiting for space.
    pub write_stall_ns: AtomicU64,
}

impl ChannelStats {
    pub fn high_water(&self) -> u64 {
        self.high_water.load(Ordering::Relaxed)
    }
}

struct Publication {
    store: RendezvousStore,
    path: String,
}

impl Drop for Publication {
    fn drop(&mut self) {
        self.store.unpublish(&self.path);
    }
}

pub struct StreamChannel {
    role: Role,
    inbound: Ring,
    outbound: Ring,
    in_bell: Doorbell,
    out_bell: Doorbell,
    own_state: *const AtomicU32,
    peer_state: *const AtomicU32,
    blocking: bool,
    timeout: Option<Duration>,
    closed: bool,
    stats: Arc<ChannelStats>,
    publication: Option<Publication>,
    path: String,
    // keeps every pointer above valid; dropped last
    _region: Region,
}

// SAFETY: all raw pointers target `region`, which moves with the channel.
unsafe impl Send for StreamChannel {}

impl std::fmt::Debug for StreamChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StreamChannel")
            .field("role", &self.role)
            .field("path", &self.path)
            .field("blocking", &self.blocking)
            .field("closed", &self.closed)
            .finish()
    }
}

fn check_capacity(cap: u32) -> Result<(), VchanError> {
    if cap.is_power_of_two() && (layout::MIN_CAPACITY..=layout::MAX_CAPACITY).contains(&cap) {
        Ok(())
    } else {
        Err(VchanError::InvalidCapacity(cap))
    }
}

impl StreamChannel {
    /// Allocates a zeroed region and publishes it at `path` under the store's
    /// domain. Capacities are from this (server) side: `read_cap` bytes
    /// flow client to server, `write_cap` bytes server to client.
    pub fn server_create(
        store: &RendezvousStore,
        path: &str,
        read_cap: u32,
        write_cap: u32,
        blocking: bool,
    ) -> Result<Self, VchanError> {
        check_path(path)?;
        check_capacity(read_cap)?;
        check_capacity(write_cap)?;
        if store.is_published(store.domain(), path) {
            return Err(VchanError::PathInUse(path.to_owned()));
        }
        let port = rand::random::<u32>() | 1;
        let header = Header::new(read_cap, write_cap, port);
        let len = header.region_len();

        let (mut region, ring_ref) = match store.region_path(path) {
            Some(file) => {
                if let Some(dir) = file.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                let region = Region::create_file(&file, len).map_err(|e| {
                    if e.kind() == std::io::ErrorKind::AlreadyExists {
                        VchanError::PathInUse(path.to_owned())
                    } else {
                        e.into()
                    }
                })?;
                (region, file.display().to_string())
            }
            None => (Region::heap(HeapBlock::new(len)?), format!("mem:{}:{path}", store.domain())),
        };
        region.write_bytes(0, &header.encode());
        // SAFETY: offsets come from the header we just wrote for this region.
        unsafe { state_word(&region, &header, Role::Server) }.store(layout::STATE_OPEN, Ordering::SeqCst);
        region.flush()?;

        let creds = RingCredentials {
            ring_ref,
            doorbell_port: port,
            read_ring_capacity: read_cap,
            write_ring_capacity: write_cap,
        };
        if let Err(e) = store.publish(path, &creds, region.heap_block().cloned()) {
            if let Some(file) = store.region_path(path) {
                let _ = std::fs::remove_file(file);
            }
            return Err(e);
        }
        let publication = Publication { store: store.clone(), path: path.to_owned() };
        Self::from_region(region, header, Role::Server, blocking, Some(publication), path)
    }

    /// Maps the region `server_id` published at `path`.
    pub fn client_connect(store: &RendezvousStore, server_id: u32, path: &str) -> Result<Self, VchanError> {
        check_path(path)?;
        let (creds, published) = store.lookup(server_id, path)?;
        let region = match published {
            Published::File { region } => Region::open_file(&region).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    VchanError::UnknownPath(path.to_owned())
                } else {
                    e.into()
                }
            })?,
            Published::Memory(block) => Region::heap(block),
        };
        if region.len() < layout::RINGS {
            return Err(VchanError::BadCredentials("region too small".into()));
        }
        let header = Header::decode(region.bytes(0, layout::HEADER_LEN))
            .ok_or_else(|| VchanError::BadCredentials("bad region magic".into()))?;
        if !header.is_consistent(region.len()) {
            return Err(VchanError::BadCredentials("inconsistent region header".into()));
        }
        if header.port != creds.doorbell_port
            || header.read_cap != creds.read_ring_capacity
            || header.write_cap != creds.write_ring_capacity
        {
            return Err(VchanError::BadCredentials("credentials do not match region".into()));
        }
        // SAFETY: header validated against the region length above.
        let server = unsafe { state_word(&region, &header, Role::Server) };
        if server.load(Ordering::SeqCst) != layout::STATE_OPEN {
            return Err(VchanError::PeerClosed);
        }
        // SAFETY: as above.
        let client = unsafe { state_word(&region, &header, Role::Client) };
        client
            .compare_exchange(layout::STATE_NEVER, layout::STATE_OPEN, Ordering::SeqCst, Ordering::SeqCst)
            .map_err(|_| VchanError::AlreadyConnected)?;
        let chan = Self::from_region(region, header, Role::Client, true, None, path)?;
        chan.in_bell.post();
        chan.out_bell.post();
        Ok(chan)
    }

    fn from_region(
        region: Region,
        h: Header,
        role: Role,
        blocking: bool,
        publication: Option<Publication>,
        path: &str,
    ) -> Result<Self, VchanError> {
        let at = |off: u32| region.atomic(off as usize);
        let block = region.heap_block().cloned();
        // SAFETY: every offset was produced by Header::new or validated by
        // is_consistent, and `region` outlives the views (field order).
        let (server_read, server_write, read_bell, write_bell) = unsafe {
            (
                Ring::new(region.ptr(h.read_off as usize), h.read_cap, at(h.read_prod), at(h.read_cons)),
                Ring::new(region.ptr(h.write_off as usize), h.write_cap, at(h.write_prod), at(h.write_cons)),
                Doorbell::new(at(h.read_bell), at(h.read_bell + 4), block.clone().map(|b| (b, 0))),
                Doorbell::new(at(h.write_bell), at(h.write_bell + 4), block.map(|b| (b, 1))),
            )
        };
        let (inbound, outbound, in_bell, out_bell, own, peer) = match role {
            Role::Server => (server_read, server_write, read_bell, write_bell, h.state, h.state + 4),
            Role::Client => (server_write, server_read, write_bell, read_bell, h.state + 4, h.state),
        };
        debug_assert!(region.is_heap() || publication.is_some() || role == Role::Client);
        Ok(Self {
            role,
            inbound,
            outbound,
            in_bell,
            out_bell,
            own_state: at(own),
            peer_state: at(peer),
            blocking,
            timeout: None,
            closed: false,
            stats: Arc::new(ChannelStats::default()),
            publication,
            path: path.to_owned(),
            _region: region,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn is_blocking(&self) -> bool {
        self.blocking
    }

    pub fn set_blocking(&mut self, blocking: bool) {
        self.blocking = blocking;
    }

    /// Upper bound on how long a blocking call may wait; `None` waits forever.
    pub fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.timeout = timeout;
    }

    pub fn stats(&self) -> Arc<ChannelStats> {
        self.stats.clone()
    }

    pub fn read_capacity(&self) -> u32 {
        self.inbound.capacity()
    }

    pub fn write_capacity(&self) -> u32 {
        self.outbound.capacity()
    }

    fn peer(&self) -> u32 {
        // SAFETY: points into self.region.
        unsafe { &*self.peer_state }.load(Ordering::SeqCst)
    }

    pub fn peer_connected(&self) -> bool {
        self.peer() == layout::STATE_OPEN
    }

    pub fn peer_closed(&self) -> bool {
        self.peer() == layout::STATE_CLOSED
    }

    /// Bytes readable right now.
    pub fn data_ready(&self) -> usize {
        self.inbound.used().unwrap_or(0) as usize
    }

    /// Bytes writable right now without blocking.
    pub fn buffer_space(&self) -> usize {
        self.outbound.free().unwrap_or(0) as usize
    }

    fn deadline(&self) -> Option<Instant> {
        self.timeout.map(|t| Instant::now() + t)
    }

    fn park(bell: &Doorbell, seen: u32, spins: &mut u32, deadline: Option<Instant>) -> Result<(), VchanError> {
        if *spins < SPIN_YIELDS {
            *spins += 1;
            std::thread::yield_now();
            return Ok(());
        }
        let mut slice = PARK_SLICE;
        if let Some(d) = deadline {
            let now = Instant::now();
            if now >= d {
                return Err(VchanError::TimedOut);
            }
            slice = slice.min(d - now);
        }
        bell.wait(seen, slice);
        Ok(())
    }

    /// Blocking mode: returns once every byte is enqueued. Non-blocking:
    /// enqueues what fits and returns the count, possibly 0.
    pub fn write(&mut self, buf: &[u8]) -> Result<usize, VchanError> {
        let deadline = self.deadline();
        self.write_inner(buf, deadline, false)
    }

    /// Blocking write that gives up at `deadline`, returning how much was
    /// enqueued by then instead of an error.
    pub fn write_until(&mut self, buf: &[u8], deadline: Instant) -> Result<usize, VchanError> {
        self.write_inner(buf, Some(deadline), true)
    }

    fn write_inner(&mut self, buf: &[u8], deadline: Option<Instant>, partial: bool) -> Result<usize, VchanError> {
        if self.closed {
            return Err(VchanError::Closed);
        }
        if self.peer_closed() {
            return Err(VchanError::PeerClosed);
        }
        if !self.blocking {
            let n = self.outbound.push(buf)?;
            self.after_write(n);
            return Ok(n);
        }
        let mut done = 0;
        let mut spins = 0;
        let mut stalled: Option<Instant> = None;
        let result = loop {
            let seen = self.out_bell.current();
            let n = self.outbound.push(&buf[done..])?;
            if n > 0 {
                done += n;
                self.after_write(n);
                spins = 0;
            }
            if done == buf.len() {
                break Ok(done);
            }
            if self.peer_closed() {
                break Err(VchanError::PeerClosed);
            }
            if n == 0 {
                stalled.get_or_insert_with(Instant::now);
                match Self::park(&self.out_bell, seen, &mut spins, deadline) {
                    Ok(()) => {}
                    Err(VchanError::TimedOut) if partial => break Ok(done),
                    Err(e) => break Err(e),
                }
            }
        };
        if let Some(t) = stalled {
            self.stats.write_stall_ns.fetch_add(t.elapsed().as_nanos() as u64, Ordering::Relaxed);
        }
        result
    }

    fn after_write(&self, n: usize) {
        if n == 0 {
            return;
        }
        self.out_bell.post();
        self.stats.bytes_written.fetch_add(n as u64, Ordering::Relaxed);
        let used = u64::from(self.outbound.used().unwrap_or(0));
        self.stats.high_water.fetch_max(used, Ordering::Relaxed);
    }

    /// Blocking mode: fills `buf` completely. Non-blocking: copies what is
    /// available. A drained ring whose peer has closed is end-of-stream.
    pub fn read_into(&mut self, buf: &mut [u8]) -> Result<usize, VchanError> {
        let deadline = self.deadline();
        self.read_inner(buf, deadline, false)
    }

    /// Blocking read that gives up at `deadline`, returning how much was
    /// copied by then (possibly 0) instead of an error.
    pub fn read_until(&mut self, buf: &mut [u8], deadline: Instant) -> Result<usize, VchanError> {
        self.read_inner(buf, Some(deadline), true)
    }

    fn read_inner(&mut self, buf: &mut [u8], deadline: Option<Instant>, partial: bool) -> Result<usize, VchanError> {
        if buf.is_empty() {
            return Err(VchanError::EmptyRead);
        }
        if self.closed {
            return Err(VchanError::Closed);
        }
        let mut done = 0;
        let mut spins = 0;
        loop {
            let seen = self.in_bell.current();
            let peer_closed = self.peer_closed();
            let n = self.inbound.pop(&mut buf[done..])?;
            if n > 0 {
                done += n;
                self.in_bell.post();
                self.stats.bytes_read.fetch_add(n as u64, Ordering::Relaxed);
                spins = 0;
            }
            if done == buf.len() || (!self.blocking && done > 0) {
                return Ok(done);
            }
            if n == 0 && peer_closed {
                return Err(VchanError::EndOfStream);
            }
            if !self.blocking {
                return Ok(0);
            }
            if n == 0 {
                match Self::park(&self.in_bell, seen, &mut spins, deadline) {
                    Ok(()) => {}
                    Err(VchanError::TimedOut) if partial => return Ok(done),
                    Err(e) => return Err(e),
                }
            }
        }
    }

    /// Reads `n` bytes (blocking) or up to `n` (non-blocking).
    pub fn read(&mut self, n: usize) -> Result<Vec<u8>, VchanError> {
        let mut buf = vec![0u8; n];
        let got = self.read_into(&mut buf)?;
        buf.truncate(got);
        Ok(buf)
    }

    /// Marks this end closed and wakes the peer. Idempotent.
    pub fn close(&mut self) {
        if self.closed {
            return;
        }
        self.closed = true;
        // SAFETY: points into self.region.
        unsafe { &*self.own_state }.store(layout::STATE_CLOSED, Ordering::SeqCst);
        self.in_bell.post();
        self.out_bell.post();
        self.publication.take();
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }
}

impl Drop for StreamChannel {
    fn drop(&mut self) {
        self.close();
    }
}

/// # Safety
/// `h` must describe `region`.
unsafe fn state_word<'a>(region: &'a Region, h: &Header, role: Role) -> &'a AtomicU32 {
    let off = match role {
        Role::Server => h.state,
        Role::Client => h.state + 4,
    };
    &*region.atomic(off as usize)
}

/// Connects a client, retrying until the path is published or `timeout` passes.
pub fn client_connect_wait(
    store: &RendezvousStore,
    server_id: u32,
    path: &str,
    timeout: Duration,
) -> Result<StreamChannel, VchanError> {
    let deadline = Instant::now() + timeout;
    loop {
        match StreamChannel::client_connect(store, server_id, path) {
            Err(VchanError::UnknownPath(_)) if Instant::now() < deadline => {
                std::thread::sleep(Duration::from_millis(1));
            }
            Err(VchanError::UnknownPath(_)) => return Err(VchanError::TimedOut),
            other => return other,
        }
    }
}
