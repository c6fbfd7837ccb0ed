//! C ABI over the pvran channel, device-frontend and band-planning APIs.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_create`/`*_connect` call and released with the matching
//! `*_free`. Functions return a [`PvStatus`]; on failure the message is
//! kept per thread and read back with [`pv_last_error`].

#![allow(clippy::missing_safety_doc)]

use pvran::iqcore::{self, FdmPlan, IqSample, PlanEntry, SampleTimestamp, SliceConfig, SliceId};
use pvran::remoting::{DeviceError, RemoteDevice, SdrDevice, Status};
use pvran::vchan::{RendezvousStore, StreamChannel, VchanError};
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Duration;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    InUse = 4,
    Conflict = 5,
    Closed = 6,
    Timeout = 7,
    Rejected = 8,
    Protocol = 9,
    Io = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Rendezvous store: where channels are published and looked up.
pub struct PvStore(RendezvousStore);
/// One end of a shared-memory byte channel.
pub struct PvChannel(StreamChannel);
/// A remote radio device as seen from a slice.
pub struct PvDevice(RemoteDevice);
/// A set of slice band assignments.
pub struct PvPlan(FdmPlan);

/// One slice's band assignment.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PvSliceBands {
    pub slice_id: u32,
    pub prbs: u32,
    pub dl_freq_hz: u64,
    pub ul_freq_hz: u64,
    pub radio_channel: u32,
}

/// Interleaved complex sample, I then Q.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PvSample {
    pub i: i16,
    pub q: i16,
}

const _: () = assert!(std::mem::size_of::<PvSample>() == std::mem::size_of::<IqSample>());

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: PvStatus, msg: impl ToString) -> PvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string());
    status
}

fn guard(f: impl FnOnce() -> PvStatus) -> PvStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(PvStatus::Panic, "panic inside pvran"))
}

fn vchan_status(e: &VchanError) -> PvStatus {
    match e {
        VchanError::PathInUse(_) | VchanError::AlreadyConnected => PvStatus::InUse,
        VchanError::UnknownPath(_) => PvStatus::NotFound,
        VchanError::InvalidPath(_) | VchanError::InvalidCapacity(_) | VchanError::EmptyRead => PvStatus::InvalidArgument,
        VchanError::PeerClosed | VchanError::EndOfStream | VchanError::Closed => PvStatus::Closed,
        VchanError::TimedOut => PvStatus::Timeout,
        VchanError::BadCredentials(_) | VchanError::Corrupted => PvStatus::Protocol,
        VchanError::Io(_) => PvStatus::Io,
    }
}

fn device_status(e: &DeviceError) -> PvStatus {
    match e {
        DeviceError::Rejected { status: Status::FdmConflict | Status::ChannelInUse, .. } => PvStatus::Conflict,
        DeviceError::Rejected { status: Status::OutOfRange | Status::BadRequest, .. } => PvStatus::InvalidArgument,
        DeviceError::Rejected { .. } => PvStatus::Rejected,
        DeviceError::NotEstablished => PvStatus::Closed,
        DeviceError::EndOfStream => PvStatus::Closed,
        DeviceError::Timeout => PvStatus::Timeout,
        DeviceError::OutOfSequence { .. } => PvStatus::InvalidArgument,
        DeviceError::Vchan(v) => vchan_status(v),
        _ => PvStatus::Protocol,
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, PvStatus> {
    if p.is_null() {
        return Err(fail(PvStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(PvStatus::InvalidArgument, "string is not UTF-8"))
}

macro_rules! deref {
    ($p:expr) => {
        match $p.as_mut() {
            Some(v) => v,
            None => return fail(PvStatus::NullPointer, concat!("null ", stringify!($p))),
        }
    };
}

macro_rules! tri {
    ($e:expr, $map:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return fail($map(&e), &e),
        }
    };
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> PvStatus {
    *out = Box::into_raw(Box::new(v));
    PvStatus::Ok
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to fit). Returns the full message length.
#[no_mangle]
pub unsafe extern "C" fn pv_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn pv_status_name(status: PvStatus) -> *const c_char {
    let s: &'static CStr = match status {
        PvStatus::Ok => c"ok",
        PvStatus::NullPointer => c"null_pointer",
        PvStatus::InvalidArgument => c"invalid_argument",
        PvStatus::NotFound => c"not_found",
        PvStatus::InUse => c"in_use",
        PvStatus::Conflict => c"conflict",
        PvStatus::Closed => c"closed",
        PvStatus::Timeout => c"timeout",
        PvStatus::Rejected => c"rejected",
        PvStatus::Protocol => c"protocol",
        PvStatus::Io => c"io",
        PvStatus::BufferTooSmall => c"buffer_too_small",
        PvStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Samples per 1 ms subframe for a PRB count, or 0 if unsupported.
#[no_mangle]
pub extern "C" fn pv_samples_per_subframe(prbs: u32) -> u64 {
    iqcore::samples_per_subframe(prbs).unwrap_or(0)
}

/// Bytes per subframe on the wire, or 0 if unsupported.
#[no_mangle]
pub extern "C" fn pv_bytes_per_subframe(prbs: u32) -> u64 {
    iqcore::bytes_per_subframe(prbs).map_or(0, |b| b as u64)
}

/// Default distance in samples between an RX tick and its TX tick, or 0.
#[no_mangle]
pub extern "C" fn pv_tx_offset(prbs: u32) -> u64 {
    iqcore::tx_offset(prbs).unwrap_or(0)
}

// ---- store ----

/// Opens (creating if needed) a store rooted at `dir`, acting as `domain`.
#[no_mangle]
pub unsafe extern "C" fn pv_store_open(dir: *const c_char, domain: u32, out: *mut *mut PvStore) -> PvStatus {
    guard(|| {
        if out.is_null() {
            return fail(PvStatus::NullPointer, "null out");
        }
        let dir = match str_arg(dir) {
            Ok(d) => d,
            Err(s) => return s,
        };
        let store = tri!(RendezvousStore::directory(dir), |_: &std::io::Error| PvStatus::Io);
        put(out, PvStore(store.as_domain(domain)))
    })
}

/// The same store seen from another domain.
#[no_mangle]
pub unsafe extern "C" fn pv_store_as_domain(store: *const PvStore, domain: u32, out: *mut *mut PvStore) -> PvStatus {
    guard(|| {
        let Some(s) = store.as_ref() else { return fail(PvStatus::NullPointer, "null store") };
        if out.is_null() {
            return fail(PvStatus::NullPointer, "null out");
        }
        put(out, PvStore(s.0.as_domain(domain)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn pv_store_free(store: *mut PvStore) {
    free(store)
}

// ---- channels ----

/// Creates and publishes a channel at `path`. `read_cap` bytes flow toward
/// this end, `write_cap` away from it; both powers of two.
#[no_mangle]
pub unsafe extern "C" fn pv_channel_create(
    store: *const PvStore,
    path: *const c_char,
    read_cap: u32,
    write_cap: u32,
    blocking: bool,
    out: *mut *mut PvChannel,
) -> PvStatus {
    guard(|| {
        let Some(s) = store.as_ref() else { return fail(PvStatus::NullPointer, "null store") };
        if out.is_null() {
            return fail(PvStatus::NullPointer, "null out");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(st) => return st,
        };
        let ch = tri!(StreamChannel::server_create(&s.0, path, read_cap, write_cap, blocking), vchan_status);
        put(out, PvChannel(ch))
    })
}

/// Connects to the channel `server_domain` published at `path`.
#[no_mangle]
pub unsafe extern "C" fn pv_channel_connect(
    store: *const PvStore,
    server_domain: u32,
    path: *const c_char,
    blocking: bool,
    out: *mut *mut PvChannel,
) -> PvStatus {
    guard(|| {
        let Some(s) = store.as_ref() else { return fail(PvStatus::NullPointer, "null store") };
        if out.is_null() {
            return fail(PvStatus::NullPointer, "null out");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(st) => return st,
        };
        let mut ch = tri!(StreamChannel::client_connect(&s.0, server_domain, path), vchan_status);
        ch.set_blocking(blocking);
        put(out, PvChannel(ch))
    })
}

/// Writes up to `len` bytes; `*written` gets the count accepted. Blocking
/// channels wait for all of it.
#[no_mangle]
pub unsafe extern "C" fn pv_channel_write(ch: *mut PvChannel, buf: *const u8, len: usize, written: *mut usize) -> PvStatus {
    guard(|| {
        let ch = deref!(ch);
        if buf.is_null() && len > 0 {
            return fail(PvStatus::NullPointer, "null buffer");
        }
        let data = if len == 0 { &[][..] } else { std::slice::from_raw_parts(buf, len) };
        let n = tri!(ch.0.write(data), vchan_status);
        if !written.is_null() {
            *written = n;
        }
        PvStatus::Ok
    })
}

/// Reads up to `len` bytes into `buf`; `*read` gets the count (0 when a
/// non-blocking channel is empty).
#[no_mangle]
pub unsafe extern "C" fn pv_channel_read(ch: *mut PvChannel, buf: *mut u8, len: usize, read: *mut usize) -> PvStatus {
    guard(|| {
        let ch = deref!(ch);
        if buf.is_null() || len == 0 {
            return fail(PvStatus::InvalidArgument, "empty read buffer");
        }
        let n = tri!(ch.0.read_into(std::slice::from_raw_parts_mut(buf, len)), vchan_status);
        if !read.is_null() {
            *read = n;
        }
        PvStatus::Ok
    })
}

/// Bytes readable right now, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pv_channel_data_ready(ch: *const PvChannel) -> usize {
    ch.as_ref().map_or(0, |c| c.0.data_ready())
}

/// Closes and releases a channel; a server end withdraws its publication.
#[no_mangle]
pub unsafe extern "C" fn pv_channel_free(ch: *mut PvChannel) {
    free(ch)
}

// ---- remote device ----

/// Connects to slice `slice_toml`'s control channel on `server_domain`,
/// waiting up to `timeout_ms`. Call [`pv_device_find`] before streaming.
#[no_mangle]
pub unsafe extern "C" fn pv_device_connect(
    store: *const PvStore,
    server_domain: u32,
    slice_toml: *const c_char,
    timeout_ms: u32,
    out: *mut *mut PvDevice,
) -> PvStatus {
    guard(|| {
        let Some(s) = store.as_ref() else { return fail(PvStatus::NullPointer, "null store") };
        if out.is_null() {
            return fail(PvStatus::NullPointer, "null out");
        }
        let text = match str_arg(slice_toml) {
            Ok(t) => t,
            Err(st) => return st,
        };
        let cfg = tri!(SliceConfig::from_toml_str(text), |_: &_| PvStatus::InvalidArgument);
        let dev = tri!(
            RemoteDevice::connect(&s.0, server_domain, cfg, Duration::from_millis(timeout_ms.into())),
            device_status
        );
        put(out, PvDevice(dev))
    })
}

/// Establishes the device. The reported type is copied into `type_buf`.
#[no_mangle]
pub unsafe extern "C" fn pv_device_find(dev: *mut PvDevice, type_buf: *mut c_char, len: usize) -> PvStatus {
    guard(|| {
        let dev = deref!(dev);
        let name = tri!(dev.0.find(), device_status);
        if !type_buf.is_null() && len > 0 {
            if name.len() >= len {
                return fail(PvStatus::BufferTooSmall, format!("device type needs {} bytes", name.len() + 1));
            }
            std::ptr::copy_nonoverlapping(name.as_ptr(), type_buf.cast::<u8>(), name.len());
            *type_buf.add(name.len()) = 0;
        }
        PvStatus::Ok
    })
}

/// Which setting [`pv_device_set`] changes.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub enum PvSetting {
    RxFreqHz = 0,
    TxFreqHz = 1,
    RxGainDb = 2,
    TxGainDb = 3,
    RateSps = 4,
}

/// Applies a setting; `*actual` gets the value the radio settled on.
#[no_mangle]
pub unsafe extern "C" fn pv_device_set(dev: *mut PvDevice, what: PvSetting, value: i64, actual: *mut i64) -> PvStatus {
    guard(|| {
        let dev = &mut deref!(dev).0;
        let unsigned = || u64::try_from(value).map_err(|_| DeviceError::Protocol(format!("negative value {value}")));
        let gain = || i32::try_from(value).map_err(|_| DeviceError::Protocol(format!("gain {value} out of range")));
        let r = match what {
            PvSetting::RxFreqHz => unsigned().and_then(|v| dev.set_rx_freq(v)).map(|v| v as i64),
            PvSetting::TxFreqHz => unsigned().and_then(|v| dev.set_tx_freq(v)).map(|v| v as i64),
            PvSetting::RateSps => unsigned().and_then(|v| dev.set_rate(v)).map(|v| v as i64),
            PvSetting::RxGainDb => gain().and_then(|v| dev.set_rx_gain(v)).map(i64::from),
            PvSetting::TxGainDb => gain().and_then(|v| dev.set_tx_gain(v)).map(i64::from),
        };
        let v = tri!(r, device_status);
        if !actual.is_null() {
            *actual = v;
        }
        PvStatus::Ok
    })
}

/// Receives `n` samples; `*tick` gets the device time of the first one.
#[no_mangle]
pub unsafe extern "C" fn pv_device_recv(dev: *mut PvDevice, samples: *mut PvSample, n: usize, tick: *mut u64) -> PvStatus {
    guard(|| {
        let dev = deref!(dev);
        if samples.is_null() || n == 0 {
            return fail(PvStatus::InvalidArgument, "empty sample buffer");
        }
        let out = std::slice::from_raw_parts_mut(samples.cast::<IqSample>(), n);
        let t = tri!(dev.0.recv(out), device_status);
        if !tick.is_null() {
            *tick = t.0;
        }
        PvStatus::Ok
    })
}

/// Transmits `n` samples at device time `at`.
#[no_mangle]
pub unsafe extern "C" fn pv_device_send(dev: *mut PvDevice, samples: *const PvSample, n: usize, at: u64) -> PvStatus {
    guard(|| {
        let dev = deref!(dev);
        if samples.is_null() || n == 0 {
            return fail(PvStatus::InvalidArgument, "empty sample buffer");
        }
        let data = std::slice::from_raw_parts(samples.cast::<IqSample>(), n);
        tri!(dev.0.send(data, SampleTimestamp(at)), device_status);
        PvStatus::Ok
    })
}

/// Shuts the device down and releases it. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pv_device_free(dev: *mut PvDevice) {
    if !dev.is_null() {
        let mut d = Box::from_raw(dev);
        let _ = catch_unwind(AssertUnwindSafe(|| d.0.shutdown()));
    }
}

// ---- band planning ----

#[no_mangle]
pub unsafe extern "C" fn pv_plan_new(out: *mut *mut PvPlan) -> PvStatus {
    if out.is_null() {
        return fail(PvStatus::NullPointer, "null out");
    }
    put(out, PvPlan(FdmPlan::default()))
}

/// Adds or replaces a slice's entry.
#[no_mangle]
pub unsafe extern "C" fn pv_plan_insert(plan: *mut PvPlan, bands: *const PvSliceBands) -> PvStatus {
    guard(|| {
        let plan = deref!(plan);
        let Some(b) = bands.as_ref() else { return fail(PvStatus::NullPointer, "null bands") };
        let profile = tri!(iqcore::BandwidthProfile::from_prbs(b.prbs), |_: &_| PvStatus::InvalidArgument);
        let cfg = SliceConfig::new(b.slice_id, profile, b.dl_freq_hz, b.ul_freq_hz, b.radio_channel, "");
        plan.0.insert(PlanEntry::from_config(&cfg));
        PvStatus::Ok
    })
}

/// Removes a slice's entry; `NotFound` if it had none.
#[no_mangle]
pub unsafe extern "C" fn pv_plan_remove(plan: *mut PvPlan, slice_id: u32) -> PvStatus {
    let plan = deref!(plan);
    match plan.0.remove(SliceId(slice_id)) {
        Some(_) => PvStatus::Ok,
        None => fail(PvStatus::NotFound, format!("slice {slice_id} is not in the plan")),
    }
}

/// Validates the plan. On `Conflict`, up to `cap` distinct slice ids
/// involved in any conflict are written to `ids` and `*n_ids` gets the
/// total.
#[no_mangle]
pub unsafe extern "C" fn pv_plan_validate(plan: *const PvPlan, ids: *mut u32, cap: usize, n_ids: *mut usize) -> PvStatus {
    guard(|| {
        let Some(plan) = plan.as_ref() else { return fail(PvStatus::NullPointer, "null plan") };
        let report = match plan.0.validate() {
            Ok(()) => {
                if !n_ids.is_null() {
                    *n_ids = 0;
                }
                return PvStatus::Ok;
            }
            Err(r) => r,
        };
        let mut involved: Vec<u32> = report.conflicts.iter().flat_map(|c| [c.a.0, c.b.0]).collect();
        involved.sort_unstable();
        involved.dedup();
        if !ids.is_null() {
            for (i, id) in involved.iter().take(cap).enumerate() {
                *ids.add(i) = *id;
            }
        }
        if !n_ids.is_null() {
            *n_ids = involved.len();
        }
        fail(PvStatus::Conflict, &report)
    })
}

#[no_mangle]
pub unsafe extern "C" fn pv_plan_free(plan: *mut PvPlan) {
    free(plan)
}
