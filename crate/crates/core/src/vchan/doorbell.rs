//! Wait/post notification word living inside the shared region.
//!
//! A doorbell is a sequence counter plus a waiter count. `post` bumps the
//! counter and wakes sleepers only when someone announced it is waiting.
//! `wait(seen)` sleeps until the counter differs from `seen`. The waiter
//! registers before re-checking the counter and the poster bumps before
//! reading the waiter count (both SeqCst), so a wakeup cannot be lost.

use super::region::HeapBlock;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

pub(crate) struct Doorbell {
    seq: *const AtomicU32,
    waiters: *const AtomicU32,
    local: Option<(Arc<HeapBlock>, usize)>,
}

// SAFETY: the pointers target atomics in a region the owning channel keeps alive.
unsafe impl Send for Doorbell {}

impl Doorbell {
    /// # Safety
    /// `seq` and `waiters` must point to atomics that outlive the doorbell.
    pub(crate) unsafe fn new(
        seq: *const AtomicU32,
        waiters: *const AtomicU32,
        local: Option<(Arc<HeapBlock>, usize)>,
    ) -> Self {
        Self { seq, waiters, local }
    }

    fn seq(&self) -> &AtomicU32 {
        // SAFETY: see constructor contract.
        unsafe { &*self.seq }
    }

    fn waiters(&self) -> &AtomicU32 {
        // SAFETY: see constructor contract.
        unsafe { &*self.waiters }
    }

    pub(crate) fn current(&self) -> u32 {
        self.seq().load(Ordering::SeqCst)
    }

    pub(crate) fn post(&self) {
        self.seq().fetch_add(1, Ordering::SeqCst);
        if self.waiters().load(Ordering::SeqCst) == 0 {
            return;
        }
        match &self.local {
            Some((block, idx)) => {
                let bell = &block.bells[*idx];
                let _g = bell.lock.lock().unwrap_or_else(|e| e.into_inner());
                bell.cv.notify_all();
            }
            None => futex_wake(self.seq()),
        }
    }

    /// Sleeps until the sequence moves past `seen` or `timeout` elapses.
    pub(crate) fn wait(&self, seen: u32, timeout: Duration) {
        self.waiters().fetch_add(1, Ordering::SeqCst);
        if self.seq().load(Ordering::SeqCst) == seen {
            match &self.local {
                Some((block, idx)) => {
                    let bell = &block.bells[*idx];
                    let g = bell.lock.lock().unwrap_or_else(|e| e.into_inner());
                    if self.seq().load(Ordering::SeqCst) == seen {
                        let _ = bell.cv.wait_timeout(g, timeout);
                    }
                }
                None => futex_wait(self.seq(), seen, timeout),
            }
        }
        self.waiters().fetch_sub(1, Ordering::SeqCst);
    }
}

#[cfg(target_os = "linux")]
fn futex_wait(word: &AtomicU32, expected: u32, timeout: Duration) {
    let ts = libc::timespec {
        tv_sec: timeout.as_secs() as libc::time_t,
        tv_nsec: timeout.subsec_nanos() as libc::c_long,
    };
    // SAFETY: word is a valid aligned u32 in (possibly shared) memory. The
    // non-private op is required because the word may be mapped by another
    // process.
    unsafe {
        libc::syscall(
            libc::SYS_futex,
            word.as_ptr(),
            libc::FUTEX_WAIT,
            expected,
            &ts as *const libc::timespec,
        );
    }
}

#[cfg(target_os = "linux")]
fn futex_wake(word: &AtomicU32) {
    // SAFETY: as above.
    unsafe {
        libc::syscall(libc::SYS_futex, word.as_ptr(), libc::FUTEX_WAKE, i32::MAX);
    }
}

// Without futexes, fall back to a short sleep; callers re-check state in a loop.
#[cfg(not(target_os = "linux"))]
fn futex_wait(word: &AtomicU32, expected: u32, timeout: Duration) {
    if word.load(Ordering::SeqCst) == expected {
        std::thread::sleep(timeout.min(Duration::from_micros(50)));
    }
}

#[cfg(not(target_os = "linux"))]
fn futex_wake(_word: &AtomicU32) {}
