use std::sync::atomic::{AtomicU32, Ordering};

/// One direction of a channel: a power-of-two byte array with free-running
/// producer/consumer counters. `prod - cons` (wrapping) is the fill level;
/// the ring is full when it equals the capacity, so no slot is wasted.
pub(crate) struct Ring {
    data: *mut u8,
    cap: u32,
    prod: *const AtomicU32,
    cons: *const AtomicU32,
}

// SAFETY: pointers target a region kept alive by the owning channel.
unsafe impl Send for Ring {}

/// The counters describe more bytes than the ring can hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Corrupt;

impl Ring {
    /// # Safety
    /// `data` must point to `cap` bytes and the counters to live atomics, all
    /// outliving the ring view.
    pub(crate) unsafe fn new(data: *mut u8, cap: u32, prod: *const AtomicU32, cons: *const AtomicU32) -> Self {
        debug_assert!(cap.is_power_of_two());
        Self { data, cap, prod, cons }
    }

    fn prod(&self) -> &AtomicU32 {
        // SAFETY: constructor contract.
        unsafe { &*self.prod }
    }

    fn cons(&self) -> &AtomicU32 {
        // SAFETY: constructor contract.
        unsafe { &*self.cons }
    }

    pub(crate) fn capacity(&self) -> u32 {
        self.cap
    }

    pub(crate) fn used(&self) -> Result<u32, Corrupt> {
        let cons = self.cons().load(Ordering::Acquire);
        let prod = self.prod().load(Ordering::Acquire);
        let used = prod.wrapping_sub(cons);
        if used > self.cap {
            Err(Corrupt)
        } else {
            Ok(used)
        }
    }

    pub(crate) fn free(&self) -> Result<u32, Corrupt> {
        Ok(self.cap - self.used()?)
    }

    /// Producer side: copies as much of `src` as fits. Returns bytes enqueued.
    pub(crate) fn push(&self, src: &[u8]) -> Result<usize, Corrupt> {
        let prod = self.prod().load(Ordering::Relaxed);
        let cons = self.cons().load(Ordering::Acquire);
        let used = prod.wrapping_sub(cons);
        if used > self.cap {
            return Err(Corrupt);
        }
        let n = src.len().min((self.cap - used) as usize);
        if n == 0 {
            return Ok(0);
        }
        let start = (prod & (self.cap - 1)) as usize;
        let first = n.min(self.cap as usize - start);
        // SAFETY: [start, start+first) and [0, n-first) lie inside the ring,
        // and the consumer never touches bytes in [cons, cons+cap) \ [cons, prod).
        unsafe {
            std::ptr::copy_nonoverlapping(src.as_ptr(), self.data.add(start), first);
            std::ptr::copy_nonoverlapping(src.as_ptr().add(first), self.data, n - first);
        }
        self.prod().store(prod.wrapping_add(n as u32), Ordering::Release);
        Ok(n)
    }

    /// Consumer side: copies up to `dst.len()` bytes out. Returns bytes dequeued.
    pub(crate) fn pop(&self, dst: &mut [u8]) -> Result<usize, Corrupt> {
        let cons = self.cons().load(Ordering::Relaxed);
        let prod = self.prod().load(Ordering::Acquire);
        let used = prod.wrapping_sub(cons);
        if used > self.cap {
            return Err(Corrupt);
        }
        let n = dst.len().min(used as usize);
        if n == 0 {
            return Ok(0);
        }
        let start = (cons & (self.cap - 1)) as usize;
        let first = n.min(self.cap as usize - start);
        // SAFETY: the bytes were published by the producer's Release store.
        unsafe {
            std::ptr::copy_nonoverlapping(self.data.add(start), dst.as_mut_ptr(), first);
            std::ptr::copy_nonoverlapping(self.data, dst.as_mut_ptr().add(first), n - first);
        }
        self.cons().store(cons.wrapping_add(n as u32), Ordering::Release);
        Ok(n)
    }
}
