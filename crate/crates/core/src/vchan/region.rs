use memmap2::MmapMut;
use std::alloc::{self, Layout};
use std::fs::{File, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicU32;
use std::sync::{Arc, Condvar, Mutex};

/// Heap-backed region for in-process channels. Both endpoints hold the same
/// allocation through an `Arc`.
pub(crate) struct HeapBlock {
    ptr: *mut u8,
    layout: Layout,
    pub(crate) bells: [LocalBell; 2],
}

// SAFETY: the block is plain bytes; all concurrent access goes through the
// atomics and the SPSC ring protocol.
unsafe impl Send for HeapBlock {}
unsafe impl Sync for HeapBlock {}

impl HeapBlock {
    pub(crate) fn new(len: usize) -> io::Result<Arc<Self>> {
        let layout = Layout::from_size_align(len, 4096)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        // SAFETY: len is non-zero (always at least the control block).
        let ptr = unsafe { alloc::alloc_zeroed(layout) };
        if ptr.is_null() {
            return Err(io::Error::new(io::ErrorKind::OutOfMemory, "region allocation failed"));
        }
        Ok(Arc::new(Self { ptr, layout, bells: [LocalBell::default(), LocalBell::default()] }))
    }
}

impl Drop for HeapBlock {
    fn drop(&mut self) {
        // SAFETY: allocated in `new` with this layout.
        unsafe { alloc::dealloc(self.ptr, self.layout) }
    }
}

#[derive(Default)]
pub(crate) struct LocalBell {
    pub(crate) lock: Mutex<()>,
    pub(crate) cv: Condvar,
}

enum Backing {
    Mapped { map: MmapMut, _file: File },
    Heap(Arc<HeapBlock>),
}

/// One endpoint's view of a channel region.
pub(crate) struct Region {
    base: *mut u8,
    len: usize,
    backing: Backing,
}

// SAFETY: see HeapBlock; the mapping lives as long as the Region.
unsafe impl Send for Region {}

impl Region {
    pub(crate) fn heap(block: Arc<HeapBlock>) -> Self {
        Self { base: block.ptr, len: block.layout.size(), backing: Backing::Heap(block) }
    }

    /// Creates, sizes and maps a new zero-filled file.
    pub(crate) fn create_file(path: &Path, len: usize) -> io::Result<Self> {
        let file = OpenOptions::new().read(true).write(true).create_new(true).open(path)?;
        file.set_len(len as u64)?;
        Self::map(file)
    }

    pub(crate) fn open_file(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        Self::map(file)
    }

    fn map(file: File) -> io::Result<Self> {
        // SAFETY: the file is only ever accessed through this protocol; a peer
        // truncating it underneath us is outside the supported threat model.
        let mut map = unsafe { MmapMut::map_mut(&file)? };
        let base = map.as_mut_ptr();
        let len = map.len();
        Ok(Self { base, len, backing: Backing::Mapped { map, _file: file } })
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }

    pub(crate) fn is_heap(&self) -> bool {
        matches!(self.backing, Backing::Heap(_))
    }

    pub(crate) fn heap_block(&self) -> Option<&Arc<HeapBlock>> {
        match &self.backing {
            Backing::Heap(b) => Some(b),
            Backing::Mapped { .. } => None,
        }
    }

    pub(crate) fn bytes(&self, off: usize, len: usize) -> &[u8] {
        assert!(off + len <= self.len);
        // SAFETY: bounds checked above; only used for the header, which is
        // immutable after publication.
        unsafe { std::slice::from_raw_parts(self.base.add(off), len) }
    }

    pub(crate) fn write_bytes(&mut self, off: usize, data: &[u8]) {
        assert!(off + data.len() <= self.len);
        // SAFETY: bounds checked; called only by the creator before publishing.
        unsafe { std::ptr::copy_nonoverlapping(data.as_ptr(), self.base.add(off), data.len()) }
    }

    /// Atomic u32 at a 4-aligned offset inside the control block.
    pub(crate) fn atomic(&self, off: usize) -> *const AtomicU32 {
        assert!(off % 4 == 0 && off + 4 <= self.len);
        // SAFETY: in bounds and aligned; the region base is page aligned.
        unsafe { self.base.add(off) as *const AtomicU32 }
    }

    pub(crate) fn ptr(&self, off: usize) -> *mut u8 {
        assert!(off <= self.len);
        // SAFETY: in bounds.
        unsafe { self.base.add(off) }
    }

    pub(crate) fn flush(&self) -> io::Result<()> {
        match &self.backing {
            Backing::Mapped { map, .. } => map.flush_async(),
            Backing::Heap(_) => Ok(()),
        }
    }
}

/// Directory that holds region files: tmpfs when available.
pub fn default_region_dir() -> PathBuf {
    let shm = Path::new("/dev/shm");
    if shm.is_dir() {
        shm.to_path_buf()
    } else {
        std::env::temp_dir()
    }
}
