//! Credential directory through which a client finds a server's region.
//!
//! The directory form keeps one small TOML file per published path under
//! `<root>/<server_id>/<path>.cred`, next to the region file itself:
//!
//! ```text
//! ring_ref = "/dev/shm/pvran-1234/0/pv/1/rx.ring"
//! doorbell_port = 2890316545
//! read_ring_capacity = 262144
//! write_ring_capacity = 262144
//! ```
//!
//! Capacities are from the server's point of view. The in-memory form is
//! used when both endpoints live in one process.

use super::region::{default_region_dir, HeapBlock};
use super::VchanError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingCredentials {
    pub ring_ref: String,
    pub doorbell_port: u32,
    pub read_ring_capacity: u32,
    pub write_ring_capacity: u32,
}

impl RingCredentials {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("credentials always serialize")
    }

    pub fn from_text(text: &str) -> Result<Self, VchanError> {
        toml::from_str(text).map_err(|e| VchanError::BadCredentials(e.to_string()))
    }
}

enum Kind {
    Directory { root: PathBuf },
    Memory { entries: Mutex<HashMap<(u32, String), (RingCredentials, Arc<HeapBlock>)>> },
}

/// Shared handle to a rendezvous directory, bound to a local domain id under
/// which this process publishes.
#[derive(Clone)]
pub struct RendezvousStore {
    kind: Arc<Kind>,
    domain: u32,
}

pub(crate) enum Published {
    File { region: PathBuf },
    Memory(Arc<HeapBlock>),
}

impl RendezvousStore {
    /// File-backed store rooted at `root` (created if missing).
    pub fn directory(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { kind: Arc::new(Kind::Directory { root }), domain: 0 })
    }

    /// Fresh file-backed store under tmpfs, unique to this process.
    pub fn temporary() -> io::Result<Self> {
        let nonce: u32 = rand::random();
        let root = default_region_dir().join(format!("pvran-{}-{nonce:08x}", std::process::id()));
        Self::directory(root)
    }

    pub fn in_memory() -> Self {
        Self { kind: Arc::new(Kind::Memory { entries: Mutex::new(HashMap::new()) }), domain: 0 }
    }

    /// Same store, publishing as a different domain.
    pub fn as_domain(&self, domain: u32) -> Self {
        Self { kind: self.kind.clone(), domain }
    }

    pub fn domain(&self) -> u32 {
        self.domain
    }

    pub fn root(&self) -> Option<&Path> {
        match &*self.kind {
            Kind::Directory { root } => Some(root),
            Kind::Memory { .. } => None,
        }
    }

    pub fn is_in_memory(&self) -> bool {
        matches!(&*self.kind, Kind::Memory { .. })
    }

    /// Whether `path` is currently published by `server_id`.
    pub fn is_published(&self, server_id: u32, path: &str) -> bool {
        self.lookup(server_id, path).is_ok()
    }

    fn cred_path(root: &Path, server_id: u32, path: &str) -> PathBuf {
        root.join(server_id.to_string()).join(format!("{path}.cred"))
    }

    /// Location of the region file this store would use for `path`.
    pub(crate) fn region_path(&self, path: &str) -> Option<PathBuf> {
        match &*self.kind {
            Kind::Directory { root } => Some(root.join(self.domain.to_string()).join(format!("{path}.ring"))),
            Kind::Memory { .. } => None,
        }
    }

    pub(crate) fn publish(&self, path: &str, creds: &RingCredentials, block: Option<Arc<HeapBlock>>) -> Result<(), VchanError> {
        match &*self.kind {
            Kind::Directory { root } => {
                let target = Self::cred_path(root, self.domain, path);
                let tmp = target.with_extension(format!("cred.tmp{}", rand::random::<u32>()));
                fs::write(&tmp, creds.to_text())?;
                // hard_link fails if the target exists, making publication atomic
                let linked = fs::hard_link(&tmp, &target);
                let _ = fs::remove_file(&tmp);
                match linked {
                    Ok(()) => Ok(()),
                    Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(VchanError::PathInUse(path.to_owned())),
                    Err(e) => Err(e.into()),
                }
            }
            Kind::Memory { entries } => {
                let block = block.expect("in-memory publication carries its block");
                let mut map = entries.lock().unwrap_or_else(|e| e.into_inner());
                let key = (self.domain, path.to_owned());
                if map.contains_key(&key) {
                    return Err(VchanError::PathInUse(path.to_owned()));
                }
                map.insert(key, (creds.clone(), block));
                Ok(())
            }
        }
    }

    pub(crate) fn unpublish(&self, path: &str) {
        match &*self.kind {
            Kind::Directory { root } => {
                let _ = fs::remove_file(Self::cred_path(root, self.domain, path));
                if let Some(region) = self.region_path(path) {
                    let _ = fs::remove_file(region);
                }
            }
            Kind::Memory { entries } => {
                entries.lock().unwrap_or_else(|e| e.into_inner()).remove(&(self.domain, path.to_owned()));
            }
        }
    }

    pub(crate) fn lookup(&self, server_id: u32, path: &str) -> Result<(RingCredentials, Published), VchanError> {
        match &*self.kind {
            Kind::Directory { root } => {
                let text = match fs::read_to_string(Self::cred_path(root, server_id, path)) {
                    Ok(t) => t,
                    Err(e) if e.kind() == io::ErrorKind::NotFound => {
                        return Err(VchanError::UnknownPath(path.to_owned()))
                    }
                    Err(e) => return Err(e.into()),
                };
                let creds = RingCredentials::from_text(&text)?;
                let region = PathBuf::from(&creds.ring_ref);
                Ok((creds, Published::File { region }))
            }
            Kind::Memory { entries } => {
                let map = entries.lock().unwrap_or_else(|e| e.into_inner());
                let (creds, block) = map
                    .get(&(server_id, path.to_owned()))
                    .ok_or_else(|| VchanError::UnknownPath(path.to_owned()))?;
                Ok((creds.clone(), Published::Memory(block.clone())))
            }
        }
    }

    /// Removes the whole directory tree of a file-backed store.
    pub fn remove_all(&self) -> io::Result<()> {
        match &*self.kind {
            Kind::Directory { root } => fs::remove_dir_all(root),
            Kind::Memory { entries } => {
                entries.lock().unwrap_or_else(|e| e.into_inner()).clear();
                Ok(())
            }
        }
    }
}

/// Paths are `/`-separated segments of `[A-Za-z0-9_.-]`, no `..`.
pub(crate) fn check_path(path: &str) -> Result<(), VchanError> {
    let ok = !path.is_empty()
        && path.split('/').all(|seg| {
            !seg.is_empty()
                && seg != "."
                && seg != ".."
                && seg.bytes().all(|b| b.is_ascii_alphanumeric() || b"_.-".contains(&b))
        });
    if ok {
        Ok(())
    } else {
        Err(VchanError::InvalidPath(path.to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn credentials_text_round_trip() {
        let c = RingCredentials {
            ring_ref: "/dev/shm/x/0/pv/1/rx.ring".into(),
            doorbell_port: 7,
            read_ring_capacity: 65536,
            write_ring_capacity: 4096,
        };
        let text = c.to_text();
        assert!(text.contains("doorbell_port = 7"));
        assert_eq!(RingCredentials::from_text(&text).unwrap(), c);
        assert!(RingCredentials::from_text("nonsense").is_err());
    }

    #[test]
    fn path_rules() {
        assert!(check_path("pv/1/rx").is_ok());
        assert!(check_path("pv/../rx").is_err());
        assert!(check_path("pv//rx").is_err());
        assert!(check_path("").is_err());
        assert!(check_path("pv/a b").is_err());
    }
}
