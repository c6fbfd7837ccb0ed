use super::{RadioChannelId, SliceConfig, SliceId};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Occupied spectrum of one direction of a slice: `center ± sample_rate/2`,
/// treated as the half-open interval `[low, high)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub center_hz: u64,
    pub width_hz: u64,
}

impl Band {
    pub fn new(center_hz: u64, width_hz: u64) -> Self {
        Self { center_hz, width_hz }
    }

    pub fn low_hz(&self) -> i128 {
        i128::from(self.center_hz) - i128::from(self.width_hz) / 2
    }

    pub fn high_hz(&self) -> i128 {
        self.low_hz() + i128::from(self.width_hz)
    }

    /// Touching edges do not count as overlap.
    pub fn overlaps(&self, other: &Band) -> bool {
        self.low_hz() < other.high_hz() && other.low_hz() < self.high_hz()
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} Hz, {} Hz)", self.low_hz(), self.high_hz())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub slice_id: SliceId,
    pub dl: Band,
    pub ul: Band,
    pub radio_channel: RadioChannelId,
}

impl PlanEntry {
    pub fn from_config(cfg: &SliceConfig) -> Self {
        let width = cfg.profile.sample_rate();
        Self {
            slice_id: cfg.slice_id,
            dl: Band::new(cfg.dl_freq_hz, width),
            ul: Band::new(cfg.ul_freq_hz, width),
            radio_channel: cfg.radio_channel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    DownlinkOverlap,
    UplinkOverlap,
    SharedRadioChannel,
    DuplicateSliceId,
}

/// One violating pair. `a` is always the lower slice id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Conflict {
    pub a: SliceId,
    pub b: SliceId,
    pub kind: ConflictKind,
}

impl fmt::Display for Conflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ConflictKind::DownlinkOverlap => "downlink bands overlap",
            ConflictKind::UplinkOverlap => "uplink bands overlap",
            ConflictKind::SharedRadioChannel => "share a radio channel",
            ConflictKind::DuplicateSliceId => "have the same slice id",
        };
        write!(f, "slices {} and {} {}", self.a, self.b, what)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub conflicts: Vec<Conflict>,
}

impl ConflictReport {
    /// Every slice other than `own` that appears in a conflict.
    pub fn blockers_of(&self, own: SliceId) -> Vec<SliceId> {
        let mut out: Vec<SliceId> = self
            .conflicts
            .iter()
            .filter_map(|c| {
                if c.a == own {
                    Some(c.b)
                } else if c.b == own {
                    Some(c.a)
                } else {
                    None
                }
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

impl fmt::Display for ConflictReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, c) in self.conflicts.iter().enumerate() {
            if n > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConflictReport {}

/// Frequency-division plan: one entry per slice.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdmPlan {
    pub entries: Vec<PlanEntry>,
}

impl FdmPlan {
    pub fn new(entries: Vec<PlanEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: SliceId) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.slice_id == id)
    }

    pub fn insert(&mut self, entry: PlanEntry) {
        self.remove(entry.slice_id);
        self.entries.push(entry);
    }

    pub fn remove(&mut self, id: SliceId) -> Option<PlanEntry> {
        let pos = self.entries.iter().position(|e| e.slice_id == id)?;
        Some(self.entries.remove(pos))
    }

    /// The plan with `entry` added (replacing any entry with the same slice id).
    pub fn with(&self, entry: PlanEntry) -> FdmPlan {
        let mut next = self.clone();
        next.insert(entry);
        next
    }

    /// Checks pairwise band disjointness and radio channel uniqueness. The
    /// report names every violating pair, so it is independent of entry order.
    pub fn validate(&self) -> Result<(), ConflictReport> {
        let mut conflicts = Vec::new();
        for (n, x) in self.entries.iter().enumerate() {
            for y in &self.entries[n + 1..] {
                let (a, b) = if x.slice_id <= y.slice_id {
                    (x.slice_id, y.slice_id)
                } else {
                    (y.slice_id, x.slice_id)
                };
                let mut push = |kind| conflicts.push(Conflict { a, b, kind });
                if x.slice_id == y.slice_id {
                    push(ConflictKind::DuplicateSliceId);
                }
                if x.dl.overlaps(&y.dl) {
                    push(ConflictKind::DownlinkOverlap);
                }
                if x.ul.overlaps(&y.ul) {
                    push(ConflictKind::UplinkOverlap);
                }
                if x.radio_channel == y.radio_channel {
                    push(ConflictKind::SharedRadioChannel);
                }
            }
        }
        if conflicts.is_empty() {
            Ok(())
        } else {
            conflicts.sort_by_key(|c| (c.a, c.b, c.kind as u8));
            Err(ConflictReport { conflicts })
        }
    }
}

pub fn validate_fdm_plan(plan: &FdmPlan) -> Result<(), ConflictReport> {
    plan.validate()
}
