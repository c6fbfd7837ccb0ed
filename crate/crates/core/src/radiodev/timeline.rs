use crate::iqcore::IqSample;
use std::collections::{BTreeMap, HashMap};

/// Samples scheduled on one direction of one channel, keyed by the tick of
/// their first sample. Overlapping transmissions add.
#[derive(Default)]
pub(crate) struct Timeline {
    blocks: BTreeMap<u64, Vec<IqSample>>,
    pending: usize,
}

fn add(a: IqSample, b: IqSample) -> IqSample {
    IqSample::new(a.i.saturating_add(b.i), a.q.saturating_add(b.q))
}

impl Timeline {
    pub fn insert(&mut self, start: u64, samples: &[IqSample]) {
        self.pending += samples.len();
        match self.blocks.get_mut(&start) {
            Some(existing) => {
                if existing.len() < samples.len() {
                    existing.resize(samples.len(), IqSample::ZERO);
                }
                for (e, s) in existing.iter_mut().zip(samples) {
                    *e = add(*e, *s);
                }
            }
            None => {
                self.blocks.insert(start, samples.to_vec());
            }
        }
    }

    /// Adds every scheduled sample in `[start, start + out.len())` into `out`.
    /// Negative starts read silence for the part before tick 0.
    pub fn overlay(&self, start: i64, out: &mut [IqSample]) {
        let end = start + out.len() as i64;
        if end <= 0 {
            return;
        }
        for (&b_start, block) in self.blocks.range(..end as u64) {
            let b_start = b_start as i64;
            let b_end = b_start + block.len() as i64;
            if b_end <= start {
                continue;
            }
            let lo = b_start.max(start);
            let hi = b_end.min(end);
            for t in lo..hi {
                let o = &mut out[(t - start) as usize];
                *o = add(*o, block[(t - b_start) as usize]);
            }
        }
    }

    /// Drops blocks that end at or before `tick`.
    pub fn prune_before(&mut self, tick: u64) {
        while let Some((&start, block)) = self.blocks.first_key_value() {
            if start + block.len() as u64 > tick {
                break;
            }
            self.pending -= block.len();
            self.blocks.pop_first();
        }
    }

    /// Drops the oldest blocks until at most `limit` samples are pending;
    /// returns how many samples were discarded.
    pub fn cap(&mut self, limit: usize) -> u64 {
        let mut dropped = 0;
        while self.pending > limit {
            let Some((_, block)) = self.blocks.pop_first() else { break };
            self.pending -= block.len();
            dropped += block.len() as u64;
        }
        dropped
    }

    #[cfg(test)]
    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn clear(&mut self) {
        self.blocks.clear();
        self.pending = 0;
    }
}

/// One direction of one channel: its timeline plus the receivers listening.
#[derive(Default)]
pub(crate) struct Link {
    pub timeline: Timeline,
    /// Receiver channel index -> next source tick it will ask for.
    readers: HashMap<usize, Option<u64>>,
    /// Extra history kept behind the slowest reader (filter support).
    pub margin: u64,
}

impl Link {
    pub fn with_margin(margin: u64) -> Self {
        Self { margin, ..Self::default() }
    }

    pub fn add_reader(&mut self, id: usize) {
        self.readers.entry(id).or_insert(None);
    }

    pub fn remove_reader(&mut self, id: usize) {
        self.readers.remove(&id);
        if self.readers.is_empty() {
            self.timeline.clear();
        }
    }

    pub fn has_readers(&self) -> bool {
        !self.readers.is_empty()
    }

    pub fn reader_next(&self, id: usize) -> Option<u64> {
        self.readers.get(&id).copied().flatten()
    }

    /// Records that `id` has consumed everything before `next` and prunes
    /// what no reader can need any more.
    pub fn advance(&mut self, id: usize, next: u64) {
        if let Some(slot) = self.readers.get_mut(&id) {
            *slot = Some(slot.map_or(next, |old| old.max(next)));
        }
        let floor = self.readers.values().map(|r| r.unwrap_or(0)).min().unwrap_or(0);
        self.timeline.prune_before(floor.saturating_sub(self.margin));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: i16) -> IqSample {
        IqSample::new(v, -v)
    }

    #[test]
    fn overlay_and_superpose() {
        let mut t = Timeline::default();
        t.insert(10, &[s(1), s(2), s(3)]);
        t.insert(12, &[s(10), s(10)]);
        let mut out = vec![IqSample::ZERO; 6];
        t.overlay(9, &mut out);
        assert_eq!(out, vec![s(0), s(1), s(2), s(13), s(10), s(0)]);
        let mut early = vec![IqSample::ZERO; 4];
        t.overlay(-2, &mut early);
        assert!(early.iter().all(|x| *x == IqSample::ZERO));
    }

    #[test]
    fn pruning_and_cap() {
        let mut t = Timeline::default();
        t.insert(0, &[s(1); 4]);
        t.insert(4, &[s(1); 4]);
        t.prune_before(4);
        assert_eq!(t.pending(), 4);
        t.insert(8, &[s(1); 4]);
        assert_eq!(t.cap(4), 4);
        assert_eq!(t.pending(), 4);
    }

    #[test]
    fn link_prunes_behind_slowest_reader() {
        let mut l = Link::default();
        l.add_reader(0);
        l.add_reader(1);
        l.timeline.insert(0, &[s(1); 10]);
        l.advance(0, 100);
        assert_eq!(l.timeline.pending(), 10);
        l.advance(1, 20);
        assert_eq!(l.timeline.pending(), 0);
    }
}
