//! Cross-batch memory: a fixed-capacity FIFO of past pooled embeddings with
//! labels and modality tags. Stored embeddings are constants; no gradient
//! ever flows into them.

use std::collections::VecDeque;

use crate::data::Modality;
use crate::error::{Error, Result};

/// One remembered embedding. `label` is the true label for RGB entries and
/// the pseudo label for depth entries.
#[derive(Debug, Clone, PartialEq)]
pub struct XBMEntry<S> {
    pub embedding: Vec<S>,
    pub label: u8,
    pub modality: Modality,
    pub step: u64,
}

/// FIFO memory, newest last, evicting strictly oldest-first.
#[derive(Debug, Clone)]
pub struct XBMMemory<S> {
    capacity: usize,
    entries: VecDeque<XBMEntry<S>>,
}

pub const DEFAULT_XBM_CAPACITY: usize = 128;

impl<S: Clone> XBMMemory<S> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("xbm capacity must be > 0".into()));
        }
        Ok(XBMMemory { capacity, entries: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends entries in order, evicting from the front to stay within
    /// capacity.
    pub fn push(&mut self, new_entries: impl IntoIterator<Item = XBMEntry<S>>) {
        for e in new_entries {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(e);
        }
    }

    /// Stable copy of the entries at call time; later pushes do not touch it.
    pub fn snapshot(&self) -> Vec<XBMEntry<S>> {
        self.entries.iter().cloned().collect()
    }

    /// Drops everything; called at each epoch boundary to bound staleness.
    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(tag: u64) -> XBMEntry<f32> {
        XBMEntry { embedding: vec![tag as f32], label: (tag % 2) as u8, modality: Modality::Rgb, step: tag }
    }

    #[test]
    fn rejects_zero_capacity() {
        assert!(matches!(XBMMemory::<f32>::new(0), Err(Error::Config(_))));
    }

    #[test]
    fn fifo_keeps_newest_three() {
        let mut m = XBMMemory::new(3).unwrap();
        m.push((1..=5).map(entry));
        let s = m.snapshot();
        assert_eq!(s.iter().map(|e| e.step).collect::<Vec<_>>(), vec![3, 4, 5]);
    }

    #[test]
    fn empty_push_is_identity() {
        let mut m = XBMMemory::new(3).unwrap();
        m.push([entry(1)]);
        let before = m.snapshot();
        m.push(std::iter::empty());
        assert_eq!(m.snapshot(), before);
    }

    #[test]
    fn snapshot_is_stable_under_later_pushes() {
        let mut m = XBMMemory::new(4).unwrap();
        m.push([entry(1), entry(2)]);
        let snap = m.snapshot();
        m.push([entry(3), entry(4), entry(5)]);
        assert_eq!(snap.len(), 2);
        assert_eq!(snap[0].step, 1);
        assert_eq!(m.len(), 4);
    }

    #[test]
    fn clear_empties_memory() {
        let mut m = XBMMemory::new(2).unwrap();
        m.push([entry(1), entry(2)]);
        m.clear();
        assert!(m.is_empty());
        assert_eq!(m.snapshot(), Vec::new());
    }

    #[test]
    fn matches_reference_queue_over_1000_ops() {
        // Independent oracle: a plain Vec with explicit truncation.
        let cap = 7;
        let mut m = XBMMemory::new(cap).unwrap();
        let mut oracle: Vec<u64> = Vec::new();
        let mut x = 42u64;
        for i in 0..1000u64 {
            // Cheap LCG decides the burst size 0..3.
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let burst = (x >> 33) % 4;
            let tags: Vec<u64> = (0..burst).map(|j| i * 10 + j).collect();
            m.push(tags.iter().map(|&t| entry(t)));
            for &t in &tags {
                oracle.push(t);
            }
            if oracle.len() > cap {
                oracle.drain(..oracle.len() - cap);
            }
            assert_eq!(m.snapshot().iter().map(|e| e.step).collect::<Vec<_>>(), oracle);
        }
    }

    proptest! {
        #[test]
        fn size_never_exceeds_capacity(cap in 1usize..32, bursts in prop::collection::vec(0usize..10, 0..50)) {
            let mut m = XBMMemory::new(cap).unwrap();
            let mut tag = 0u64;
            for b in bursts {
                m.push((0..b).map(|_| { tag += 1; entry(tag) }));
                prop_assert!(m.len() <= cap);
            }
        }
    }
}
