//! Fixed-capacity FIFO of momentum-encoder keys.
//!
//! Each entry carries both the intra-modal and the inter-modal key of one
//! sample so the two are enqueued and evicted together. Image-side entries
//! also carry the sample's tags.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics;

/// Keys must be unit-norm within this tolerance.
pub const KEY_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub intra_key: Vec<f64>,
    pub inter_key: Vec<f64>,
    pub tags: Option<Vec<u8>>,
    pub source_id: usize,
}

impl QueueEntry {
    fn validate(&self, index: usize) -> Result<()> {
        for key in [&self.intra_key, &self.inter_key] {
            if !numerics::all_finite(key) || (numerics::norm(key) - 1.0).abs() > KEY_NORM_TOL {
                return Err(Error::InvalidKey { index, reason: "key is not unit-norm" });
            }
        }
        if let Some(tags) = &self.tags {
            if tags.iter().any(|&t| t > 1) {
                return Err(Error::InvalidKey { index, reason: "tags must be 0/1" });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyQueue {
    capacity: usize,
    entries: VecDeque<QueueEntry>,
}

impl KeyQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig { field: "queue_capacity", reason: "must be positive" });
        }
        Ok(Self { capacity, entries: VecDeque::with_capacity(capacity) })
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

    /// Appends `batch` in order, evicting the oldest entries beyond capacity.
    /// The whole batch is validated before anything is inserted.
    pub fn enqueue_batch(&mut self, batch: Vec<QueueEntry>) -> Result<()> {
        for (i, e) in batch.iter().enumerate() {
            e.validate(i)?;
        }
        for e in batch {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(e);
        }
        Ok(())
    }

    /// Oldest-first copy, independent of later mutation.
    pub fn snapshot(&self) -> Vec<QueueEntry> {
        self.entries.iter().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn entry(id: usize) -> QueueEntry {
        QueueEntry { intra_key: vec![1.0, 0.0], inter_key: vec![0.0, 0.0, 1.0], tags: None, source_id: id }
    }

    fn ids(q: &KeyQueue) -> Vec<usize> {
        q.snapshot().iter().map(|e| e.source_id).collect()
    }

    #[test]
    fn evicts_oldest_first() {
        let mut q = KeyQueue::new(4).unwrap();
        for id in 1..=6 {
            q.enqueue_batch(vec![entry(id)]).unwrap();
        }
        assert_eq!(ids(&q), vec![3, 4, 5, 6]);
    }

    #[test]
    fn empty_batch_is_noop() {
        let mut q = KeyQueue::new(4).unwrap();
        q.enqueue_batch(vec![entry(1)]).unwrap();
        let before = q.clone();
        q.enqueue_batch(Vec::new()).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn two_batches_overflow() {
        let mut q = KeyQueue::new(8).unwrap();
        q.enqueue_batch((0..5).map(entry).collect()).unwrap();
        q.enqueue_batch((5..10).map(entry).collect()).unwrap();
        assert_eq!(ids(&q), vec![2, 3, 4, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn snapshot_is_detached() {
        let mut q = KeyQueue::new(3).unwrap();
        assert!(q.snapshot().is_empty());
        q.enqueue_batch(vec![entry(1), entry(2)]).unwrap();
        let snap = q.snapshot();
        q.enqueue_batch(vec![entry(3), entry(4)]).unwrap();
        assert_eq!(snap.iter().map(|e| e.source_id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(ids(&q), vec![2, 3, 4]);
    }

    #[test]
    fn rejects_bad_entries_atomically() {
        let mut q = KeyQueue::new(3).unwrap();
        let mut bad = entry(2);
        bad.intra_key = vec![0.6, 0.7];
        let err = q.enqueue_batch(vec![entry(1), bad]).unwrap_err();
        assert!(matches!(err, Error::InvalidKey { index: 1, .. }));
        assert!(q.is_empty());

        let mut bad_tags = entry(3);
        bad_tags.tags = Some(vec![0, 2]);
        assert!(q.enqueue_batch(vec![bad_tags]).is_err());
        assert!(KeyQueue::new(0).is_err());
    }
}
