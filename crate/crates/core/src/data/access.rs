use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::Dataset;
use crate::nn::Batch;

/// Per-record read counters, shared by the views of one run.
#[derive(Debug)]
pub struct AccessTracker {
    counts: Vec<AtomicU64>,
}

impl AccessTracker {
    pub fn new(n: usize) -> Self {
        Self {
            counts: (0..n).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    pub fn record(&self, index: usize) {
        self.counts[index].fetch_add(1, Ordering::Relaxed);
    }

    pub fn reads(&self, index: usize) -> u64 {
        self.counts[index].load(Ordering::Relaxed)
    }

    /// Total reads of the given records.
    pub fn reads_of(&self, indices: &[usize]) -> u64 {
        indices.iter().map(|&i| self.reads(i)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| c.load(Ordering::Relaxed)).sum()
    }

    pub fn reset(&self) {
        for c in &self.counts {
            c.store(0, Ordering::Relaxed);
        }
    }
}

/// A subset of a dataset's records. Every record handed out is counted.
#[derive(Debug, Clone)]
pub struct DataView {
    data: Arc<Dataset>,
    indices: Arc<[usize]>,
    tracker: Arc<AccessTracker>,
}

impl DataView {
    /// Panics if an index is out of range or the tracker is too small.
    pub fn new(data: Arc<Dataset>, indices: Vec<usize>, tracker: Arc<AccessTracker>) -> Self {
        assert!(
            tracker.counts.len() >= data.len(),
            "tracker smaller than dataset"
        );
        assert!(
            indices.iter().all(|&i| i < data.len()),
            "view index out of range"
        );
        Self {
            data,
            indices: indices.into(),
            tracker,
        }
    }

    /// A view over every record with a fresh tracker.
    pub fn whole(data: Arc<Dataset>) -> Self {
        let tracker = Arc::new(AccessTracker::new(data.len()));
        let indices = (0..data.len()).collect();
        Self::new(data, indices, tracker)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn tracker(&self) -> &Arc<AccessTracker> {
        &self.tracker
    }

    /// Examples at view positions `positions` (not dataset indices).
    pub fn batch(&self, positions: &[usize]) -> Batch {
        let idx: Vec<usize> = positions.iter().map(|&p| self.indices[p]).collect();
        for &i in &idx {
            self.tracker.record(i);
        }
        self.data.gather(&idx)
    }

    /// Every example of the view, in order.
    pub fn all(&self) -> Batch {
        let positions: Vec<usize> = (0..self.len()).collect();
        self.batch(&positions)
    }
}
