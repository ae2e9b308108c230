use crate::data::DataView;
use crate::nn::{epoch_order, Batch};

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Init,
    Order,
    Noise,
}

/// Mixes `seed` with the stream tag (splitmix64 finalizer), so a run seed
/// fans out into uncorrelated seeds for initialization, batch order and noise.
pub fn derive_seed(seed: u64, stream: SeedStream) -> u64 {
    let tag: u64 = match stream {
        SeedStream::Init => 1,
        SeedStream::Order => 2,
        SeedStream::Noise => 3,
    };
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Endless sequence of shuffled minibatches over a view. Each epoch is a
/// fresh permutation; the last batch of an epoch may be short.
#[derive(Debug, Clone)]
pub struct MinibatchStream {
    view: DataView,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl MinibatchStream {
    pub fn new(view: DataView, batch_size: usize, seed: u64) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        assert!(!view.is_empty(), "cannot stream an empty view");
        let order = epoch_order(view.len(), seed, 0);
        Self {
            view,
            batch_size,
            seed,
            epoch: 0,
            order,
            pos: 0,
        }
    }

    pub fn view(&self) -> &DataView {
        &self.view
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.view.len().div_ceil(self.batch_size)
    }

    /// Abandons the rest of the current epoch, if it has started.
    pub fn finish_epoch(&mut self) {
        if self.pos > 0 {
            self.pos = self.order.len();
        }
    }

    pub fn next_batch(&mut self) -> Batch {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.order = epoch_order(self.view.len(), self.seed, self.epoch);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.view.batch(&self.order[self.pos..end]);
        self.pos = end;
        batch
    }
}
