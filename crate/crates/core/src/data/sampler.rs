use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Indices into a pair pool. Video `i` and motion `i` of the batch come from
/// the same pair, so the diagonal of the similarity matrix is the positives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    pub indices: Vec<usize>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Draws `n` distinct members of `pool` uniformly without replacement.
pub fn sample_batch(pool: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Result<PairBatch> {
    if n > pool.len() {
        return Err(Error::BatchTooLarge { batch: n, pool: pool.len() });
    }
    if n == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let indices = index::sample(rng, pool.len(), n).into_iter().map(|k| pool[k]).collect();
    Ok(PairBatch { indices })
}

/// Epoch-wise batching: each epoch is a fresh permutation of the pool cut into
/// batches of `batch_size`. A trailing remainder is dropped so every batch has
/// the same number of in-batch negatives.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    pool: Vec<usize>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(pool: Vec<usize>, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if batch_size > pool.len() {
            return Err(Error::BatchTooLarge { batch: batch_size, pool: pool.len() });
        }
        Ok(Self {
            pool,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.pool.len() / self.batch_size
    }

    pub fn next_epoch(&mut self) -> Vec<PairBatch> {
        let mut order = self.pool.clone();
        order.shuffle(&mut self.rng);
        order
            .chunks_exact(self.batch_size)
            .map(|c| PairBatch { indices: c.to_vec() })
            .collect()
    }
}
