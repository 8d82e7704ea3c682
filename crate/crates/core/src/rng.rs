//! Reproducible replica streams.
//!
//! Every replica draws from its own generator, keyed by `(master seed,
//! stream domain, replica index)` through a counter-based mix. Replicas are
//! processed in fixed-size blocks and block results are merged in index
//! order, so any output is a pure function of the seed and replica count and
//! does not depend on the number of workers.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::Result;

pub type ReplicaRng = Xoshiro256PlusPlus;

/// Replicas per block. Block boundaries fix the merge order.
pub const BLOCK: u64 = 256;

/// Independent stream families drawn from the same master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Skeleton trees (branching times and Gaussian increments).
    Tree = 0x7472_6565,
    /// Bridge infill and barrier-crossing resolution on a fixed tree.
    Infill = 0x696e_666c,
    /// Stand-alone Brownian path oracles.
    Oracle = 0x6f72_6163,
    /// Plain Gaussian samples for identity checks.
    Gauss = 0x6761_7573,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for replica `index` of `stream` under `master_seed`.
pub fn replica_rng(master_seed: u64, stream: Stream, index: u64) -> ReplicaRng {
    let key = splitmix64(splitmix64(master_seed ^ stream as u64) ^ index);
    Xoshiro256PlusPlus::seed_from_u64(key)
}

/// A batch of independent replicas and the worker pool that runs them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Replicas {
    pub seed: u64,
    pub count: u64,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
}

impl Replicas {
    pub fn new(seed: u64, count: u64) -> Self {
        Replicas { seed, count, workers: 0 }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn rng(&self, stream: Stream, index: u64) -> ReplicaRng {
        replica_rng(self.seed, stream, index)
    }

    /// Runs `body(index, &mut acc)` for every replica and merges block
    /// accumulators in block order.
    ///
    /// `init` builds a fresh accumulator per block; `merge` folds a later
    /// block into the running total.
    pub fn fold<A, I, F, M>(&self, init: I, body: F, merge: M) -> Result<A>
    where
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(u64, &mut A) -> Result<()> + Sync,
        M: Fn(&mut A, A),
    {
        self.fold_blocks(
            &init,
            |range, acc| {
                for i in range {
                    body(i, acc)?;
                }
                Ok(())
            },
            merge,
        )
    }

    /// [`Replicas::fold`] with `body` handed a whole block of indices.
    pub fn fold_blocks<A, I, F, M>(&self, init: I, body: F, merge: M) -> Result<A>
    where
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(std::ops::Range<u64>, &mut A) -> Result<()> + Sync,
        M: Fn(&mut A, A),
    {
        let n_blocks = self.count.div_ceil(BLOCK);
        let run_block = |b: u64| -> Result<A> {
            let mut acc = init();
            body(b * BLOCK..((b + 1) * BLOCK).min(self.count), &mut acc)?;
            Ok(acc)
        };
        let blocks: Vec<Result<A>> = if self.workers == 1 {
            (0..n_blocks).map(run_block).collect()
        } else if self.workers == 0 {
            (0..n_blocks).into_par_iter().map(run_block).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.workers)
                .build()
                .map_err(|e| crate::Error::domain(format!("worker pool: {e}")))?;
            pool.install(|| (0..n_blocks).into_par_iter().map(run_block).collect())
        };
        let mut total = init();
        for block in blocks {
            merge(&mut total, block?);
        }
        Ok(total)
    }

    /// Per-replica values in replica order.
    pub fn map<T, F>(&self, body: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync,
    {
        self.fold(
            Vec::new,
            |i, acc: &mut Vec<T>| {
                acc.push(body(i)?);
                Ok(())
            },
            |total, block| total.extend(block),
        )
    }
}
