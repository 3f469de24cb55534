//! The two bounded trajectory stores.
//!
//! [`ModelReplay`] evicts a uniformly random resident when full and feeds the world
//! model. [`PolicyReplay`] evicts oldest-first and feeds the policy learner. Both
//! sample uniformly without replacement within a batch and evict an item as soon as
//! it has been handed out `max_samples` times, so every resident item is eligible.

use std::collections::VecDeque;
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LabeledTrajectory, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub max_samples: u32,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 50_000,
            max_samples: 32,
        }
    }
}

impl ReplayConfig {
    pub fn new(capacity: usize, max_samples: u32) -> Result<Self> {
        let cfg = Self {
            capacity,
            max_samples,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.max_samples == 0 {
            return Err(Error::Config(
                "replay capacity and max_samples must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Upper bound on the number of distinct producer versions a FIFO store of
    /// this capacity can hold when filled in batches of `batch`.
    pub fn staleness_bound(&self, batch: usize) -> u64 {
        self.capacity.div_ceil(batch) as u64
    }
}

/// Returned when fewer than the requested number of items are resident.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NotReady {
    pub requested: usize,
    pub available: usize,
}

impl fmt::Display for NotReady {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "replay not ready: {} requested, {} eligible",
            self.requested, self.available
        )
    }
}

impl std::error::Error for NotReady {}

pub trait ReplayItem {
    fn item_id(&self) -> u64;
}

impl ReplayItem for Trajectory {
    fn item_id(&self) -> u64 {
        self.id
    }
}

impl ReplayItem for LabeledTrajectory {
    fn item_id(&self) -> u64 {
        self.trajectory.id
    }
}

#[derive(Debug)]
struct Slot<T> {
    item: Arc<T>,
    samples: u32,
}

/// Store with uniform-random replacement on overflow.
#[derive(Debug)]
pub struct RandomReplay<T> {
    items: Vec<Slot<T>>,
    config: ReplayConfig,
    rng: ChaCha8Rng,
}

pub type ModelReplay = RandomReplay<Trajectory>;

impl<T: ReplayItem> RandomReplay<T> {
    pub fn new(config: ReplayConfig, seed: u64) -> Self {
        Self {
            items: Vec::with_capacity(config.capacity.min(1 << 16)),
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> ReplayConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Stores `item` with a zero sample count, evicting a random resident first
    /// when full. Returns the evicted item, if any.
    pub fn push(&mut self, item: T) -> Option<Arc<T>> {
        let evicted = if self.items.len() >= self.config.capacity {
            let victim = self.rng.gen_range(0..self.items.len());
            Some(self.items.swap_remove(victim).item)
        } else {
            None
        };
        self.items.push(Slot {
            item: Arc::new(item),
            samples: 0,
        });
        evicted
    }

    pub fn sample(&mut self, batch: usize) -> Result<Vec<Arc<T>>, NotReady> {
        let picks = pick(&mut self.rng, self.items.len(), batch)?;
        let max = self.config.max_samples;
        let out = picks
            .iter()
            .map(|&i| {
                let slot = &mut self.items[i];
                slot.samples += 1;
                Arc::clone(&slot.item)
            })
            .collect();
        let mut exhausted: Vec<usize> = picks
            .into_iter()
            .filter(|&i| self.items[i].samples >= max)
            .collect();
        exhausted.sort_unstable_by(|a, b| b.cmp(a));
        for i in exhausted {
            self.items.swap_remove(i);
        }
        Ok(out)
    }

    /// Resident items with their sample counts, in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (&T, u32)> {
        self.items.iter().map(|s| (s.item.as_ref(), s.samples))
    }
}

/// Store with oldest-first eviction.
#[derive(Debug)]
pub struct FifoReplay<T> {
    items: VecDeque<Slot<T>>,
    config: ReplayConfig,
    rng: ChaCha8Rng,
}

pub type PolicyReplay = FifoReplay<LabeledTrajectory>;

impl<T: ReplayItem> FifoReplay<T> {
    pub fn new(config: ReplayConfig, seed: u64) -> Self {
        Self {
            items: VecDeque::with_capacity(config.capacity.min(1 << 16)),
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> ReplayConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends `batch` in order, then drops the oldest items until the store fits.
    /// Returns the ids of evicted items, oldest first.
    pub fn push_batch(&mut self, batch: impl IntoIterator<Item = T>) -> Vec<u64> {
        for item in batch {
            self.items.push_back(Slot {
                item: Arc::new(item),
                samples: 0,
            });
        }
        let mut evicted = Vec::new();
        while self.items.len() > self.config.capacity {
            if let Some(old) = self.items.pop_front() {
                evicted.push(old.item.item_id());
            }
        }
        evicted
    }

    pub fn sample(&mut self, batch: usize) -> Result<Vec<Arc<T>>, NotReady> {
        let picks = pick(&mut self.rng, self.items.len(), batch)?;
        let max = self.config.max_samples;
        let out = picks
            .iter()
            .map(|&i| {
                let slot = &mut self.items[i];
                slot.samples += 1;
                Arc::clone(&slot.item)
            })
            .collect();
        if picks.iter().any(|&i| self.items[i].samples >= max) {
            self.items.retain(|s| s.samples < max);
        }
        Ok(out)
    }

    /// Resident items oldest first, with their sample counts.
    pub fn iter(&self) -> impl Iterator<Item = (&T, u32)> {
        self.items.iter().map(|s| (s.item.as_ref(), s.samples))
    }
}

impl FifoReplay<LabeledTrajectory> {
    /// Smallest and largest labeling-model version currently resident.
    pub fn version_range(&self) -> Option<(u64, u64)> {
        let mut versions = self.items.iter().map(|s| s.item.model_version);
        let first = versions.next()?;
        Some(versions.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

fn pick(rng: &mut ChaCha8Rng, len: usize, batch: usize) -> Result<Vec<usize>, NotReady> {
    if batch == 0 || len < batch {
        return Err(NotReady {
            requested: batch,
            available: len,
        });
    }
    Ok(index::sample(rng, len, batch).into_vec())
}

/// A replay store shared between one producer and one consumer role. Every
/// operation holds the lock for its full duration.
#[derive(Debug)]
pub struct Shared<B>(Arc<Mutex<B>>);

impl<B> Clone for Shared<B> {
    fn clone(&self) -> Self {
        Self(Arc::clone(&self.0))
    }
}

impl<B> Shared<B> {
    pub fn new(inner: B) -> Self {
        Self(Arc::new(Mutex::new(inner)))
    }

    pub fn lock(&self) -> MutexGuard<'_, B> {
        self.0.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}
