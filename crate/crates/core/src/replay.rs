//! Prioritized experience replay and the actor/learner plumbing around it.
//!
//! [`PrioritizedBuffer`] is a ring of transitions indexed by a sum tree over
//! `p_i^alpha`. Actors batch transitions in a [`LocalBuffer`] and flush them
//! into a [`SharedReplay`]; the learner publishes actor weights through a
//! [`ParamServer`] that actors read without blocking.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwapOption;
use parking_lot::Mutex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One experience tuple `(x, a, r, x')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Bootstrapping is masked for terminal transitions.
    pub terminal: bool,
}

/// Handle to a sampled slot. The generation detects slots overwritten since sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleId {
    pub slot: usize,
    pub generation: u64,
}

/// Array-backed binary tree holding sums and maxima of leaf values.
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    leaves_base: usize,
    sums: Vec<f64>,
    maxes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves_base = capacity.next_power_of_two();
        Self { capacity, leaves_base, sums: vec![0.0; 2 * leaves_base], maxes: vec![0.0; 2 * leaves_base] }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.sums[1]
    }

    pub fn max(&self) -> f64 {
        self.maxes[1]
    }

    pub fn get(&self, slot: usize) -> f64 {
        self.sums[self.leaves_base + slot]
    }

    /// Set a leaf and recompute its ancestors from their children.
    pub fn set(&mut self, slot: usize, value: f64) {
        assert!(slot < self.capacity, "slot {slot} out of range");
        debug_assert!(value >= 0.0 && value.is_finite());
        let mut i = self.leaves_base + slot;
        self.sums[i] = value;
        self.maxes[i] = value;
        while i > 1 {
            i /= 2;
            self.sums[i] = self.sums[2 * i] + self.sums[2 * i + 1];
            self.maxes[i] = self.maxes[2 * i].max(self.maxes[2 * i + 1]);
        }
    }

    /// Leaf whose cumulative range contains `mass`; never a zero leaf while the total is positive.
    pub fn find(&self, mass: f64) -> usize {
        let mut mass = mass.clamp(0.0, self.total());
        let mut i = 1;
        while i < self.leaves_base {
            let left = 2 * i;
            if (mass < self.sums[left] || self.sums[left + 1] == 0.0) && self.sums[left] > 0.0 {
                i = left;
            } else {
                mass = (mass - self.sums[left]).max(0.0);
                i = left + 1;
            }
        }
        i - self.leaves_base
    }

    pub fn leaves(&self) -> &[f64] {
        &self.sums[self.leaves_base..self.leaves_base + self.capacity]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Prioritization exponent.
    pub alpha: f64,
    /// Initial importance-correction exponent, annealed to `beta_end`.
    pub beta_start: f64,
    pub beta_end: f64,
    /// Floor added to `|td|`.
    pub priority_eps: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { capacity: 100_000, alpha: 0.6, beta_start: 0.4, beta_end: 1.0, priority_eps: 1e-6 }
    }
}

/// A prioritized minibatch in structure-of-arrays form.
#[derive(Debug, Clone, Default)]
pub struct Minibatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<Vec<f64>>,
    pub terminal: Vec<bool>,
    /// Importance weights normalized so the largest is 1.
    pub weights: Vec<f64>,
    pub ids: Vec<SampleId>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Uniformly weighted batch, mostly for tests.
    pub fn from_transitions(items: &[Transition]) -> Self {
        let mut b = Minibatch::default();
        for (i, t) in items.iter().enumerate() {
            b.push(t, 1.0, SampleId { slot: i, generation: 0 });
        }
        b
    }

    fn push(&mut self, t: &Transition, weight: f64, id: SampleId) {
        self.states.push(t.state.clone());
        self.actions.push(t.action.clone());
        self.rewards.push(t.reward);
        self.next_states.push(t.next_state.clone());
        self.terminal.push(t.terminal);
        self.weights.push(weight);
        self.ids.push(id);
    }
}

/// Counters exported with the learner metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BufferStats {
    pub size: usize,
    pub root_priority: f64,
    pub evictions: u64,
    pub flushes: u64,
    pub stored: u64,
}

#[derive(Debug, Clone)]
pub struct PrioritizedBuffer {
    cfg: ReplayConfig,
    beta: f64,
    tree: SumTree,
    slots: Vec<Option<Transition>>,
    /// Raw priorities (before the alpha exponent) of live slots.
    raw: SumTree,
    generations: Vec<u64>,
    next: usize,
    len: usize,
    evictions: u64,
    flushes: u64,
    stored: u64,
}

impl PrioritizedBuffer {
    pub fn new(cfg: ReplayConfig) -> Result<Self> {
        if cfg.capacity == 0 {
            return Err(Error::domain("replay capacity must be positive"));
        }
        if !(cfg.alpha >= 0.0 && cfg.beta_start >= 0.0 && cfg.beta_end >= 0.0 && cfg.priority_eps > 0.0) {
            return Err(Error::domain("replay exponents must be nonnegative and priority_eps positive"));
        }
        Ok(Self {
            cfg,
            beta: cfg.beta_start,
            tree: SumTree::new(cfg.capacity),
            slots: vec![None; cfg.capacity],
            raw: SumTree::new(cfg.capacity),
            generations: vec![0; cfg.capacity],
            next: 0,
            len: 0,
            evictions: 0,
            flushes: 0,
            stored: 0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
    }

    /// Linear beta schedule over `progress` in `[0, 1]`.
    pub fn anneal_beta(&mut self, progress: f64) {
        let p = progress.clamp(0.0, 1.0);
        self.beta = self.cfg.beta_start + p * (self.cfg.beta_end - self.cfg.beta_start);
    }

    pub fn stats(&self) -> BufferStats {
        BufferStats {
            size: self.len,
            root_priority: self.tree.total(),
            evictions: self.evictions,
            flushes: self.flushes,
            stored: self.stored,
        }
    }

    fn max_raw_priority(&self) -> f64 {
        if self.len == 0 {
            1.0
        } else {
            self.raw.max()
        }
    }

    fn set_priority(&mut self, slot: usize, raw: f64) {
        self.raw.set(slot, raw);
        self.tree.set(slot, raw.powf(self.cfg.alpha));
    }

    /// Insert with the current maximum priority, overwriting the oldest slot when full.
    pub fn store(&mut self, t: Transition) {
        let p = self.max_raw_priority();
        let slot = self.next;
        if self.slots[slot].is_some() {
            self.evictions += 1;
        } else {
            self.len += 1;
        }
        self.slots[slot] = Some(t);
        self.generations[slot] += 1;
        self.set_priority(slot, p);
        self.next = (slot + 1) % self.cfg.capacity;
        self.stored += 1;
    }

    /// Store a batch of transitions as one flush.
    pub fn store_all(&mut self, items: impl IntoIterator<Item = Transition>) {
        for t in items {
            self.store(t);
        }
        self.flushes += 1;
    }

    /// Stratified proportional sampling with importance weights.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Minibatch> {
        if n == 0 || self.len < n {
            return Err(Error::InsufficientSamples { have: self.len, need: n.max(1) });
        }
        let total = self.tree.total();
        let segment = total / n as f64;
        let mut batch = Minibatch::default();
        let mut probs = Vec::with_capacity(n);
        for i in 0..n {
            let mass = segment * (i as f64 + rng.random::<f64>());
            let slot = self.tree.find(mass);
            let t = self.slots[slot].as_ref().expect("positive-priority leaves are live");
            probs.push(self.tree.get(slot) / total);
            batch.push(t, 0.0, SampleId { slot, generation: self.generations[slot] });
        }
        let size = self.len as f64;
        let raw_w: Vec<f64> = probs.iter().map(|p| (size * p).powf(-self.beta)).collect();
        let w_max = raw_w.iter().copied().fold(0.0, f64::max);
        batch.weights = raw_w.iter().map(|w| w / w_max).collect();
        Ok(batch)
    }

    /// Set `p_i = |td_i| + eps`, skipping slots overwritten or evicted since sampling.
    pub fn update_priorities(&mut self, ids: &[SampleId], td_errors: &[f64]) {
        for (id, td) in ids.iter().zip(td_errors) {
            if id.slot >= self.cfg.capacity
                || self.generations[id.slot] != id.generation
                || self.slots[id.slot].is_none()
                || !td.is_finite()
            {
                continue;
            }
            self.set_priority(id.slot, td.abs() + self.cfg.priority_eps);
        }
    }

    /// Drop the oldest `(1 - keep_fraction)` share of live entries.
    pub fn evict_old(&mut self, keep_fraction: f64) {
        let keep = keep_fraction.clamp(0.0, 1.0);
        let drop = ((1.0 - keep) * self.len as f64).floor() as usize;
        let cap = self.cfg.capacity;
        let oldest = (self.next + cap - self.len) % cap;
        for k in 0..drop {
            let slot = (oldest + k) % cap;
            self.slots[slot] = None;
            self.generations[slot] += 1;
            self.raw.set(slot, 0.0);
            self.tree.set(slot, 0.0);
        }
        self.len -= drop;
        self.evictions += drop as u64;
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.slots.get(slot).and_then(Option::as_ref)
    }
}

/// Central buffer shared by many flushing actors and one sampling learner.
#[derive(Debug, Clone)]
pub struct SharedReplay {
    inner: Arc<Mutex<PrioritizedBuffer>>,
}

impl SharedReplay {
    pub fn new(buffer: PrioritizedBuffer) -> Self {
        Self { inner: Arc::new(Mutex::new(buffer)) }
    }

    pub fn lock(&self) -> parking_lot::MutexGuard<'_, PrioritizedBuffer> {
        self.inner.lock()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> BufferStats {
        self.inner.lock().stats()
    }
}

/// Actor-side staging area.
#[derive(Debug, Clone, Default)]
pub struct LocalBuffer {
    items: Vec<Transition>,
}

impl LocalBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Transition) {
        self.items.push(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Move everything into the central buffer under a single lock.
    pub fn flush(&mut self, central: &SharedReplay) {
        if self.items.is_empty() {
            return;
        }
        let mut guard = central.lock();
        guard.store_all(self.items.drain(..));
    }

    /// Same as [`LocalBuffer::flush`] for a buffer owned by the caller.
    pub fn flush_into(&mut self, central: &mut PrioritizedBuffer) {
        if !self.items.is_empty() {
            central.store_all(self.items.drain(..));
        }
    }
}

/// A published parameter set.
#[derive(Debug)]
pub struct Snapshot<T> {
    pub version: u64,
    pub value: T,
}

/// Single-writer, many-reader distribution of versioned parameters.
///
/// Reads are lock-free: a fetch loads an `Arc` to an immutable snapshot and
/// never observes a partially written one.
#[derive(Debug)]
pub struct ParamServer<T> {
    current: ArcSwapOption<Snapshot<T>>,
    version: AtomicU64,
}

impl<T> Default for ParamServer<T> {
    fn default() -> Self {
        Self { current: ArcSwapOption::empty(), version: AtomicU64::new(0) }
    }
}

impl<T> ParamServer<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replace the snapshot; returns the new version.
    pub fn publish(&self, value: T) -> u64 {
        let version = self.version.fetch_add(1, Ordering::AcqRel) + 1;
        self.current.store(Some(Arc::new(Snapshot { version, value })));
        version
    }

    pub fn fetch(&self) -> Result<Arc<Snapshot<T>>> {
        self.current.load_full().ok_or(Error::Uninitialized)
    }

    pub fn version(&self) -> u64 {
        self.version.load(Ordering::Acquire)
    }
}
