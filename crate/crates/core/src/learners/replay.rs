use std::collections::VecDeque;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::smdp::SimRng;

/// Fixed-capacity memory with oldest-first eviction.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    /// A batch of `batch_size` records drawn uniformly without replacement.
    /// Asking for the whole memory (or more) returns every record in
    /// insertion order and draws nothing from `rng`.
    pub fn sample(&self, batch_size: usize, rng: &mut SimRng) -> Result<Vec<&T>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if batch_size >= self.items.len() {
            return Ok(self.items.iter().collect());
        }
        Ok(index::sample(rng, self.items.len(), batch_size)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}
