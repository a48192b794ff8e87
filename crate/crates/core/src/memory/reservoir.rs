//! Fixed-capacity uniform stream sampling (Algorithm R).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Streaming reservoir holding at most `capacity` items.
///
/// After `n` pushes every pushed item is retained with probability
/// `min(1, capacity / n)`. Until the reservoir fills, items keep stream order.
#[derive(Debug, Clone)]
pub struct Reservoir<T> {
    capacity: usize,
    seen: u64,
    items: Vec<T>,
    rng: ChaCha8Rng,
}

impl<T> Reservoir<T> {
    /// Returns `None` when `capacity` is zero.
    pub fn new(capacity: usize, seed: u64) -> Option<Self> {
        (capacity > 0).then(|| Reservoir {
            capacity,
            seen: 0,
            items: Vec::with_capacity(capacity.min(1 << 20)),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            let j = self.rng.random_range(0..=self.seen);
            if j < self.capacity as u64 {
                self.items[j as usize] = item;
            }
        }
        self.seen += 1;
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn into_items(self) -> Vec<T> {
        self.items
    }
}

/// Samples `min(capacity, stream length)` items uniformly from `stream`.
///
/// Deterministic for a given seed. Returns `None` when `capacity` is zero.
pub fn reservoir_sample<T, I>(stream: I, capacity: usize, seed: u64) -> Option<Vec<T>>
where
    I: IntoIterator<Item = T>,
{
    let mut r = Reservoir::new(capacity, seed)?;
    for item in stream {
        r.push(item);
    }
    Some(r.into_items())
}
