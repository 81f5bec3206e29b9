//! Uniform replay over subgoal transitions. Observations are shared via
//! `Arc`, so relabeled copies cost metadata only.

use std::sync::Arc;

use rand::Rng;

use crate::graph::{Abstract, StateId};
use crate::sim::{Action, Observation};

/// One subgoal transition. `reward` is -1/0 for everything except the
/// shaped-reward baseline, which emits path indices.
#[derive(Debug, Clone)]
pub struct Experience {
    pub obs: Arc<Observation>,
    pub current: Abstract,
    pub goal: StateId,
    pub action: Action,
    pub reward: i32,
    pub next_obs: Arc<Observation>,
    pub next_current: Abstract,
    pub terminal: bool,
}

/// Fixed-capacity ring with FIFO eviction and uniform sampling over the
/// filled region.
pub struct ReplayBuffer {
    buf: Vec<Experience>,
    cap: usize,
    write: usize,
}

impl ReplayBuffer {
    pub fn new(cap: usize) -> ReplayBuffer {
        assert!(cap > 0);
        ReplayBuffer { buf: Vec::with_capacity(cap.min(1 << 20)), cap, write: 0 }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn push(&mut self, e: Experience) {
        if self.buf.len() < self.cap {
            self.buf.push(e);
        } else {
            self.buf[self.write] = e;
            self.write = (self.write + 1) % self.cap;
        }
    }

    pub fn get(&self, i: usize) -> &Experience {
        &self.buf[i]
    }

    /// Uniform indices (with replacement) over the filled region.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.buf.is_empty());
        (0..n).map(|_| rng.random_range(0..self.buf.len())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(tag: i32) -> Experience {
        let obs = Arc::new(Observation {
            img: Tensor::zeros(&[1, 2, 2]),
            hand: Tensor::zeros(&[1, 1, 1]),
            holding: false,
        });
        Experience {
            obs: obs.clone(),
            current: Abstract::NotAStructure,
            goal: StateId(0),
            action: Action::pick(0, 0),
            reward: tag,
            next_obs: obs,
            next_current: Abstract::NotAStructure,
            terminal: false,
        }
    }

    #[test]
    fn fifo_eviction_overwrites_oldest() {
        let mut rb = ReplayBuffer::new(3);
        for i in 0..5 {
            rb.push(exp(i));
        }
        assert_eq!(rb.len(), 3);
        let rewards: Vec<i32> = (0..3).map(|i| rb.get(i).reward).collect();
        // slots 0 and 1 were overwritten by items 3 and 4
        assert_eq!(rewards, vec![3, 4, 2]);
    }

    #[test]
    fn sampling_stays_in_filled_region() {
        let mut rb = ReplayBuffer::new(10);
        for i in 0..4 {
            rb.push(exp(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for idx in rb.sample_indices(100, &mut rng) {
            assert!(idx < 4);
        }
    }
}
