//! FIFO replay buffer for one-shot (bandit) experiences.

use rand::RngCore;

/// One executed solution: the observed condition, the squashed solution that
/// ran in the environment, its pre-squash logits, and the recorded reward.
#[derive(Debug, Clone)]
pub struct BanditExperience {
    pub condition: Vec<f64>,
    pub solution: Vec<f64>,
    pub logits: Vec<f64>,
    pub reward: f64,
}

/// Ring buffer with strictly-FIFO eviction and uniform sampling without
/// replacement per batch.
#[derive(Debug)]
pub struct BanditReplay {
    items: Vec<BanditExperience>,
    capacity: usize,
    cursor: usize,
}

impl BanditReplay {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            items: Vec::with_capacity(capacity.min(4096)),
            capacity,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, experience: BanditExperience) {
        if self.items.len() < self.capacity {
            self.items.push(experience);
        } else {
            self.items[self.cursor] = experience;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Uniform sample of `amount` distinct experiences (clamped to the
    /// current size).
    pub fn sample(&self, amount: usize, rng: &mut dyn RngCore) -> Vec<BanditExperience> {
        let take = amount.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), take)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }

    /// Oldest-first iteration order, for FIFO property tests.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &BanditExperience> {
        let (newer, older) = self.items.split_at(self.cursor);
        older.iter().chain(newer.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn experience(tag: f64) -> BanditExperience {
        BanditExperience {
            condition: vec![tag],
            solution: vec![tag],
            logits: vec![tag],
            reward: tag,
        }
    }

    #[test]
    fn eviction_is_fifo() {
        let mut replay = BanditReplay::new(3);
        for i in 0..7 {
            replay.push(experience(i as f64));
        }
        let kept: Vec<f64> = replay.iter_fifo().map(|e| e.reward).collect();
        assert_eq!(kept, vec![4.0, 5.0, 6.0]);
        assert_eq!(replay.len(), 3);
    }

    #[test]
    fn sampling_is_without_replacement() {
        let mut replay = BanditReplay::new(16);
        for i in 0..16 {
            replay.push(experience(i as f64));
        }
        let mut rng = substream(3, "replay");
        let batch = replay.sample(16, &mut rng);
        let mut seen: Vec<f64> = batch.iter().map(|e| e.reward).collect();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), 16);
    }
}
