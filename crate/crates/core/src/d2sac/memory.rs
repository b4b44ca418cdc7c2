//! Experience replay with strictly-FIFO eviction and delayed-reward rows.
//!
//! Rewards that arrive late can be inserted as pending and patched before
//! first use; the sampler never returns a pending row.

use rand::RngCore;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
struct Slot {
    transition: Transition,
    /// Monotone insertion stamp, used to resolve tickets after eviction.
    stamp: u64,
    pending: bool,
}

/// Handle to a pending-reward row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingTicket {
    index: usize,
    stamp: u64,
}

#[derive(Debug)]
pub struct ReplayMemory {
    slots: Vec<Slot>,
    capacity: usize,
    cursor: usize,
    next_stamp: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            slots: Vec::with_capacity(capacity.min(4096)),
            capacity,
            cursor: 0,
            next_stamp: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Rows currently eligible for sampling.
    pub fn ready_len(&self) -> usize {
        self.slots.iter().filter(|s| !s.pending).count()
    }

    fn insert(&mut self, transition: Transition, pending: bool) -> PendingTicket {
        let stamp = self.next_stamp;
        self.next_stamp += 1;
        let slot = Slot {
            transition,
            stamp,
            pending,
        };
        let index = if self.slots.len() < self.capacity {
            self.slots.push(slot);
            self.slots.len() - 1
        } else {
            let index = self.cursor;
            self.slots[index] = slot;
            self.cursor = (self.cursor + 1) % self.capacity;
            index
        };
        PendingTicket { index, stamp }
    }

    pub fn push(&mut self, transition: Transition) {
        self.insert(transition, false);
    }

    /// Inserts a transition whose reward is not yet known. The stored reward
    /// is a placeholder until [`Self::fill_reward`] patches it.
    pub fn push_pending(&mut self, transition: Transition) -> PendingTicket {
        self.insert(transition, true)
    }

    /// Patches a pending row. Returns false when the row was already evicted.
    pub fn fill_reward(&mut self, ticket: PendingTicket, reward: f64) -> bool {
        match self.slots.get_mut(ticket.index) {
            Some(slot) if slot.stamp == ticket.stamp && slot.pending => {
                slot.transition.reward = reward;
                slot.pending = false;
                true
            }
            _ => false,
        }
    }

    /// Uniform sample without replacement from the non-pending rows
    /// (clamped to their count).
    pub fn sample(&self, amount: usize, rng: &mut dyn RngCore) -> Vec<Transition> {
        let ready: Vec<&Slot> = self.slots.iter().filter(|s| !s.pending).collect();
        let take = amount.min(ready.len());
        if take == 0 {
            return Vec::new();
        }
        rand::seq::index::sample(rng, ready.len(), take)
            .into_iter()
            .map(|i| ready[i].transition.clone())
            .collect()
    }

    /// Oldest-first iteration, for FIFO property tests.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.slots.split_at(self.cursor);
        older.iter().chain(newer.iter()).map(|s| &s.transition)
    }
}
