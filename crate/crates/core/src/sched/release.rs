//! Release queue: threads that would be runnable but are out of budget,
//! ordered by their next refill time, FIFO on ties.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{ThreadId, Time};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReleaseQueue {
    order: BTreeSet<(Time, u64, ThreadId)>,
    keys: BTreeMap<ThreadId, (Time, u64)>,
    seq: u64,
}

impl ReleaseQueue {
    pub fn insert(&mut self, thread: ThreadId, refill_at: Time) {
        self.remove(thread);
        let seq = self.seq;
        self.seq += 1;
        self.order.insert((refill_at, seq, thread));
        self.keys.insert(thread, (refill_at, seq));
    }

    pub fn remove(&mut self, thread: ThreadId) -> bool {
        match self.keys.remove(&thread) {
            Some((t, s)) => {
                self.order.remove(&(t, s, thread));
                true
            }
            None => false,
        }
    }

    pub fn head(&self) -> Option<(Time, ThreadId)> {
        self.order.first().map(|&(t, _, id)| (t, id))
    }

    pub fn next_refill(&self) -> Option<Time> {
        self.head().map(|(t, _)| t)
    }

    /// Pop the head if its refill time is `<= now`.
    pub fn pop_due(&mut self, now: Time) -> Option<(Time, ThreadId)> {
        let &(t, s, id) = self.order.first()?;
        if t > now {
            return None;
        }
        self.order.remove(&(t, s, id));
        self.keys.remove(&id);
        Some((t, id))
    }

    pub fn contains(&self, thread: ThreadId) -> bool {
        self.keys.contains_key(&thread)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Time, ThreadId)> + '_ {
        self.order.iter().map(|&(t, _, id)| (t, id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_dequeue_in_insertion_order() {
        let mut q = ReleaseQueue::default();
        q.insert(ThreadId(5), 10);
        q.insert(ThreadId(2), 10);
        q.insert(ThreadId(9), 4);
        assert_eq!(q.pop_due(3), None);
        assert_eq!(q.pop_due(10), Some((4, ThreadId(9))));
        assert_eq!(q.pop_due(10), Some((10, ThreadId(5))));
        assert_eq!(q.pop_due(10), Some((10, ThreadId(2))));
        assert!(q.is_empty());
    }

    #[test]
    fn reinsert_moves_thread() {
        let mut q = ReleaseQueue::default();
        q.insert(ThreadId(1), 10);
        q.insert(ThreadId(1), 3);
        assert_eq!(q.len(), 1);
        assert_eq!(q.head(), Some((3, ThreadId(1))));
    }
}
