//! Priority-indexed ready queues with a two-level occupancy bitfield.

use std::collections::VecDeque;

use crate::model::ThreadId;

const WORD_BITS: usize = 32;

/// One FIFO per effective priority. `top` bit `g` is set iff word `g` of
/// `bottom` is non-zero; `bottom` bit `p` is set iff `queues[p]` is non-empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadyQueues {
    queues: Vec<VecDeque<ThreadId>>,
    top: u32,
    bottom: [u32; WORD_BITS],
    len: usize,
}

impl ReadyQueues {
    pub fn new(levels: u32) -> Self {
        assert!(levels as usize <= WORD_BITS * WORD_BITS, "too many priority levels");
        ReadyQueues {
            queues: vec![VecDeque::new(); levels as usize],
            top: 0,
            bottom: [0; WORD_BITS],
            len: 0,
        }
    }

    fn mark(&mut self, prio: usize) {
        self.bottom[prio / WORD_BITS] |= 1 << (prio % WORD_BITS);
        self.top |= 1 << (prio / WORD_BITS);
    }

    fn unmark_if_empty(&mut self, prio: usize) {
        if self.queues[prio].is_empty() {
            let group = prio / WORD_BITS;
            self.bottom[group] &= !(1 << (prio % WORD_BITS));
            if self.bottom[group] == 0 {
                self.top &= !(1 << group);
            }
        }
    }

    pub fn push_back(&mut self, thread: ThreadId, prio: u32) {
        let p = prio as usize;
        self.queues[p].push_back(thread);
        self.mark(p);
        self.len += 1;
    }

    pub fn push_front(&mut self, thread: ThreadId, prio: u32) {
        let p = prio as usize;
        self.queues[p].push_front(thread);
        self.mark(p);
        self.len += 1;
    }

    /// Highest occupied priority, found with two leading-zero counts.
    pub fn highest(&self) -> Option<u32> {
        if self.top == 0 {
            return None;
        }
        let group = (WORD_BITS - 1) - self.top.leading_zeros() as usize;
        let word = self.bottom[group];
        let bit = (WORD_BITS - 1) - word.leading_zeros() as usize;
        Some((group * WORD_BITS + bit) as u32)
    }

    pub fn peek_highest(&self) -> Option<ThreadId> {
        self.highest().and_then(|p| self.queues[p as usize].front().copied())
    }

    pub fn pop_highest(&mut self) -> Option<ThreadId> {
        let p = self.highest()? as usize;
        let t = self.queues[p].pop_front()?;
        self.unmark_if_empty(p);
        self.len -= 1;
        Some(t)
    }

    /// Remove `thread` from the queue at `prio`. Returns whether it was found.
    pub fn remove(&mut self, thread: ThreadId, prio: u32) -> bool {
        let p = prio as usize;
        match self.queues[p].iter().position(|&t| t == thread) {
            Some(pos) => {
                self.queues[p].remove(pos);
                self.unmark_if_empty(p);
                self.len -= 1;
                true
            }
            None => false,
        }
    }

    pub fn contains(&self, thread: ThreadId) -> bool {
        self.queues.iter().any(|q| q.contains(&thread))
    }

    pub fn queue(&self, prio: u32) -> &VecDeque<ThreadId> {
        &self.queues[prio as usize]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, ThreadId)> + '_ {
        self.queues
            .iter()
            .enumerate()
            .flat_map(|(p, q)| q.iter().map(move |&t| (p as u32, t)))
    }

    /// Occupancy bit for `prio`.
    pub fn occupied(&self, prio: u32) -> bool {
        let p = prio as usize;
        self.bottom[p / WORD_BITS] & (1 << (p % WORD_BITS)) != 0
            && self.top & (1 << (p / WORD_BITS)) != 0
    }

    pub fn levels(&self) -> u32 {
        self.queues.len() as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn highest_across_groups() {
        let mut q = ReadyQueues::new(1024);
        q.push_back(ThreadId(1), 3);
        q.push_back(ThreadId(2), 700);
        q.push_back(ThreadId(3), 700);
        assert_eq!(q.highest(), Some(700));
        assert_eq!(q.pop_highest(), Some(ThreadId(2)));
        assert_eq!(q.pop_highest(), Some(ThreadId(3)));
        assert_eq!(q.pop_highest(), Some(ThreadId(1)));
        assert_eq!(q.pop_highest(), None);
        assert!(!q.occupied(700));
    }

    proptest! {
        #[test]
        fn occupancy_matches_queues(ops in prop::collection::vec((0u32..256, 0u32..8, any::<bool>()), 1..200)) {
            let mut q = ReadyQueues::new(256);
            for (prio, tid, insert) in ops {
                let t = ThreadId(tid);
                if insert {
                    q.push_back(t, prio);
                } else {
                    q.remove(t, prio);
                }
                for p in 0..256 {
                    prop_assert_eq!(q.occupied(p), !q.queue(p).is_empty());
                }
                let expected = (0..256u32).rev().find(|&p| !q.queue(p).is_empty());
                prop_assert_eq!(q.highest(), expected);
                prop_assert_eq!(q.len(), q.iter().count());
            }
        }
    }
}
