//! Weighted fair sharing at user level. Every quantum the scheduler reads
//! how much time each client consumed, advances its virtual runtime and
//! yields to the client with the smallest one.

use std::collections::{BTreeSet, VecDeque};

use super::Plan;
use crate::model::*;
use crate::sim::{Behavior, Step, StepCx};
use crate::syscall::Syscall;

/// Virtual-runtime units per tick at weight 1.
pub const VRUNTIME_SCALE: u128 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CfsPolicy {
    weights: Vec<u64>,
    vruntime: Vec<u128>,
    tree: BTreeSet<(u128, usize)>,
}

impl CfsPolicy {
    pub fn new(weights: &[u64]) -> Self {
        assert!(weights.iter().all(|&w| w > 0), "weights must be positive");
        CfsPolicy {
            weights: weights.to_vec(),
            vruntime: vec![0; weights.len()],
            tree: (0..weights.len()).map(|i| (0, i)).collect(),
        }
    }

    pub fn charge(&mut self, i: usize, consumed: Time) {
        if consumed == 0 {
            return;
        }
        self.tree.remove(&(self.vruntime[i], i));
        self.vruntime[i] += consumed as u128 * VRUNTIME_SCALE / self.weights[i] as u128;
        self.tree.insert((self.vruntime[i], i));
    }

    /// Client with the least virtual runtime.
    pub fn pick(&self) -> Option<usize> {
        self.tree.first().map(|&(_, i)| i)
    }

    pub fn vruntime(&self, i: usize) -> u128 {
        self.vruntime[i]
    }
}

enum Phase {
    Start,
    /// Waiting for the result of consuming client `i`'s time.
    Consuming(usize),
    Planned,
}

pub struct CfsScheduler {
    pub policy: CfsPolicy,
    timer: NtfnId,
    scs: Vec<ScId>,
    quantum: Time,
    phase: Phase,
    plan: Plan,
}

impl CfsScheduler {
    pub fn new(timer: NtfnId, weights: &[u64], scs: Vec<ScId>, quantum: Time) -> Self {
        CfsScheduler { policy: CfsPolicy::new(weights), timer, scs, quantum, phase: Phase::Start, plan: VecDeque::new() }
    }
}

impl Behavior for CfsScheduler {
    fn next_step(&mut self, cx: &mut StepCx<'_>) -> Step {
        let msg = cx.take_mailbox();
        let next = match self.phase {
            Phase::Start => 0,
            Phase::Consuming(i) => {
                if let Some(Message::Value(v)) = msg {
                    self.policy.charge(i, v);
                }
                i + 1
            }
            Phase::Planned => match self.plan.pop_front() {
                Some(s) => return s,
                None => 0,
            },
        };
        if next < self.scs.len() {
            self.phase = Phase::Consuming(next);
            return Step::Syscall(Syscall::Consume { sc: self.scs[next] });
        }
        if let Some(i) = self.policy.pick() {
            self.plan.push_back(Step::Syscall(Syscall::YieldTo { sc: self.scs[i] }));
        }
        self.plan.push_back(Step::ProgramTimer { ntfn: self.timer, at: cx.now + self.quantum });
        self.plan.push_back(Step::Syscall(Syscall::Wait { ntfn: self.timer }));
        self.phase = Phase::Planned;
        self.plan.pop_front().expect("plan is not empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_least_weighted_runtime() {
        let mut p = CfsPolicy::new(&[2, 1]);
        assert_eq!(p.pick(), Some(0));
        p.charge(0, 10);
        assert_eq!(p.pick(), Some(1));
        p.charge(1, 4);
        assert_eq!(p.pick(), Some(1));
        p.charge(1, 1);
        assert_eq!(p.vruntime(0), p.vruntime(1));
        assert_eq!(p.pick(), Some(0));
    }
}
