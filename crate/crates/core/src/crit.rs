//! System criticality level, per-criticality thread lists, and mode switches.

use std::collections::VecDeque;

use crate::kernel::Kernel;
use crate::model::*;
use crate::trace::{Category, ObjRef, TraceRecord};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CriticalityState {
    pub level: u32,
    queues: Vec<VecDeque<ThreadId>>,
}

impl CriticalityState {
    pub fn new(levels: u32) -> Self {
        CriticalityState { level: 0, queues: vec![VecDeque::new(); levels as usize] }
    }

    pub fn insert(&mut self, t: ThreadId, crit: u32) {
        self.queues[crit as usize].push_back(t);
    }

    pub fn remove(&mut self, t: ThreadId, crit: u32) {
        let q = &mut self.queues[crit as usize];
        if let Some(pos) = q.iter().position(|&x| x == t) {
            q.remove(pos);
        }
    }

    pub fn queue(&self, crit: u32) -> &VecDeque<ThreadId> {
        &self.queues[crit as usize]
    }

    pub fn count_of(&self, t: ThreadId) -> usize {
        self.queues.iter().map(|q| q.iter().filter(|&&x| x == t).count()).sum()
    }

    /// Number of threads with criticality at or above `level`.
    pub fn at_or_above(&self, level: u32) -> usize {
        self.queues[level as usize..].iter().map(VecDeque::len).sum()
    }
}

/// Outcome of a criticality switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CritSwitch {
    pub from: u32,
    pub to: u32,
    /// Threads whose criticality is at or above the new level.
    pub boost_count: usize,
    /// Threads whose priority was recomputed.
    pub touched: usize,
    /// Borrowed-SC timeout faults raised.
    pub faults: usize,
}

/// Lowest criticality level whose threads change effective priority when the
/// system moves between `a` and `b`.
fn first_affected(a: u32, b: u32) -> Option<u32> {
    match (a, b) {
        (0, 0) => None,
        (0, c) | (c, 0) => Some(c),
        (x, y) => Some(x.min(y)),
    }
}

impl Kernel {
    /// Change the system criticality level.
    pub fn set_system_criticality(&mut self, actor: ThreadId, level: u32) -> KernelResult<CritSwitch> {
        self.authority.require(actor, Authority::SchedControl)?;
        self.do_set_system_criticality(level)
    }

    pub(crate) fn do_set_system_criticality(&mut self, level: u32) -> KernelResult<CritSwitch> {
        if level >= self.cfg.crit_levels {
            return Err(KernelError::BadLevel);
        }
        let from = self.crit.level;
        self.crit.level = level;
        let boost_count = self.crit.at_or_above(level);
        let mut touched = 0;
        let mut suspects = Vec::new();
        if let Some(lo) = first_affected(from, level) {
            for c in lo..self.cfg.crit_levels {
                let members: Vec<ThreadId> = self.crit.queue(c).iter().copied().collect();
                for t in members {
                    let th = &self.threads[t.index()];
                    let eff = self.cfg.effective_priority(th.base_priority, th.criticality, level);
                    self.set_effective(t, eff);
                    touched += 1;
                    if level > from && c >= level {
                        suspects.push(t);
                    }
                }
            }
        }
        self.ledger.crit_threads_touched += touched as u64;
        self.emit(
            TraceRecord::new(self.clock, Category::CritSwitch)
                .detail(format!("from={from};to={level};boosted={boost_count};touched={touched}")),
        );
        let mut faults = 0;
        for t in suspects {
            if self.borrows_low_sc(t, level) {
                let sc = self.threads[t.index()].current_sc.expect("borrowing thread has an SC");
                self.record(
                    Category::BorrowedScFault,
                    ObjRef::Thread(t),
                    Some(ObjRef::Sc(sc)),
                    format!("level={level}"),
                );
                self.raise_timeout(t, FaultReason::CriticalitySwitch);
                faults += 1;
            }
        }
        Ok(CritSwitch { from, to: level, boost_count, touched, faults })
    }

    /// Whether `t` is executing on an SC whose owner is below `level`, and has
    /// a handler to report that to.
    fn borrows_low_sc(&self, t: ThreadId, level: u32) -> bool {
        let th = &self.threads[t.index()];
        if th.timeout_handler.is_none() || th.fault.is_some() {
            return false;
        }
        if !matches!(th.state, ThreadState::Running | ThreadState::Ready | ThreadState::OutOfBudget) {
            return false;
        }
        let Some(sc) = th.current_sc else { return false };
        match self.scs[sc.index()].home_thread {
            Some(owner) if owner != t => self.threads[owner.index()].criticality < level,
            _ => false,
        }
    }
}
