//! Earliest-deadline-first scheduling at user level. Clients call the
//! scheduler when a job completes; the scheduler keeps their reply
//! capabilities until the next release and dispatches by replying, or with
//! `yield_to` for clients it preempted.

use std::collections::VecDeque;

use super::Plan;
use crate::model::*;
use crate::sim::{Behavior, Step, StepCx};
use crate::syscall::Syscall;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdfClient {
    pub period: Time,
    pub next_release: Time,
    /// Absolute deadline of the current job.
    pub deadline: Time,
    /// Has a released, unfinished job.
    pub ready: bool,
    /// Blocked in a call, with its reply capability held by the scheduler.
    pub cap_saved: bool,
}

/// Deadline and release bookkeeping, independent of the kernel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdfPolicy {
    pub clients: Vec<EdfClient>,
}

impl EdfPolicy {
    pub fn new(periods: &[Time]) -> Self {
        let clients = periods
            .iter()
            .map(|&period| EdfClient { period, next_release: 0, deadline: 0, ready: false, cap_saved: false })
            .collect();
        EdfPolicy { clients }
    }

    /// Client `i` finished its job and is waiting for its next release.
    pub fn job_done(&mut self, i: usize) {
        let c = &mut self.clients[i];
        c.ready = false;
        c.cap_saved = true;
    }

    /// Release every waiting client whose release time has come.
    pub fn release(&mut self, now: Time) {
        for c in &mut self.clients {
            if !c.ready && c.cap_saved && c.next_release <= now {
                c.ready = true;
                c.deadline = c.next_release + c.period;
                c.next_release += c.period;
            }
        }
    }

    /// Ready client with the earliest deadline; lowest index on ties.
    pub fn pick(&self) -> Option<usize> {
        (0..self.clients.len()).filter(|&i| self.clients[i].ready).min_by_key(|&i| (self.clients[i].deadline, i))
    }

    /// Earliest pending release.
    pub fn next_wakeup(&self) -> Option<Time> {
        self.clients.iter().filter(|c| !c.ready).map(|c| c.next_release).min()
    }
}

pub struct EdfScheduler {
    pub policy: EdfPolicy,
    me: ThreadId,
    ep: EpId,
    timer: NtfnId,
    scs: Vec<ScId>,
    registered: Vec<bool>,
    plan: Plan,
    started: bool,
}

impl EdfScheduler {
    pub fn new(me: ThreadId, ep: EpId, timer: NtfnId, periods: &[Time], scs: Vec<ScId>) -> Self {
        EdfScheduler {
            policy: EdfPolicy::new(periods),
            me,
            ep,
            timer,
            registered: vec![false; scs.len()],
            scs,
            plan: VecDeque::new(),
            started: false,
        }
    }
}

impl Behavior for EdfScheduler {
    fn next_step(&mut self, cx: &mut StepCx<'_>) -> Step {
        let msg = cx.take_mailbox();
        if let Some(s) = self.plan.pop_front() {
            return s;
        }
        if !self.started {
            self.started = true;
            return Step::Syscall(Syscall::Recv { ep: self.ep });
        }
        let sys = |c| Step::Syscall(c);
        if let Some(Message::Ipc { badge, .. }) = msg {
            if badge != NOTIFICATION_BADGE {
                let i = badge as usize;
                self.plan.push_back(sys(Syscall::SaveCaller { target: self.me, slot: i as u32 }));
                self.policy.job_done(i);
                self.registered[i] = true;
            }
        }
        if self.registered.iter().all(|&r| r) {
            self.policy.release(cx.now);
            if let Some(at) = self.policy.next_wakeup() {
                self.plan.push_back(Step::ProgramTimer { ntfn: self.timer, at });
            }
            if let Some(j) = self.policy.pick() {
                if self.policy.clients[j].cap_saved {
                    self.policy.clients[j].cap_saved = false;
                    self.plan.push_back(sys(Syscall::SetCaller { slot: j as u32 }));
                    self.plan.push_back(sys(Syscall::Reply { badge: 0 }));
                }
                self.plan.push_back(sys(Syscall::YieldTo { sc: self.scs[j] }));
            }
        }
        self.plan.push_back(sys(Syscall::Recv { ep: self.ep }));
        self.plan.pop_front().expect("plan ends with a receive")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn earliest_deadline_first_with_index_ties() {
        let mut p = EdfPolicy::new(&[10, 5, 10]);
        for i in 0..3 {
            p.job_done(i);
        }
        p.release(0);
        assert_eq!(p.pick(), Some(1));
        p.job_done(1);
        assert_eq!(p.pick(), Some(0));
        assert_eq!(p.next_wakeup(), Some(5));
        p.release(5);
        assert_eq!(p.pick(), Some(0));
        assert_eq!(p.clients[1].deadline, 10);
    }

    #[test]
    fn single_client_released_every_period() {
        let mut p = EdfPolicy::new(&[7]);
        for k in 0..5 {
            p.job_done(0);
            assert_eq!(p.next_wakeup(), Some(7 * k));
            p.release(7 * k);
            assert_eq!(p.pick(), Some(0));
        }
    }
}
