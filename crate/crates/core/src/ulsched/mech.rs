//! Round-robin schedulers built from each combination of cooperative or
//! preemptive switching and one shared or one-per-client scheduling context.

use std::collections::VecDeque;

use super::Plan;
use crate::model::*;
use crate::sim::{Behavior, Step, StepCx};
use crate::syscall::Syscall;
use crate::timefault::FaultAction;

fn sys(c: Syscall) -> Step {
    Step::Syscall(c)
}

/// Cooperative, shared context. Clients yield by calling the scheduler,
/// which stashes the caller's reply capability and replies to the next one.
pub struct CoopShared {
    ep: EpId,
    clients: usize,
    plan: Plan,
}

impl CoopShared {
    pub fn new(ep: EpId, clients: usize) -> Self {
        CoopShared { ep, clients, plan: VecDeque::new() }
    }
}

impl Behavior for CoopShared {
    fn next_step(&mut self, cx: &mut StepCx<'_>) -> Step {
        let msg = cx.take_mailbox();
        if let Some(s) = self.plan.pop_front() {
            return s;
        }
        if let Some(Message::Ipc { badge, .. }) = msg {
            let prev = badge as u32;
            let next = (prev + 1) % self.clients as u32;
            self.plan.push_back(sys(Syscall::SwapCaller { a: ReplySlot::Caller, b: ReplySlot::Saved(prev) }));
            self.plan.push_back(sys(Syscall::SwapCaller { a: ReplySlot::Caller, b: ReplySlot::Saved(next) }));
            self.plan.push_back(sys(Syscall::ReplyRecv { ep: self.ep, badge: 0 }));
        } else {
            self.plan.push_back(sys(Syscall::Recv { ep: self.ep }));
        }
        self.plan.pop_front().expect("plan is not empty")
    }
}

/// Cooperative, one context per client. Runs below the clients, so it gets
/// the processor only once every client waits on its notification.
pub struct CoopPerSc {
    ntfns: Vec<NtfnId>,
    scs: Vec<ScId>,
    next: usize,
    plan: Plan,
}

impl CoopPerSc {
    pub fn new(ntfns: Vec<NtfnId>, scs: Vec<ScId>) -> Self {
        CoopPerSc { ntfns, scs, next: 0, plan: VecDeque::new() }
    }
}

impl Behavior for CoopPerSc {
    fn next_step(&mut self, cx: &mut StepCx<'_>) -> Step {
        cx.take_mailbox();
        if let Some(s) = self.plan.pop_front() {
            return s;
        }
        let t = self.next;
        self.next = (t + 1) % self.scs.len();
        self.plan.push_back(sys(Syscall::YieldTo { sc: self.scs[t] }));
        sys(Syscall::Signal { ntfn: self.ntfns[t] })
    }
}

/// Preemptive, shared context. On every timer tick the shared context is
/// moved from the previous client to the next.
pub struct PreemptShared {
    timer: NtfnId,
    shared: ScId,
    clients: Vec<ThreadId>,
    quantum: Time,
    prev: usize,
    plan: Plan,
    started: bool,
}

impl PreemptShared {
    pub fn new(timer: NtfnId, shared: ScId, clients: Vec<ThreadId>, quantum: Time) -> Self {
        PreemptShared { timer, shared, clients, quantum, prev: 0, plan: VecDeque::new(), started: false }
    }
}

impl Behavior for PreemptShared {
    fn next_step(&mut self, cx: &mut StepCx<'_>) -> Step {
        cx.take_mailbox();
        if let Some(s) = self.plan.pop_front() {
            return s;
        }
        if self.started {
            let t = (self.prev + 1) % self.clients.len();
            self.prev = t;
            self.plan.push_back(sys(Syscall::Unbind { sc: self.shared }));
            self.plan.push_back(sys(Syscall::Bind { sc: self.shared, thread: self.clients[t] }));
        }
        self.started = true;
        self.plan.push_back(Step::ProgramTimer { ntfn: self.timer, at: cx.now + self.quantum });
        self.plan.push_back(sys(Syscall::Wait { ntfn: self.timer }));
        self.plan.pop_front().expect("plan is not empty")
    }
}

/// Preemptive, one context per client. Each client's budget is one quantum;
/// its timeout fault hands control to the scheduler, which lets the faulting
/// client wait for its refill and yields to the next.
pub struct PreemptPerSc {
    ep: EpId,
    clients: Vec<ThreadId>,
    scs: Vec<ScId>,
    plan: Plan,
}

impl PreemptPerSc {
    pub fn new(ep: EpId, clients: Vec<ThreadId>, scs: Vec<ScId>) -> Self {
        PreemptPerSc { ep, clients, scs, plan: VecDeque::new() }
    }
}

impl Behavior for PreemptPerSc {
    fn next_step(&mut self, cx: &mut StepCx<'_>) -> Step {
        let msg = cx.take_mailbox();
        if let Some(s) = self.plan.pop_front() {
            return s;
        }
        if let Some(Message::Fault(f)) = msg {
            self.plan.push_back(sys(Syscall::FaultReply { action: FaultAction::ExtendBudget(0) }));
            if let Some(i) = self.clients.iter().position(|&c| c == f.faulting_thread) {
                let t = (i + 1) % self.clients.len();
                self.plan.push_back(sys(Syscall::YieldTo { sc: self.scs[t] }));
            }
        }
        self.plan.push_back(sys(Syscall::Recv { ep: self.ep }));
        self.plan.pop_front().expect("plan is not empty")
    }
}
