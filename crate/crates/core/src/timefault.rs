//! Timeout faults: delivery to a handler endpoint and the handler's
//! recovery actions.

use serde::{Deserialize, Serialize};

use crate::kernel::Kernel;
use crate::model::*;
use crate::trace::{Category, ObjRef};

/// What a timeout handler does with a faulted thread.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultAction {
    /// Add time to the faulting SC's current budget and resume the thread.
    ExtendBudget(Time),
    /// Restore a user context (the last committed checkpoint if `None`),
    /// abort any client being served, and return to receiving.
    RollbackAndReset { checkpoint: Option<Checkpoint> },
    /// Suspend the owner of the SC in use and resume the faulting thread.
    SuspendOwner,
    /// Switch the system criticality level and resume the faulting thread.
    RaiseSystemCriticality(u32),
}

impl Kernel {
    /// Block `t` on a timeout fault and deliver the fault to its handler.
    pub(crate) fn raise_timeout(&mut self, t: ThreadId, reason: FaultReason) {
        let ep = self.threads[t.index()].timeout_handler.expect("timeout fault without handler");
        self.remove_from_sched(t);
        let sc = self.threads[t.index()].current_sc;
        let fault = TimeoutFault {
            faulting_thread: t,
            sc_in_use: sc,
            sc_owner: sc.and_then(|s| self.scs[s.index()].home_thread),
            reason,
            timestamp: self.clock,
        };
        let th = &mut self.threads[t.index()];
        th.state = ThreadState::BlockedOnFault;
        th.fault = Some(fault);
        let reason_s = match reason {
            FaultReason::BudgetExpired => "budget",
            FaultReason::CriticalitySwitch => "criticality",
        };
        self.record(Category::TimeoutFault, ObjRef::Thread(t), Some(ObjRef::Ep(ep)), format!("reason={reason_s}"));
        let waiter = self.endpoints[ep.index()]
            .queue
            .iter()
            .enumerate()
            .filter(|(_, p)| p.direction() == Direction::Recv)
            .max_by(|(_, a), (_, b)| self.eff(a.thread).cmp(&self.eff(b.thread)).then(b.seq.cmp(&a.seq)))
            .map(|(i, _)| i);
        match waiter {
            Some(i) => {
                let h = self.endpoints[ep.index()].queue.remove(i).thread;
                let th = &mut self.threads[h.index()];
                th.mailbox = Some(Message::Fault(fault));
                th.reply_slot = Some(ReplyCap { caller: t, donated_sc: None, kind: ReplyKind::Fault });
                self.make_runnable(h);
            }
            None => {
                let seq = self.ep_seq;
                self.ep_seq += 1;
                self.endpoints[ep.index()].queue.push(Pending { thread: t, kind: PendingKind::Fault, badge: 0, seq });
            }
        }
    }

    fn resume_faulted(&mut self, t: ThreadId) {
        if self.threads[t.index()].state == ThreadState::BlockedOnFault {
            self.threads[t.index()].state = ThreadState::NoSchedContext;
            self.make_runnable(t);
        }
    }

    /// Answer the timeout fault whose reply capability is in `handler`'s
    /// reply slot.
    pub fn handler_reply(&mut self, handler: ThreadId, action: FaultAction) -> KernelResult<()> {
        let faulter = match &self.threads[handler.index()].reply_slot {
            Some(c) if c.kind == ReplyKind::Fault => c.caller,
            _ => return Err(KernelError::NoFault),
        };
        let sc = self.threads[faulter.index()].current_sc;
        match &action {
            FaultAction::ExtendBudget(x) => {
                if let Some(sc) = sc {
                    let s = &self.scs[sc.index()];
                    let avail = self.prospective_budget(sc);
                    if avail + x > s.period {
                        return Err(KernelError::BadParams);
                    }
                }
            }
            FaultAction::RaiseSystemCriticality(l) => {
                self.authority.require(handler, Authority::SchedControl)?;
                if *l >= self.cfg.crit_levels {
                    return Err(KernelError::BadLevel);
                }
            }
            _ => {}
        }
        self.threads[handler.index()].reply_slot = None;
        let fault = self.threads[faulter.index()].fault.take();
        let detail = match &action {
            FaultAction::ExtendBudget(x) => format!("action=extend;amount={x}"),
            FaultAction::RollbackAndReset { .. } => "action=rollback".to_string(),
            FaultAction::SuspendOwner => "action=suspend-owner".to_string(),
            FaultAction::RaiseSystemCriticality(l) => format!("action=raise;level={l}"),
        };
        self.record(Category::FaultReply, ObjRef::Thread(handler), Some(ObjRef::Thread(faulter)), detail);
        match action {
            FaultAction::ExtendBudget(x) => {
                if let Some(sc) = sc {
                    if self.current_sc == Some(sc) {
                        self.commit();
                    }
                    self.refresh_if_elapsed(sc);
                    let s = &mut self.scs[sc.index()];
                    s.remaining += x;
                    s.budget = s.budget.max(s.remaining);
                }
                self.resume_faulted(faulter);
            }
            FaultAction::RollbackAndReset { checkpoint } => {
                self.abort_pending_reply(faulter);
                let user = &mut self.threads[faulter.index()].user;
                let cp = checkpoint.or_else(|| user.checkpoint.clone()).unwrap_or_default();
                user.pc = cp.pc;
                user.regs = cp.regs;
                user.rollbacks += 1;
                self.threads[faulter.index()].state = ThreadState::NoSchedContext;
                match self.threads[faulter.index()].last_recv_ep {
                    Some(ep) => self.do_recv(faulter, ep),
                    None => self.make_runnable(faulter),
                }
            }
            FaultAction::SuspendOwner => {
                if let Some(owner) = fault.and_then(|f| f.sc_owner) {
                    if owner != faulter {
                        self.do_suspend(owner);
                    }
                }
                self.resume_faulted(faulter);
            }
            FaultAction::RaiseSystemCriticality(l) => {
                self.resume_faulted(faulter);
                self.do_set_system_criticality(l)?;
            }
        }
        Ok(())
    }
}
