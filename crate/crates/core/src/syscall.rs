//! System-call interface used by the simulation engine: every call enters the
//! kernel, enforces budget, runs the operation, and schedules on exit.

use serde::{Deserialize, Serialize};

use crate::kernel::Kernel;
use crate::model::*;
use crate::timefault::FaultAction;
use crate::trace::{Category, ObjRef};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Syscall {
    Call { ep: EpId, badge: u64, donate: bool },
    Send { ep: EpId, badge: u64 },
    NbSend { ep: EpId, badge: u64 },
    Recv { ep: EpId },
    Reply { badge: u64 },
    ReplyRecv { ep: EpId, badge: u64 },
    NbSendWait { send: EpId, recv: EpId, badge: u64 },
    Signal { ntfn: NtfnId },
    Wait { ntfn: NtfnId },
    SignalRecv { ntfn: NtfnId, ep: EpId },
    SignalWait { signal: NtfnId, wait: NtfnId },
    Yield { sc: ScId },
    YieldTo { sc: ScId },
    Consume { sc: ScId },
    Configure { sc: ScId, budget: Time, period: Time, data: u64 },
    Bind { sc: ScId, thread: ThreadId },
    Unbind { sc: ScId },
    SetPriority { thread: ThreadId, priority: u32 },
    SetCriticality { thread: ThreadId, criticality: u32 },
    SetSystemCriticality { level: u32 },
    SaveCaller { target: ThreadId, slot: u32 },
    SetCaller { slot: u32 },
    SwapCaller { a: ReplySlot, b: ReplySlot },
    FaultReply { action: FaultAction },
    Suspend { thread: ThreadId },
    Resume { thread: ThreadId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyscallOutcome {
    /// The call completed (the caller may now be blocked).
    Done,
    /// The caller's budget was exhausted on entry; it must reissue the call
    /// once it runs again.
    Restart,
}

impl Kernel {
    /// Execute `call` on behalf of the current thread at time `now`.
    pub fn syscall(&mut self, now: Time, call: Syscall) -> SyscallOutcome {
        let actor = self.current.expect("syscall with no running thread");
        if !self.kernel_entry(now) {
            let own_yield = matches!(call, Syscall::Yield { sc } if self.threads[actor.index()].current_sc == Some(sc));
            if !own_yield {
                self.expire_current();
                self.schedule();
                return SyscallOutcome::Restart;
            }
        }
        match self.dispatch(actor, call) {
            Ok(Some(v)) => self.threads[actor.index()].mailbox = Some(Message::Value(v)),
            Ok(None) => {}
            Err(e) => {
                self.threads[actor.index()].mailbox = Some(Message::Error(e));
                self.record(Category::SyscallError, ObjRef::Thread(actor), None, format!("error={e:?}"));
            }
        }
        self.schedule();
        SyscallOutcome::Done
    }

    fn dispatch(&mut self, a: ThreadId, call: Syscall) -> KernelResult<Option<u64>> {
        use Syscall::*;
        match call {
            Call { ep, badge, donate } => self.call(a, ep, badge, donate)?,
            Send { ep, badge } => self.send(a, ep, badge, true)?,
            NbSend { ep, badge } => self.send(a, ep, badge, false)?,
            Recv { ep } => self.recv(a, ep)?,
            Reply { badge } => self.reply(a, badge)?,
            ReplyRecv { ep, badge } => self.reply_recv(a, ep, badge)?,
            NbSendWait { send, recv, badge } => self.nbsend_wait(a, send, recv, badge)?,
            Signal { ntfn } => self.signal(a, ntfn)?,
            Wait { ntfn } => self.wait(a, ntfn)?,
            SignalRecv { ntfn, ep } => self.signal_recv(a, ntfn, ep)?,
            SignalWait { signal, wait } => self.signal_wait(a, signal, wait)?,
            Yield { sc } => self.sc_yield(a, sc)?,
            YieldTo { sc } => return self.sc_yield_to(a, sc).map(Some),
            Consume { sc } => return self.sc_consume(a, sc).map(Some),
            Configure { sc, budget, period, data } => self.sc_configure(a, sc, budget, period, data)?,
            Bind { sc, thread } => self.bind_sc(a, sc, thread)?,
            Unbind { sc } => self.unbind_sc(a, sc)?,
            SetPriority { thread, priority } => self.set_priority(a, thread, priority)?,
            SetCriticality { thread, criticality } => self.set_criticality(a, thread, criticality)?,
            SetSystemCriticality { level } => {
                return self.set_system_criticality(a, level).map(|r| Some(r.boost_count as u64))
            }
            SaveCaller { target, slot } => self.save_caller(a, target, slot)?,
            SetCaller { slot } => self.set_caller(a, slot)?,
            SwapCaller { a: x, b: y } => self.swap_caller(a, x, y)?,
            FaultReply { action } => self.handler_reply(a, action)?,
            Suspend { thread } => self.suspend(a, thread)?,
            Resume { thread } => self.resume(a, thread)?,
        }
        Ok(None)
    }
}
