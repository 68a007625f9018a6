//! Kernel state and the object-management operations: binding scheduling
//! contexts, priority and criticality changes, suspension, and the debug
//! invariant checker run after every simulation event.

use std::collections::BTreeMap;

use crate::crit::CriticalityState;
use crate::model::*;
use crate::sched::{ReadyQueues, ReleaseQueue};
use crate::trace::{Category, ObjRef, OpLedger, TraceRecord};

#[derive(Debug)]
pub struct Kernel {
    pub(crate) cfg: KernelConfig,
    /// Timestamp of the current (or most recent) kernel entry.
    pub(crate) clock: Time,
    /// Time up to which the running SC has been charged. Rolled back
    /// entries leave it behind `clock`.
    pub(crate) charge_point: Time,
    pub(crate) threads: Vec<Thread>,
    pub(crate) scs: Vec<SchedContext>,
    pub(crate) endpoints: Vec<Endpoint>,
    pub(crate) ntfns: Vec<Notification>,
    pub(crate) authority: AuthorityTable,
    pub(crate) ready: ReadyQueues,
    pub(crate) release: ReleaseQueue,
    pub(crate) crit: CriticalityState,
    pub(crate) current: Option<ThreadId>,
    /// SC being charged since `charge_point`.
    pub(crate) current_sc: Option<ScId>,
    pub(crate) timer_deadline: Option<Time>,
    pub(crate) idle_time: Time,
    pub(crate) ledger: OpLedger,
    pub(crate) trace: Vec<TraceRecord>,
    pub(crate) saved: BTreeMap<(ThreadId, u32), ReplyCap>,
    pub(crate) ep_seq: u64,
    pub(crate) last_dispatched: Option<ThreadId>,
}

impl Kernel {
    pub fn new(cfg: KernelConfig) -> KernelResult<Self> {
        cfg.validate()?;
        Ok(Kernel {
            cfg,
            clock: 0,
            charge_point: 0,
            threads: Vec::new(),
            scs: Vec::new(),
            endpoints: Vec::new(),
            ntfns: Vec::new(),
            authority: AuthorityTable::default(),
            ready: ReadyQueues::new(cfg.num_effective_priorities()),
            release: ReleaseQueue::default(),
            crit: CriticalityState::new(cfg.crit_levels),
            current: None,
            current_sc: None,
            timer_deadline: None,
            idle_time: 0,
            ledger: OpLedger::default(),
            trace: Vec::new(),
            saved: BTreeMap::new(),
            ep_seq: 0,
            last_dispatched: None,
        })
    }

    // ---- accessors ----

    pub fn config(&self) -> &KernelConfig {
        &self.cfg
    }

    pub fn clock(&self) -> Time {
        self.clock
    }

    /// Time since the running SC was last charged.
    pub fn consumed_since_entry(&self) -> Time {
        self.clock - self.charge_point
    }

    pub fn thread(&self, t: ThreadId) -> &Thread {
        &self.threads[t.index()]
    }

    pub fn sc(&self, sc: ScId) -> &SchedContext {
        &self.scs[sc.index()]
    }

    pub fn endpoint(&self, ep: EpId) -> &Endpoint {
        &self.endpoints[ep.index()]
    }

    pub fn notification(&self, n: NtfnId) -> &Notification {
        &self.ntfns[n.index()]
    }

    pub fn threads(&self) -> &[Thread] {
        &self.threads
    }

    pub fn scheduling_contexts(&self) -> &[SchedContext] {
        &self.scs
    }

    pub fn current(&self) -> Option<ThreadId> {
        self.current
    }

    pub fn current_sc(&self) -> Option<ScId> {
        self.current_sc
    }

    pub fn timer_deadline(&self) -> Option<Time> {
        self.timer_deadline
    }

    pub fn idle_time(&self) -> Time {
        self.idle_time
    }

    pub fn ledger(&self) -> &OpLedger {
        &self.ledger
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.trace)
    }

    pub fn ready_queues(&self) -> &ReadyQueues {
        &self.ready
    }

    pub fn release_queue(&self) -> &ReleaseQueue {
        &self.release
    }

    pub fn system_criticality(&self) -> u32 {
        self.crit.level
    }

    pub fn criticality_state(&self) -> &CriticalityState {
        &self.crit
    }

    pub fn authority(&self) -> &AuthorityTable {
        &self.authority
    }

    pub fn saved_reply(&self, holder: ThreadId, slot: u32) -> Option<&ReplyCap> {
        self.saved.get(&(holder, slot))
    }

    pub fn take_mailbox(&mut self, t: ThreadId) -> Option<Message> {
        self.threads[t.index()].mailbox.take()
    }

    pub fn user_context_mut(&mut self, t: ThreadId) -> &mut UserContext {
        &mut self.threads[t.index()].user
    }

    /// Remaining budget of `sc`, net of time not yet charged to it.
    pub fn sc_available(&self, sc: ScId) -> Time {
        let s = &self.scs[sc.index()];
        if self.current_sc == Some(sc) {
            s.remaining.saturating_sub(self.clock - self.charge_point)
        } else {
            s.remaining
        }
    }

    /// Total time charged to `sc` including the uncharged tail.
    pub fn sc_charged_total(&self, sc: ScId) -> Time {
        let s = &self.scs[sc.index()];
        let pending = if self.current_sc == Some(sc) { self.clock - self.charge_point } else { 0 };
        s.charged_total + pending
    }

    /// Minimum budget a thread must hold to be admitted to the ready queues.
    pub(crate) fn min_budget(&self) -> Time {
        self.cfg.kernel_wcet.max(1)
    }

    pub(crate) fn eff(&self, t: ThreadId) -> u32 {
        self.threads[t.index()].effective_priority
    }

    pub fn emit(&mut self, rec: TraceRecord) {
        self.trace.push(rec);
    }

    pub(crate) fn record(&mut self, cat: Category, subject: ObjRef, object: Option<ObjRef>, detail: String) {
        let mut r = TraceRecord::new(self.clock, cat).subject(subject).detail(detail);
        r.object = object;
        self.trace.push(r);
    }

    fn check_thread(&self, t: ThreadId) -> KernelResult<()> {
        (t.index() < self.threads.len()).then_some(()).ok_or(KernelError::InvalidObject)
    }

    fn check_sc(&self, sc: ScId) -> KernelResult<()> {
        (sc.index() < self.scs.len()).then_some(()).ok_or(KernelError::InvalidObject)
    }

    pub(crate) fn check_ep(&self, ep: EpId) -> KernelResult<()> {
        (ep.index() < self.endpoints.len()).then_some(()).ok_or(KernelError::InvalidObject)
    }

    pub(crate) fn check_ntfn(&self, n: NtfnId) -> KernelResult<()> {
        (n.index() < self.ntfns.len()).then_some(()).ok_or(KernelError::InvalidObject)
    }

    // ---- boot-time object creation (no authority needed) ----

    /// Create a thread. It starts suspended; call [`Kernel::start`] to make
    /// it eligible to run.
    pub fn create_thread(&mut self, priority: u32, criticality: u32) -> KernelResult<ThreadId> {
        if priority > self.cfg.max_base_priority() {
            return Err(KernelError::BadParams);
        }
        if criticality >= self.cfg.crit_levels {
            return Err(KernelError::BadLevel);
        }
        let id = ThreadId(self.threads.len() as u32);
        let mut th = Thread::new(id, priority, criticality);
        th.state = ThreadState::Suspended;
        self.threads.push(th);
        Ok(id)
    }

    pub fn create_sc(&mut self) -> ScId {
        let id = ScId(self.scs.len() as u32);
        self.scs.push(SchedContext::new(id));
        id
    }

    pub fn create_endpoint(&mut self) -> EpId {
        let id = EpId(self.endpoints.len() as u32);
        self.endpoints.push(Endpoint { id: Some(id), queue: Vec::new() });
        id
    }

    pub fn create_notification(&mut self) -> NtfnId {
        let id = NtfnId(self.ntfns.len() as u32);
        self.ntfns.push(Notification::default());
        id
    }

    pub fn grant(&mut self, holder: ThreadId, kind: Authority) {
        self.authority.grant(holder, kind);
    }

    pub fn set_mcp(&mut self, t: ThreadId, mcp: u32) {
        self.threads[t.index()].mcp = mcp;
    }

    pub fn set_mcc(&mut self, t: ThreadId, mcc: u32) {
        self.threads[t.index()].mcc = mcc;
    }

    pub fn set_timeout_handler(&mut self, t: ThreadId, ep: Option<EpId>) {
        self.threads[t.index()].timeout_handler = ep;
    }

    pub fn bind_notification(&mut self, n: NtfnId, t: ThreadId) {
        self.ntfns[n.index()].bound_thread = Some(t);
        self.threads[t.index()].bound_ntfn = Some(n);
    }

    /// Boot-time SC configuration, bypassing the `sched_control` check.
    pub fn setup_configure(&mut self, sc: ScId, budget: Time, period: Time) -> KernelResult<()> {
        self.do_configure(sc, budget, period, 0)
    }

    /// Boot-time binding, bypassing capability checks.
    pub fn setup_bind(&mut self, sc: ScId, t: ThreadId) -> KernelResult<()> {
        self.do_bind(sc, t)
    }

    /// Make a suspended thread eligible to run.
    pub fn start(&mut self, t: ThreadId) {
        self.do_resume(t);
    }

    /// Place `client` as if it had already called into `holder` while
    /// running on `sc`: the client blocks on reply and the reply capability,
    /// carrying `sc` as its donation, is stored in `holder`'s slot `slot`.
    /// Used to seed cooperative shared-SC schedulers at boot.
    pub fn setup_blocked_caller(&mut self, client: ThreadId, holder: ThreadId, slot: u32, sc: ScId) {
        self.leave_suspended(client);
        self.remove_from_sched(client);
        self.threads[client.index()].state = ThreadState::BlockedOnReply;
        self.saved.insert(
            (holder, slot),
            ReplyCap { caller: client, donated_sc: Some(sc), kind: ReplyKind::Ipc },
        );
    }

    /// Start `t` already blocked receiving on `ep`.
    pub fn setup_recv(&mut self, t: ThreadId, ep: EpId) {
        self.leave_suspended(t);
        self.threads[t.index()].state = ThreadState::NoSchedContext;
        self.remove_from_sched(t);
        self.do_recv(t, ep);
    }

    // ---- internal helpers ----

    fn leave_suspended(&mut self, t: ThreadId) {
        if self.threads[t.index()].state == ThreadState::Suspended {
            let crit = self.threads[t.index()].criticality;
            self.crit.insert(t, crit);
            self.recompute_effective(t);
        }
    }

    /// Take `t` out of the ready or release queue, or off the CPU.
    pub(crate) fn remove_from_sched(&mut self, t: ThreadId) {
        if self.current == Some(t) {
            self.commit();
            self.current = None;
        }
        let eff = self.eff(t);
        if self.ready.remove(t, eff) {
            self.ledger.ready_queue_ops += 1;
        }
        if self.release.remove(t) {
            self.ledger.release_queue_ops += 1;
        }
    }

    /// Block `t` in `state`.
    pub(crate) fn block(&mut self, t: ThreadId, state: ThreadState) {
        self.remove_from_sched(t);
        self.threads[t.index()].state = state;
    }

    /// Charge the running SC (or idle) for time since the last charge.
    pub(crate) fn commit(&mut self) {
        let used = self.clock - self.charge_point;
        match self.current_sc {
            Some(sc) => {
                let s = &mut self.scs[sc.index()];
                s.remaining = s.remaining.saturating_sub(used);
                s.consumed += used;
                s.charged_total += used;
            }
            None => self.idle_time += used,
        }
        self.charge_point = self.clock;
    }

    /// Full budget refill; the new period starts at the current time.
    pub(crate) fn replenish(&mut self, sc: ScId) {
        if self.current_sc == Some(sc) {
            self.commit();
        }
        let clock = self.clock;
        let s = &mut self.scs[sc.index()];
        s.remaining = s.budget;
        s.next_refill = clock + s.period;
    }

    /// Refill `sc` if its period has elapsed.
    pub(crate) fn refresh_if_elapsed(&mut self, sc: ScId) {
        if self.scs[sc.index()].next_refill <= self.clock {
            self.replenish(sc);
        }
    }

    /// Budget `sc` would have if it were activated now.
    pub(crate) fn prospective_budget(&self, sc: ScId) -> Time {
        let s = &self.scs[sc.index()];
        if s.next_refill <= self.clock {
            s.budget
        } else {
            self.sc_available(sc)
        }
    }

    /// Put a thread that is not running and not blocked where it belongs:
    /// the ready queue, the release queue, or nowhere if it has no SC.
    pub(crate) fn make_runnable(&mut self, t: ThreadId) {
        if self.threads[t.index()].state == ThreadState::Suspended {
            return;
        }
        self.remove_from_sched(t);
        match self.threads[t.index()].current_sc {
            None => self.threads[t.index()].state = ThreadState::NoSchedContext,
            Some(sc) => {
                self.refresh_if_elapsed(sc);
                if self.sc_available(sc) >= self.min_budget() {
                    self.threads[t.index()].state = ThreadState::Ready;
                    let eff = self.eff(t);
                    self.ready.push_back(t, eff);
                    self.ledger.ready_queue_ops += 1;
                } else {
                    self.threads[t.index()].state = ThreadState::OutOfBudget;
                    let at = self.scs[sc.index()].next_refill;
                    self.release.insert(t, at);
                    self.ledger.release_queue_ops += 1;
                }
            }
        }
    }

    /// Settle a thread after an IPC delivered to it: it keeps the CPU if it is
    /// the current thread and still holds an SC, otherwise it is requeued.
    pub(crate) fn settle(&mut self, t: ThreadId) {
        if self.current == Some(t) {
            if self.threads[t.index()].current_sc.is_none() {
                self.current = None;
                self.threads[t.index()].state = ThreadState::NoSchedContext;
            }
        } else {
            self.make_runnable(t);
        }
    }

    /// Move `sc` from whatever thread holds it to `to`.
    pub(crate) fn attach_sc(&mut self, sc: ScId, to: ThreadId) {
        if let Some(holder) = self.scs[sc.index()].running_thread {
            if holder != to {
                self.threads[holder.index()].current_sc = None;
                let st = self.threads[holder.index()].state;
                if matches!(st, ThreadState::Ready | ThreadState::OutOfBudget) {
                    self.remove_from_sched(holder);
                    self.threads[holder.index()].state = ThreadState::NoSchedContext;
                }
            }
        }
        if let Some(old) = self.threads[to.index()].current_sc {
            if old != sc {
                self.scs[old.index()].running_thread = None;
            }
        }
        self.threads[to.index()].current_sc = Some(sc);
        self.scs[sc.index()].running_thread = Some(to);
    }

    pub(crate) fn set_effective(&mut self, t: ThreadId, new_eff: u32) {
        let old = self.eff(t);
        if old == new_eff {
            return;
        }
        let was_ready = self.ready.remove(t, old);
        self.threads[t.index()].effective_priority = new_eff;
        if was_ready {
            self.ready.push_back(t, new_eff);
            self.ledger.ready_queue_ops += 2;
        }
    }

    fn recompute_effective(&mut self, t: ThreadId) {
        let th = &self.threads[t.index()];
        let eff = self.cfg.effective_priority(th.base_priority, th.criticality, self.crit.level);
        self.set_effective(t, eff);
    }

    // ---- object operations ----

    pub(crate) fn do_bind(&mut self, sc: ScId, t: ThreadId) -> KernelResult<()> {
        self.check_sc(sc)?;
        self.check_thread(t)?;
        if self.scs[sc.index()].home_thread.is_some() || self.threads[t.index()].home_sc.is_some() {
            return Err(KernelError::AlreadyBound);
        }
        self.scs[sc.index()].home_thread = Some(t);
        self.threads[t.index()].home_sc = Some(sc);
        if self.scs[sc.index()].running_thread.is_none() && self.threads[t.index()].current_sc.is_none() {
            self.attach_sc(sc, t);
            if self.threads[t.index()].state == ThreadState::NoSchedContext {
                self.make_runnable(t);
            }
        }
        Ok(())
    }

    /// Bind `sc` to `thread` as its home SC.
    pub fn bind_sc(&mut self, actor: ThreadId, sc: ScId, thread: ThreadId) -> KernelResult<()> {
        self.check_sc(sc)?;
        self.check_thread(thread)?;
        self.authority.require(actor, Authority::ScCap(sc))?;
        self.authority.require(actor, Authority::TcbCap(thread))?;
        self.do_bind(sc, thread)
    }

    /// Remove `sc`'s home binding. If the home thread is running on it, the
    /// thread loses the SC and stops being schedulable; an SC currently lent
    /// to another thread stays with that thread.
    pub fn unbind_sc(&mut self, actor: ThreadId, sc: ScId) -> KernelResult<()> {
        self.check_sc(sc)?;
        self.authority.require(actor, Authority::ScCap(sc))?;
        let home = self.scs[sc.index()].home_thread.ok_or(KernelError::NotBound)?;
        self.scs[sc.index()].home_thread = None;
        self.threads[home.index()].home_sc = None;
        if self.scs[sc.index()].running_thread == Some(home) {
            let st = self.threads[home.index()].state;
            let runnable = matches!(st, ThreadState::Running | ThreadState::Ready | ThreadState::OutOfBudget);
            if runnable {
                self.remove_from_sched(home);
                self.threads[home.index()].state = ThreadState::NoSchedContext;
            }
            self.threads[home.index()].current_sc = None;
            self.scs[sc.index()].running_thread = None;
        }
        Ok(())
    }

    /// Set `target`'s base priority. Only values up to the actor's MCP are
    /// allowed.
    pub fn set_priority(&mut self, actor: ThreadId, target: ThreadId, prio: u32) -> KernelResult<()> {
        self.check_thread(target)?;
        self.authority.require(actor, Authority::TcbCap(target))?;
        if prio > self.threads[actor.index()].mcp {
            return Err(KernelError::ExceedsMcp);
        }
        if prio > self.cfg.max_base_priority() {
            return Err(KernelError::BadParams);
        }
        self.threads[target.index()].base_priority = prio;
        self.recompute_effective(target);
        Ok(())
    }

    /// Set `target`'s criticality, bounded by the actor's MCC.
    pub fn set_criticality(&mut self, actor: ThreadId, target: ThreadId, crit: u32) -> KernelResult<()> {
        self.check_thread(target)?;
        self.authority.require(actor, Authority::TcbCap(target))?;
        if crit >= self.cfg.crit_levels {
            return Err(KernelError::BadLevel);
        }
        if crit > self.threads[actor.index()].mcc {
            return Err(KernelError::ExceedsMcc);
        }
        let old = self.threads[target.index()].criticality;
        if old == crit {
            return Ok(());
        }
        if self.threads[target.index()].state != ThreadState::Suspended {
            self.crit.remove(target, old);
            self.crit.insert(target, crit);
        }
        self.threads[target.index()].criticality = crit;
        self.recompute_effective(target);
        Ok(())
    }

    pub(crate) fn do_suspend(&mut self, t: ThreadId) {
        if self.threads[t.index()].state == ThreadState::Suspended {
            return;
        }
        self.remove_from_sched(t);
        match self.threads[t.index()].state {
            ThreadState::BlockedSend(ep) | ThreadState::BlockedRecv(ep) => {
                self.endpoints[ep.index()].remove(t);
            }
            ThreadState::WaitingNotification(n) => {
                self.ntfns[n.index()].waiter = None;
            }
            ThreadState::BlockedOnFault => {
                if let Some(ep) = self.threads[t.index()].timeout_handler {
                    self.endpoints[ep.index()].remove(t);
                }
            }
            _ => {}
        }
        let crit = self.threads[t.index()].criticality;
        self.crit.remove(t, crit);
        self.threads[t.index()].state = ThreadState::Suspended;
    }

    pub(crate) fn do_resume(&mut self, t: ThreadId) {
        if self.threads[t.index()].state != ThreadState::Suspended {
            return;
        }
        let crit = self.threads[t.index()].criticality;
        self.crit.insert(t, crit);
        self.recompute_effective(t);
        self.threads[t.index()].state = ThreadState::NoSchedContext;
        self.make_runnable(t);
    }

    pub fn suspend(&mut self, actor: ThreadId, target: ThreadId) -> KernelResult<()> {
        self.check_thread(target)?;
        self.authority.require(actor, Authority::TcbCap(target))?;
        self.do_suspend(target);
        Ok(())
    }

    pub fn resume(&mut self, actor: ThreadId, target: ThreadId) -> KernelResult<()> {
        self.check_thread(target)?;
        self.authority.require(actor, Authority::TcbCap(target))?;
        self.do_resume(target);
        Ok(())
    }

    // ---- invariants ----

    /// Check the structural invariants of the kernel state.
    pub fn check_invariants(&self) -> Result<(), String> {
        let min = self.min_budget();
        let mut running = 0;
        for sc in &self.scs {
            if sc.remaining > sc.budget {
                return Err(format!("{}: remaining {} > budget {}", sc.id, sc.remaining, sc.budget));
            }
            if let Some(t) = sc.running_thread {
                if self.threads[t.index()].current_sc != Some(sc.id) {
                    return Err(format!("{} runs {} but the thread does not point back", sc.id, t));
                }
            }
            if let Some(h) = sc.home_thread {
                if self.threads[h.index()].home_sc != Some(sc.id) {
                    return Err(format!("{} home {} mismatch", sc.id, h));
                }
            }
        }
        for th in &self.threads {
            if let Some(sc) = th.current_sc {
                if self.scs[sc.index()].running_thread != Some(th.id) {
                    return Err(format!("{} uses {} but the SC does not point back", th.id, sc));
                }
            }
            let in_ready = self.ready.contains(th.id);
            let in_release = self.release.contains(th.id);
            match th.state {
                ThreadState::Running => {
                    running += 1;
                    if self.current != Some(th.id) || in_ready || in_release {
                        return Err(format!("{} running but not current or still queued", th.id));
                    }
                    if th.current_sc.is_none() {
                        return Err(format!("{} running without an SC", th.id));
                    }
                }
                ThreadState::Ready => {
                    if !in_ready || in_release {
                        return Err(format!("{} ready but not in ready queue", th.id));
                    }
                    if !self.ready.queue(th.effective_priority).contains(&th.id) {
                        return Err(format!("{} queued at wrong priority", th.id));
                    }
                    let sc = th.current_sc.ok_or_else(|| format!("{} ready without SC", th.id))?;
                    if self.sc_available(sc) < min {
                        return Err(format!("{} ready with less than kernel WCET budget", th.id));
                    }
                }
                ThreadState::OutOfBudget => {
                    if !in_release || in_ready {
                        return Err(format!("{} out of budget but not in release queue", th.id));
                    }
                }
                _ => {
                    if in_ready || in_release {
                        return Err(format!("{} in {:?} but queued", th.id, th.state));
                    }
                }
            }
            let cfg_eff = self.cfg.effective_priority(th.base_priority, th.criticality, self.crit.level);
            // Suspended threads sit outside the criticality lists and are refreshed on resume.
            if th.state != ThreadState::Suspended && th.effective_priority != cfg_eff {
                return Err(format!("{} effective priority {} != {}", th.id, th.effective_priority, cfg_eff));
            }
            let in_crit = self.crit.count_of(th.id);
            let expected = usize::from(th.state != ThreadState::Suspended);
            if in_crit != expected || (expected == 1 && !self.crit.queue(th.criticality).contains(&th.id)) {
                return Err(format!("{} criticality queue membership wrong", th.id));
            }
        }
        if running > 1 {
            return Err("more than one running thread".into());
        }
        if let Some(c) = self.current {
            if self.threads[c.index()].state != ThreadState::Running {
                return Err(format!("current {} not in Running state", c));
            }
            if self.current_sc != self.threads[c.index()].current_sc {
                return Err("charged SC differs from current thread's SC".into());
            }
        }
        for p in 0..self.ready.levels() {
            if self.ready.occupied(p) == self.ready.queue(p).is_empty() {
                return Err(format!("occupancy bit {p} inconsistent"));
            }
        }
        for ep in &self.endpoints {
            if let Some(d) = ep.direction() {
                if ep.queue.iter().any(|p| p.direction() != d) {
                    return Err("endpoint queue mixes directions".into());
                }
            }
        }
        for n in &self.ntfns {
            if n.waiter.is_some() && n.word {
                return Err("notification has waiter while word is set".into());
            }
        }
        for th in &self.threads {
            let mut seen = vec![th.id];
            let mut cur = th.call_stack_next;
            while let Some(n) = cur {
                if seen.contains(&n) {
                    return Err(format!("call stack cycle through {}", n));
                }
                seen.push(n);
                cur = self.threads[n.index()].call_stack_next;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel() -> Kernel {
        Kernel::new(KernelConfig { priority_bits: 8, crit_levels: 4, kernel_wcet: 1 }).unwrap()
    }

    #[test]
    fn bind_fresh_sc_makes_thread_ready() {
        let mut k = kernel();
        let t = k.create_thread(5, 0).unwrap();
        k.start(t);
        assert_eq!(k.thread(t).state, ThreadState::NoSchedContext);
        let sc = k.create_sc();
        k.setup_configure(sc, 2, 10).unwrap();
        let root = k.create_thread(0, 0).unwrap();
        k.grant(root, Authority::ScCap(sc));
        k.grant(root, Authority::TcbCap(t));
        k.bind_sc(root, sc, t).unwrap();
        assert_eq!(k.thread(t).state, ThreadState::Ready);
        assert!(k.ready_queues().contains(t));
        k.check_invariants().unwrap();
    }

    #[test]
    fn bind_twice_is_already_bound() {
        let mut k = kernel();
        let t = k.create_thread(5, 0).unwrap();
        let a = k.create_sc();
        let b = k.create_sc();
        k.setup_bind(a, t).unwrap();
        assert_eq!(k.setup_bind(b, t), Err(KernelError::AlreadyBound));
        let u = k.create_thread(5, 0).unwrap();
        assert_eq!(k.setup_bind(a, u), Err(KernelError::AlreadyBound));
    }

    #[test]
    fn bind_without_authority_fails() {
        let mut k = kernel();
        let t = k.create_thread(5, 0).unwrap();
        let sc = k.create_sc();
        let root = k.create_thread(0, 0).unwrap();
        k.grant(root, Authority::ScCap(sc));
        assert_eq!(k.bind_sc(root, sc, t), Err(KernelError::NoAuthority));
    }

    #[test]
    fn unbind_from_ready_thread_dequeues_it() {
        let mut k = kernel();
        let t = k.create_thread(5, 0).unwrap();
        let sc = k.create_sc();
        k.setup_configure(sc, 2, 10).unwrap();
        k.setup_bind(sc, t).unwrap();
        k.start(t);
        assert!(k.ready_queues().contains(t));
        k.grant(t, Authority::ScCap(sc));
        k.unbind_sc(t, sc).unwrap();
        assert!(!k.ready_queues().contains(t));
        assert_eq!(k.thread(t).state, ThreadState::NoSchedContext);
        assert_eq!(k.unbind_sc(t, sc), Err(KernelError::NotBound));
        k.check_invariants().unwrap();
    }

    #[test]
    fn mcp_bounds_priority_changes() {
        let mut k = kernel();
        let a = k.create_thread(1, 0).unwrap();
        let t = k.create_thread(3, 0).unwrap();
        k.set_mcp(a, 10);
        k.grant(a, Authority::TcbCap(t));
        assert_eq!(k.set_priority(a, t, 10), Ok(()));
        assert_eq!(k.set_priority(a, t, 11), Err(KernelError::ExceedsMcp));
        assert_eq!(k.thread(t).base_priority, 10);
        assert_eq!(k.set_priority(a, t, 2), Ok(()));
    }

    #[test]
    fn mcc_bounds_criticality_changes() {
        let mut k = kernel();
        let a = k.create_thread(1, 0).unwrap();
        let t = k.create_thread(3, 0).unwrap();
        k.start(t);
        k.set_mcc(a, 1);
        k.grant(a, Authority::TcbCap(t));
        k.set_criticality(a, t, 1).unwrap();
        assert!(k.criticality_state().queue(1).contains(&t));
        assert_eq!(k.set_criticality(a, t, 2), Err(KernelError::ExceedsMcc));
        let before = format!("{:?}", k.criticality_state());
        k.set_criticality(a, t, 1).unwrap();
        assert_eq!(before, format!("{:?}", k.criticality_state()));
        k.check_invariants().unwrap();
    }

    #[test]
    fn priority_change_moves_ready_thread() {
        let mut k = kernel();
        let t = k.create_thread(3, 0).unwrap();
        let sc = k.create_sc();
        k.setup_configure(sc, 5, 10).unwrap();
        k.setup_bind(sc, t).unwrap();
        k.start(t);
        k.set_mcp(t, 50);
        k.grant(t, Authority::TcbCap(t));
        k.set_priority(t, t, 40).unwrap();
        assert_eq!(k.ready_queues().highest(), Some(40));
        k.check_invariants().unwrap();
    }
}
