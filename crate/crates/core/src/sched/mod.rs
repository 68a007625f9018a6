//! Kernel entry and exit, budget enforcement, and the scheduling-context
//! operations (configure, yield, yield-to, consume).

mod ready;
mod release;

pub use ready::ReadyQueues;
pub use release::ReleaseQueue;

use crate::kernel::Kernel;
use crate::model::*;
use crate::trace::{Category, ObjRef, TraceRecord};

impl Kernel {
    /// Enter the kernel at time `now`. Returns whether the running SC still
    /// has at least the kernel WCET left.
    pub fn kernel_entry(&mut self, now: Time) -> bool {
        assert!(now >= self.clock, "time went backwards: {now} < {}", self.clock);
        self.clock = now;
        self.ledger.kernel_entries += 1;
        match (self.current, self.current_sc) {
            (Some(_), Some(sc)) => self.sc_available(sc) >= self.min_budget(),
            _ => true,
        }
    }

    /// The running thread's budget is exhausted: stop it and either raise a
    /// timeout fault or park it until its next refill.
    pub(crate) fn expire_current(&mut self) {
        let Some(t) = self.current else { return };
        self.commit();
        self.current = None;
        self.expire(t);
    }

    pub(crate) fn expire(&mut self, t: ThreadId) {
        let sc = self.threads[t.index()].current_sc;
        if self.threads[t.index()].timeout_handler.is_some() {
            self.raise_timeout(t, FaultReason::BudgetExpired);
            return;
        }
        self.remove_from_sched(t);
        self.threads[t.index()].state = ThreadState::OutOfBudget;
        let at = sc.map_or(self.clock, |sc| self.scs[sc.index()].next_refill);
        self.release.insert(t, at);
        self.ledger.release_queue_ops += 1;
        let mut rec = TraceRecord::new(self.clock, Category::Expire).subject(ObjRef::Thread(t));
        if let Some(sc) = sc {
            rec = rec.object(ObjRef::Sc(sc)).detail(format!("refill={at}"));
        }
        self.emit(rec);
    }

    /// Move every thread whose refill time has come back to the ready queue.
    pub(crate) fn release_due(&mut self) {
        while let Some((_, t)) = self.release.pop_due(self.clock) {
            self.ledger.release_queue_ops += 1;
            let sc = self.threads[t.index()].current_sc;
            if let Some(sc) = sc {
                self.replenish(sc);
                self.record(
                    Category::Refill,
                    ObjRef::Thread(t),
                    Some(ObjRef::Sc(sc)),
                    format!("remaining={}", self.scs[sc.index()].remaining),
                );
            }
            self.threads[t.index()].state = ThreadState::NoSchedContext;
            self.make_runnable(t);
        }
    }

    fn take_from_ready(&mut self) -> Option<ThreadId> {
        let t = self.ready.pop_highest()?;
        self.ledger.ready_queue_ops += 1;
        Some(t)
    }

    /// Choose the thread to run, charge the outgoing SC, and program the
    /// timer.
    pub fn schedule(&mut self) {
        self.ledger.scheduler_invocations += 1;
        self.release_due();
        let chosen = match self.current {
            Some(c) if self.threads[c.index()].state == ThreadState::Running => {
                let eff = self.eff(c);
                if self.ready.highest().is_some_and(|p| p > eff) {
                    self.threads[c.index()].state = ThreadState::Ready;
                    self.ready.push_front(c, eff);
                    self.ledger.ready_queue_ops += 1;
                    self.record(Category::Preempt, ObjRef::Thread(c), None, String::new());
                    self.take_from_ready()
                } else {
                    Some(c)
                }
            }
            _ => self.take_from_ready(),
        };
        if let Some(t) = chosen {
            self.threads[t.index()].state = ThreadState::Running;
        }
        self.current = chosen;
        let new_sc = chosen.and_then(|t| self.threads[t.index()].current_sc);
        if new_sc != self.current_sc {
            self.commit();
            self.current_sc = new_sc;
            self.ledger.charges += 1;
        } else if self.charge_point != self.clock {
            self.ledger.rollbacks += 1;
        }
        if let Some(sc) = new_sc {
            self.refresh_if_elapsed(sc);
        }
        if chosen != self.last_dispatched {
            let rec = match chosen {
                Some(t) => {
                    let mut r = TraceRecord::new(self.clock, Category::Dispatch).subject(ObjRef::Thread(t));
                    if let Some(sc) = new_sc {
                        r = r.object(ObjRef::Sc(sc));
                    }
                    r
                }
                None => TraceRecord::new(self.clock, Category::Idle),
            };
            self.emit(rec);
            self.last_dispatched = chosen;
        }
        self.program_timer();
    }

    fn program_timer(&mut self) {
        let budget_end = self.current_sc.filter(|_| self.current.is_some()).map(|sc| {
            self.charge_point + self.scs[sc.index()].remaining
        });
        let deadline = match (budget_end, self.release.next_refill()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        if deadline != self.timer_deadline {
            self.timer_deadline = deadline;
            self.ledger.timer_reprograms += 1;
            if let Some(d) = deadline {
                self.emit(TraceRecord::new(self.clock, Category::TimerProgram).detail(format!("at={d}")));
            }
        }
    }

    /// Handle the kernel timer firing at `now`.
    pub fn timer_tick(&mut self, now: Time) {
        if !self.kernel_entry(now) {
            self.expire_current();
        }
        self.schedule();
    }

    /// Deliver a device interrupt on notification `n` at `now`.
    pub fn interrupt(&mut self, now: Time, n: NtfnId) {
        if !self.kernel_entry(now) {
            self.expire_current();
        }
        self.external_signal(n);
        self.schedule();
    }

    /// The current thread terminates; it is suspended for good.
    pub fn halt_current(&mut self, now: Time) {
        self.kernel_entry(now);
        if let Some(t) = self.current {
            self.do_suspend(t);
        }
        self.schedule();
    }

    /// Bring the clock to `now` and charge outstanding time, without
    /// scheduling. Used at the end of a run so accounting is complete.
    pub fn finish(&mut self, now: Time) {
        assert!(now >= self.clock);
        self.clock = now;
        self.commit();
    }

    /// Configure budget and period of `sc`.
    pub fn sc_configure(&mut self, actor: ThreadId, sc: ScId, budget: Time, period: Time, data: u64) -> KernelResult<()> {
        self.authority.require(actor, Authority::SchedControl)?;
        self.do_configure(sc, budget, period, data)
    }

    pub(crate) fn do_configure(&mut self, sc: ScId, budget: Time, period: Time, data: u64) -> KernelResult<()> {
        if sc.index() >= self.scs.len() {
            return Err(KernelError::InvalidObject);
        }
        if period == 0 || budget > period {
            return Err(KernelError::BadParams);
        }
        if self.current_sc == Some(sc) {
            self.commit();
        }
        let clock = self.clock;
        let s = &mut self.scs[sc.index()];
        s.budget = budget;
        s.period = period;
        s.data = data;
        if s.configured {
            s.remaining = s.remaining.min(budget);
        } else {
            s.configured = true;
            s.remaining = budget;
            s.next_refill = clock + period;
        }
        if let Some(t) = s.running_thread {
            if self.threads[t.index()].state == ThreadState::Ready && self.sc_available(sc) < self.min_budget() {
                self.make_runnable(t);
            }
        }
        Ok(())
    }

    /// Give up the rest of `sc`'s budget for this period.
    pub fn sc_yield(&mut self, actor: ThreadId, sc: ScId) -> KernelResult<()> {
        if sc.index() >= self.scs.len() {
            return Err(KernelError::InvalidObject);
        }
        self.authority.require(actor, Authority::ScCap(sc))?;
        if self.current_sc == Some(sc) {
            self.commit();
        }
        self.scs[sc.index()].remaining = 0;
        if let Some(t) = self.scs[sc.index()].running_thread {
            if matches!(self.threads[t.index()].state, ThreadState::Running | ThreadState::Ready) {
                self.remove_from_sched(t);
                self.threads[t.index()].state = ThreadState::OutOfBudget;
                let at = self.scs[sc.index()].next_refill;
                self.release.insert(t, at);
                self.ledger.release_queue_ops += 1;
            }
        }
        Ok(())
    }

    /// Put the thread running on `sc` at the head of its ready queue. Returns
    /// the time `sc` consumed since the previous enquiry.
    pub fn sc_yield_to(&mut self, actor: ThreadId, sc: ScId) -> KernelResult<Time> {
        if sc.index() >= self.scs.len() {
            return Err(KernelError::InvalidObject);
        }
        self.authority.require(actor, Authority::ScCap(sc))?;
        let t = self.scs[sc.index()].running_thread.ok_or(KernelError::NotBound)?;
        if self.eff(t) > self.threads[actor.index()].mcp {
            return Err(KernelError::ExceedsMcp);
        }
        if self.prospective_budget(sc) < self.min_budget() {
            return Err(KernelError::NoBudget);
        }
        if self.current_sc == Some(sc) {
            self.commit();
        }
        self.refresh_if_elapsed(sc);
        if self.threads[t.index()].state == ThreadState::Ready {
            let eff = self.eff(t);
            self.ready.remove(t, eff);
            self.ready.push_front(t, eff);
            self.ledger.ready_queue_ops += 2;
        }
        let s = &mut self.scs[sc.index()];
        s.yield_from = Some(actor);
        Ok(std::mem::take(&mut s.consumed))
    }

    /// Return and reset the time `sc` consumed since the previous enquiry.
    pub fn sc_consume(&mut self, actor: ThreadId, sc: ScId) -> KernelResult<Time> {
        if sc.index() >= self.scs.len() {
            return Err(KernelError::InvalidObject);
        }
        self.authority.require(actor, Authority::ScCap(sc))?;
        if self.current_sc == Some(sc) {
            self.commit();
        }
        Ok(std::mem::take(&mut self.scs[sc.index()].consumed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(threads: &[(u32, Time, Time)]) -> (Kernel, Vec<ThreadId>, Vec<ScId>) {
        let mut k = Kernel::new(KernelConfig { priority_bits: 8, crit_levels: 2, kernel_wcet: 1 }).unwrap();
        let mut ts = Vec::new();
        let mut scs = Vec::new();
        for &(prio, b, t) in threads {
            let th = k.create_thread(prio, 0).unwrap();
            let sc = k.create_sc();
            k.setup_configure(sc, b, t).unwrap();
            k.setup_bind(sc, th).unwrap();
            k.start(th);
            k.grant(th, Authority::ScCap(sc));
            ts.push(th);
            scs.push(sc);
        }
        k.schedule();
        (k, ts, scs)
    }

    #[test]
    fn highest_priority_runs_and_timer_covers_budget() {
        let (k, ts, _) = setup(&[(1, 5, 10), (3, 2, 10)]);
        assert_eq!(k.current(), Some(ts[1]));
        assert_eq!(k.timer_deadline(), Some(2));
        k.check_invariants().unwrap();
    }

    #[test]
    fn expiry_parks_thread_until_refill() {
        let (mut k, ts, scs) = setup(&[(1, 5, 10), (3, 2, 10)]);
        k.timer_tick(2);
        assert_eq!(k.current(), Some(ts[0]));
        assert_eq!(k.thread(ts[1]).state, ThreadState::OutOfBudget);
        assert_eq!(k.sc(scs[1]).remaining, 0);
        assert_eq!(k.sc(scs[1]).charged_total, 2);
        assert_eq!(k.timer_deadline(), Some(7));
        k.timer_tick(7);
        assert_eq!(k.current(), None);
        k.timer_tick(10);
        assert_eq!(k.current(), Some(ts[1]));
        assert_eq!(k.sc(scs[1]).remaining, 2);
        assert_eq!(k.sc(scs[1]).next_refill, 20);
        assert_eq!(k.idle_time(), 3);
        k.check_invariants().unwrap();
    }

    #[test]
    fn entry_without_switch_is_rolled_back() {
        let (mut k, _, scs) = setup(&[(1, 5, 10)]);
        assert!(k.kernel_entry(3));
        k.schedule();
        assert_eq!(k.sc(scs[0]).remaining, 5);
        assert_eq!(k.sc_available(scs[0]), 2);
        assert_eq!(k.ledger().rollbacks, 1);
    }

    #[test]
    fn yield_empties_budget() {
        let (mut k, ts, scs) = setup(&[(1, 5, 10)]);
        k.kernel_entry(1);
        k.sc_yield(ts[0], scs[0]).unwrap();
        k.schedule();
        assert_eq!(k.current(), None);
        assert_eq!(k.sc(scs[0]).charged_total, 1);
        assert_eq!(k.release_queue().head(), Some((10, ts[0])));
    }

    #[test]
    fn configure_rejects_bad_params() {
        let (mut k, ts, scs) = setup(&[(1, 5, 10)]);
        k.grant(ts[0], Authority::SchedControl);
        assert_eq!(k.sc_configure(ts[0], scs[0], 11, 10, 0), Err(KernelError::BadParams));
        assert_eq!(k.sc_configure(ts[0], scs[0], 0, 0, 0), Err(KernelError::BadParams));
        k.sc_configure(ts[0], scs[0], 3, 10, 0).unwrap();
        assert_eq!(k.sc(scs[0]).remaining, 3);
    }

    #[test]
    fn yield_to_errors_leave_state_untouched() {
        let (mut k, ts, scs) = setup(&[(1, 5, 10), (3, 5, 10)]);
        k.grant(ts[0], Authority::ScCap(scs[1]));
        let before = format!("{k:?}");
        assert_eq!(k.sc_yield_to(ts[0], scs[1]), Err(KernelError::ExceedsMcp));
        assert_eq!(before, format!("{k:?}"));
        let spare = k.create_sc();
        k.grant(ts[0], Authority::ScCap(spare));
        assert_eq!(k.sc_yield_to(ts[0], spare), Err(KernelError::NotBound));
    }
}
