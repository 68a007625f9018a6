//! Discrete-event engine: drives the kernel with thread behaviors, device
//! timers and external events, and tracks jobs and deadlines.

pub mod csv;
pub mod golden;
pub mod scenario;
pub mod script;

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernel::Kernel;
use crate::model::*;
use crate::syscall::{Syscall, SyscallOutcome};
use crate::trace::{Category, ObjRef, OpLedger, TraceRecord};

/// What a thread does next.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    /// Execute for the given number of ticks.
    Compute(Time),
    Syscall(Syscall),
    /// The current job is complete.
    JobDone,
    /// Arm the device timer attached to `ntfn` to fire at `at`, replacing
    /// any earlier setting.
    ProgramTimer { ntfn: NtfnId, at: Time },
    /// Stop for good.
    Halt,
}

/// Context handed to a behavior when it must choose its next step.
pub struct StepCx<'a> {
    pub thread: ThreadId,
    pub now: Time,
    pub kernel: &'a mut Kernel,
    pub rng: &'a mut ChaCha8Rng,
}

impl StepCx<'_> {
    /// Result of the previous operation, if any.
    pub fn take_mailbox(&mut self) -> Option<Message> {
        self.kernel.take_mailbox(self.thread)
    }

    pub fn user(&mut self) -> &mut UserContext {
        self.kernel.user_context_mut(self.thread)
    }
}

pub trait Behavior {
    fn next_step(&mut self, cx: &mut StepCx<'_>) -> Step;
}

/// Periodic job bookkeeping: job `k` is released at `offset + k * period`
/// and due at `offset + (k + 1) * period`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JobSpec {
    pub period: Time,
    pub offset: Time,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeadlineMiss {
    pub thread: ThreadId,
    pub job: u64,
    pub deadline: Time,
    /// Completion time, or `None` if the job had not completed by the end.
    pub completed: Option<Time>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("thread {thread} took {limit} zero-time steps at t={time}")]
    ZeroTimeLoop { thread: ThreadId, time: Time, limit: usize },
    #[error("invariant violated at t={time}: {msg}")]
    Invariant { time: Time, msg: String },
}

#[derive(Default)]
struct ThreadRt {
    behavior: Option<Box<dyn Behavior>>,
    compute_left: Time,
    pending: Option<Syscall>,
    job: Option<JobSpec>,
    jobs_done: u64,
    run_time: Time,
    rollbacks: u64,
}

/// Display names for kernel objects, used when exporting traces.
#[derive(Clone, Debug, Default)]
pub struct Names {
    pub threads: BTreeMap<ThreadId, String>,
    pub scs: BTreeMap<ScId, String>,
    pub eps: BTreeMap<EpId, String>,
    pub ntfns: BTreeMap<NtfnId, String>,
}

impl Names {
    pub fn of(&self, o: ObjRef) -> String {
        let named = match o {
            ObjRef::Thread(t) => self.threads.get(&t),
            ObjRef::Sc(s) => self.scs.get(&s),
            ObjRef::Ep(e) => self.eps.get(&e),
            ObjRef::Ntfn(n) => self.ntfns.get(&n),
        };
        named.cloned().unwrap_or_else(|| match o {
            ObjRef::Thread(t) => t.to_string(),
            ObjRef::Sc(s) => s.to_string(),
            ObjRef::Ep(e) => e.to_string(),
            ObjRef::Ntfn(n) => n.to_string(),
        })
    }

    pub fn thread(&self, t: ThreadId) -> String {
        self.of(ObjRef::Thread(t))
    }

    pub fn sc(&self, s: ScId) -> String {
        self.of(ObjRef::Sc(s))
    }

    pub fn thread_by_name(&self, name: &str) -> Option<ThreadId> {
        self.threads.iter().find(|(_, n)| *n == name).map(|(&t, _)| t)
    }

    pub fn sc_by_name(&self, name: &str) -> Option<ScId> {
        self.scs.iter().find(|(_, n)| *n == name).map(|(&s, _)| s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Summary {
    pub duration: Time,
    pub idle: Time,
    /// Per thread: (thread, time on CPU).
    pub thread_time: Vec<(ThreadId, Time)>,
    /// Per SC: (sc, total charged).
    pub sc_charged: Vec<(ScId, Time)>,
    /// Time each thread ran on each SC.
    pub run_matrix: BTreeMap<(ThreadId, ScId), Time>,
    pub jobs_done: Vec<(ThreadId, u64)>,
    pub misses: Vec<DeadlineMiss>,
    pub ledger: OpLedger,
}

impl Summary {
    pub fn thread_time(&self, t: ThreadId) -> Time {
        self.thread_time.iter().find(|(x, _)| *x == t).map_or(0, |&(_, v)| v)
    }

    pub fn sc_charged(&self, s: ScId) -> Time {
        self.sc_charged.iter().find(|(x, _)| *x == s).map_or(0, |&(_, v)| v)
    }

    pub fn misses_of(&self, t: ThreadId) -> usize {
        self.misses.iter().filter(|m| m.thread == t).count()
    }

    /// Charged time plus idle time equals the run length.
    pub fn time_conserved(&self) -> bool {
        self.sc_charged.iter().map(|&(_, v)| v).sum::<Time>() + self.idle == self.duration
    }
}

pub struct Engine {
    kernel: Kernel,
    rt: Vec<ThreadRt>,
    now: Time,
    started: bool,
    events: VecDeque<(Time, NtfnId)>,
    device: BTreeMap<NtfnId, Time>,
    replay: bool,
    rng: ChaCha8Rng,
    matrix: BTreeMap<(ThreadId, ScId), Time>,
    misses: Vec<DeadlineMiss>,
    names: Names,
    check: bool,
    step_limit: usize,
}

impl Engine {
    pub fn new(kernel: Kernel, seed: u64) -> Self {
        Engine {
            kernel,
            rt: Vec::new(),
            now: 0,
            started: false,
            events: VecDeque::new(),
            device: BTreeMap::new(),
            replay: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
            matrix: BTreeMap::new(),
            misses: Vec::new(),
            names: Names::default(),
            check: false,
            step_limit: 100_000,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut Kernel {
        &mut self.kernel
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn names(&self) -> &Names {
        &self.names
    }

    pub fn names_mut(&mut self) -> &mut Names {
        &mut self.names
    }

    /// Run the kernel invariant checker after every event.
    pub fn check_invariants(&mut self, on: bool) {
        self.check = on;
    }

    fn rt_mut(&mut self, t: ThreadId) -> &mut ThreadRt {
        if self.rt.len() <= t.index() {
            self.rt.resize_with(t.index() + 1, ThreadRt::default);
        }
        &mut self.rt[t.index()]
    }

    pub fn set_behavior(&mut self, t: ThreadId, b: Box<dyn Behavior>) {
        self.rt_mut(t).behavior = Some(b);
    }

    pub fn set_job(&mut self, t: ThreadId, job: JobSpec) {
        self.rt_mut(t).job = Some(job);
    }

    /// Schedule an external signal on `ntfn` at `at`.
    pub fn add_event(&mut self, at: Time, ntfn: NtfnId) {
        let pos = self.events.partition_point(|&(t, _)| t <= at);
        self.events.insert(pos, (at, ntfn));
    }

    /// Replace all external stimuli with `events`, as recorded in an earlier
    /// trace. Device timers programmed by threads no longer fire on their
    /// own.
    pub fn replay_events(&mut self, events: &[(Time, NtfnId)]) {
        self.events.clear();
        for &(t, n) in events {
            self.add_event(t, n);
        }
        self.replay = true;
    }

    fn verify(&self) -> Result<(), SimError> {
        if self.check {
            self.kernel.check_invariants().map_err(|msg| SimError::Invariant { time: self.now, msg })?;
        }
        Ok(())
    }

    fn job_done(&mut self, t: ThreadId) {
        let now = self.now;
        let rt = self.rt_mut(t);
        let k = rt.jobs_done;
        rt.jobs_done += 1;
        let job = rt.job;
        let mut rec = TraceRecord::new(now, Category::JobDone).subject(ObjRef::Thread(t)).detail(format!("job={k}"));
        if let Some(j) = job {
            let deadline = j.offset + (k + 1) * j.period;
            rec = rec.detail(format!("job={k};deadline={deadline}"));
            self.kernel.emit(rec);
            if now > deadline {
                self.miss(DeadlineMiss { thread: t, job: k, deadline, completed: Some(now) });
            }
        } else {
            self.kernel.emit(rec);
        }
    }

    fn miss(&mut self, m: DeadlineMiss) {
        let at = m.completed.unwrap_or(m.deadline);
        let detail = format!("job={};deadline={}", m.job, m.deadline);
        self.kernel.emit(TraceRecord::new(at, Category::DeadlineMiss).subject(ObjRef::Thread(m.thread)).detail(detail));
        self.misses.push(m);
    }

    /// Run the current thread's zero-time steps until it computes, blocks or
    /// leaves the CPU.
    fn drain(&mut self) -> Result<(), SimError> {
        let mut steps = 0;
        while let Some(t) = self.kernel.current() {
            let rollbacks = self.kernel.thread(t).user.rollbacks;
            let rt = self.rt_mut(t);
            if rt.rollbacks != rollbacks {
                rt.rollbacks = rollbacks;
                rt.compute_left = 0;
                rt.pending = None;
            }
            if self.rt_mut(t).compute_left > 0 {
                return Ok(());
            }
            steps += 1;
            if steps > self.step_limit {
                return Err(SimError::ZeroTimeLoop { thread: t, time: self.now, limit: self.step_limit });
            }
            let step = match self.rt_mut(t).pending.take() {
                Some(call) => Step::Syscall(call),
                None => match self.rt_mut(t).behavior.take() {
                    Some(mut b) => {
                        let mut cx = StepCx { thread: t, now: self.now, kernel: &mut self.kernel, rng: &mut self.rng };
                        let s = b.next_step(&mut cx);
                        self.rt[t.index()].behavior = Some(b);
                        s
                    }
                    None => Step::Halt,
                },
            };
            match step {
                Step::Compute(d) => self.rt_mut(t).compute_left = d,
                Step::Syscall(call) => {
                    if self.kernel.syscall(self.now, call.clone()) == SyscallOutcome::Restart {
                        self.rt_mut(t).pending = Some(call);
                    }
                }
                Step::JobDone => self.job_done(t),
                Step::ProgramTimer { ntfn, at } => {
                    self.device.insert(ntfn, at.max(self.now));
                }
                Step::Halt => self.kernel.halt_current(self.now),
            }
            self.verify()?;
        }
        Ok(())
    }

    /// Fire external events and device timers due now. Returns whether any
    /// fired.
    fn fire_external(&mut self) -> bool {
        let mut fired = false;
        while self.events.front().is_some_and(|&(t, _)| t <= self.now) {
            let (_, n) = self.events.pop_front().unwrap();
            self.kernel.interrupt(self.now, n);
            fired = true;
        }
        let due: Vec<NtfnId> = self.device.iter().filter(|(_, &t)| t <= self.now).map(|(&n, _)| n).collect();
        for n in due {
            self.device.remove(&n);
            if !self.replay {
                self.kernel.interrupt(self.now, n);
                fired = true;
            }
        }
        fired
    }

    fn next_external(&self) -> Option<Time> {
        let ev = self.events.front().map(|&(t, _)| t);
        let dev = if self.replay { None } else { self.device.values().min().copied() };
        match (ev, dev) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Advance the simulation to `end`.
    pub fn run_until(&mut self, end: Time) -> Result<(), SimError> {
        if !self.started {
            self.started = true;
            self.kernel.kernel_entry(self.now);
            self.kernel.schedule();
            self.verify()?;
        }
        loop {
            self.drain()?;
            if self.fire_external() {
                self.verify()?;
                continue;
            }
            if self.kernel.timer_deadline().is_some_and(|d| d <= self.now) {
                self.kernel.timer_tick(self.now);
                self.verify()?;
                continue;
            }
            let cur = self.kernel.current();
            let mut next = end;
            if let Some(t) = cur {
                next = next.min(self.now + self.rt[t.index()].compute_left);
            }
            if let Some(d) = self.kernel.timer_deadline() {
                next = next.min(d);
            }
            if let Some(e) = self.next_external() {
                next = next.min(e);
            }
            if next <= self.now {
                break;
            }
            let dt = next - self.now;
            if let Some(t) = cur {
                let sc = self.kernel.current_sc().expect("running thread has an SC");
                let rt = &mut self.rt[t.index()];
                rt.compute_left -= dt;
                rt.run_time += dt;
                *self.matrix.entry((t, sc)).or_insert(0) += dt;
            }
            self.now = next;
            if self.now >= end {
                // Work that finishes exactly at the horizon still counts.
                self.drain()?;
                break;
            }
        }
        Ok(())
    }

    /// Finish the run at `end`: settle accounting and record jobs that were
    /// due but never completed.
    pub fn finish(&mut self) -> Summary {
        let end = self.now;
        self.kernel.finish(end);
        let mut late = Vec::new();
        for (i, rt) in self.rt.iter().enumerate() {
            if let Some(j) = rt.job {
                let mut k = rt.jobs_done;
                while j.offset + (k + 1) * j.period <= end {
                    late.push(DeadlineMiss {
                        thread: ThreadId(i as u32),
                        job: k,
                        deadline: j.offset + (k + 1) * j.period,
                        completed: None,
                    });
                    k += 1;
                }
            }
        }
        for m in late {
            self.miss(m);
        }
        self.summary()
    }

    pub fn summary(&self) -> Summary {
        let k = &self.kernel;
        Summary {
            duration: self.now,
            idle: k.idle_time(),
            thread_time: k.threads().iter().map(|t| (t.id, self.rt.get(t.id.index()).map_or(0, |r| r.run_time))).collect(),
            sc_charged: k.scheduling_contexts().iter().map(|s| (s.id, k.sc_charged_total(s.id))).collect(),
            run_matrix: self.matrix.clone(),
            jobs_done: k.threads().iter().map(|t| (t.id, self.rt.get(t.id.index()).map_or(0, |r| r.jobs_done))).collect(),
            misses: self.misses.clone(),
            ledger: k.ledger().clone(),
        }
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.kernel.trace()
    }

    /// External signals recorded in the trace so far.
    pub fn external_events(&self) -> Vec<(Time, NtfnId)> {
        external_events(self.kernel.trace())
    }
}

/// Extract the external signals from a trace, in order.
pub fn external_events(trace: &[TraceRecord]) -> Vec<(Time, NtfnId)> {
    trace
        .iter()
        .filter(|r| r.category == Category::ExternalSignal)
        .filter_map(|r| match r.object {
            Some(ObjRef::Ntfn(n)) => Some((r.time, n)),
            _ => None,
        })
        .collect()
}
