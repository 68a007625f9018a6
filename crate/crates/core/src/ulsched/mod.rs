//! User-level schedulers running on top of the kernel, and builders that
//! assemble complete systems around them.

pub mod cfs;
pub mod edf;
pub mod mech;

use std::collections::VecDeque;

pub use cfs::{CfsPolicy, CfsScheduler};
pub use edf::{EdfPolicy, EdfScheduler};
pub use mech::{CoopPerSc, CoopShared, PreemptPerSc, PreemptShared};

use crate::analysis::TaskSet;
use crate::kernel::Kernel;
use crate::model::*;
use crate::sim::script::{Op, Operand, Script};
use crate::sim::{Engine, JobSpec, Step};
use crate::syscall::Syscall;

/// Zero-time steps a scheduler has decided on but not yet issued.
pub(crate) type Plan = VecDeque<Step>;

/// Budget and period of contexts that should never run out.
pub const FULL_BUDGET: Time = 1 << 40;

const CLIENT_PRIO: u32 = 10;

/// A scheduler thread and the clients it manages.
pub struct UlSystem {
    pub engine: Engine,
    pub scheduler: ThreadId,
    pub clients: Vec<ThreadId>,
    /// One per client, or a single shared context.
    pub client_scs: Vec<ScId>,
}

struct Builder {
    k: Kernel,
    names: Vec<(ThreadId, String)>,
    sc_names: Vec<(ScId, String)>,
}

impl Builder {
    fn new() -> Self {
        Builder { k: Kernel::new(KernelConfig::default()).expect("default config"), names: vec![], sc_names: vec![] }
    }

    fn thread(&mut self, name: &str, prio: u32) -> ThreadId {
        let t = self.k.create_thread(prio, 0).expect("valid priority");
        self.k.grant(t, Authority::TcbCap(t));
        self.k.set_mcp(t, prio);
        self.names.push((t, name.to_string()));
        t
    }

    fn sc(&mut self, name: &str, budget: Time, period: Time) -> ScId {
        let sc = self.k.create_sc();
        self.k.setup_configure(sc, budget, period).expect("valid parameters");
        self.sc_names.push((sc, name.to_string()));
        sc
    }

    fn own_sc(&mut self, t: ThreadId, name: &str, budget: Time, period: Time) -> ScId {
        let sc = self.sc(name, budget, period);
        self.k.setup_bind(sc, t).expect("fresh context");
        self.k.grant(t, Authority::ScCap(sc));
        sc
    }

    fn finish(self, seed: u64) -> Engine {
        let mut e = Engine::new(self.k, seed);
        for (t, n) in self.names {
            e.names_mut().threads.insert(t, n);
        }
        for (sc, n) in self.sc_names {
            e.names_mut().scs.insert(sc, n);
        }
        e
    }
}

fn sys(call: Syscall) -> Op {
    Op::Sys { call, badge: None }
}

fn greedy() -> Script {
    Script::new(vec![Op::Compute(Operand::Imm(FULL_BUDGET)), Op::Goto(0)])
}

/// EDF over the tasks of `set`, each client with its own full context.
/// Client `i` runs task `i`: one job of `budget` ticks per period.
pub fn build_edf(set: &TaskSet, seed: u64) -> UlSystem {
    let mut b = Builder::new();
    let sched = b.thread("edf", CLIENT_PRIO + 1);
    b.own_sc(sched, "edf_sc", FULL_BUDGET, FULL_BUDGET);
    let ep = b.k.create_endpoint();
    let timer = b.k.create_notification();
    b.k.bind_notification(timer, sched);
    b.k.grant(sched, Authority::EndpointCap(ep, Rights::RECV));

    let mut clients = vec![];
    let mut scs = vec![];
    for task in &set.tasks {
        let t = b.thread(&task.name, CLIENT_PRIO);
        let sc = b.own_sc(t, &format!("{}_sc", task.name), FULL_BUDGET, FULL_BUDGET);
        b.k.grant(t, Authority::EndpointCap(ep, Rights::SEND));
        b.k.grant(sched, Authority::ScCap(sc));
        clients.push(t);
        scs.push(sc);
    }
    b.k.start(sched);
    for &t in &clients {
        b.k.start(t);
    }
    let periods: Vec<Time> = set.tasks.iter().map(|t| t.period).collect();
    let mut engine = b.finish(seed);
    engine.set_behavior(sched, Box::new(EdfScheduler::new(sched, ep, timer, &periods, scs.clone())));
    for (i, (&t, task)) in clients.iter().zip(&set.tasks).enumerate() {
        engine.set_behavior(
            t,
            Box::new(Script::new(vec![
                sys(Syscall::Call { ep, badge: i as u64, donate: false }),
                Op::Compute(Operand::Imm(task.budget)),
                Op::JobDone,
                Op::Goto(0),
            ])),
        );
        engine.set_job(t, JobSpec { period: task.period, offset: 0 });
    }
    UlSystem { engine, scheduler: sched, clients, client_scs: scs }
}

/// Weighted fair sharing among always-busy clients, re-evaluated every
/// `quantum` ticks.
pub fn build_cfs(weights: &[u64], quantum: Time, seed: u64) -> UlSystem {
    let mut b = Builder::new();
    let sched = b.thread("cfs", CLIENT_PRIO + 1);
    b.own_sc(sched, "cfs_sc", FULL_BUDGET, FULL_BUDGET);
    let timer = b.k.create_notification();
    b.k.grant(sched, Authority::NtfnCap(timer, Rights::RECV));
    let mut clients = vec![];
    let mut scs = vec![];
    for i in 0..weights.len() {
        let t = b.thread(&format!("c{i}"), CLIENT_PRIO);
        let sc = b.own_sc(t, &format!("c{i}_sc"), FULL_BUDGET, FULL_BUDGET);
        b.k.grant(sched, Authority::ScCap(sc));
        clients.push(t);
        scs.push(sc);
    }
    b.k.start(sched);
    for &t in &clients {
        b.k.start(t);
    }
    let mut engine = b.finish(seed);
    engine.set_behavior(sched, Box::new(CfsScheduler::new(timer, weights, scs.clone(), quantum)));
    for &t in &clients {
        engine.set_behavior(t, Box::new(greedy()));
    }
    UlSystem { engine, scheduler: sched, clients, client_scs: scs }
}

/// Cooperative round robin over one shared context, switched through the
/// scheduler's saved reply capabilities. Each client computes `work` ticks
/// per turn.
pub fn build_coop_shared(n: usize, work: Time, seed: u64) -> UlSystem {
    assert!(n > 0);
    let mut b = Builder::new();
    let sched = b.thread("sched", CLIENT_PRIO + 1);
    let ep = b.k.create_endpoint();
    b.k.grant(sched, Authority::EndpointCap(ep, Rights::RECV));
    let shared = b.sc("shared", FULL_BUDGET, FULL_BUDGET);
    let mut clients = vec![];
    for i in 0..n {
        let t = b.thread(&format!("c{i}"), CLIENT_PRIO);
        b.k.grant(t, Authority::EndpointCap(ep, Rights::SEND));
        clients.push(t);
    }
    b.k.setup_bind(shared, clients[0]).expect("fresh context");
    b.k.setup_recv(sched, ep);
    b.k.start(clients[0]);
    for (i, &t) in clients.iter().enumerate().skip(1) {
        b.k.setup_blocked_caller(t, sched, i as u32, shared);
    }
    let mut engine = b.finish(seed);
    engine.set_behavior(sched, Box::new(CoopShared::new(ep, n)));
    for (i, &t) in clients.iter().enumerate() {
        // A client parked at boot resumes past its call.
        let ops = vec![
            Op::Compute(Operand::Imm(work)),
            sys(Syscall::Call { ep, badge: i as u64, donate: true }),
            Op::Goto(0),
        ];
        engine.set_behavior(t, Box::new(Script::new(ops)));
    }
    UlSystem { engine, scheduler: sched, clients, client_scs: vec![shared] }
}

/// Cooperative round robin where each client has its own context and waits
/// on its own notification; the scheduler sits below the clients.
pub fn build_coop_per_sc(n: usize, work: Time, seed: u64) -> UlSystem {
    let mut b = Builder::new();
    let sched = b.thread("sched", CLIENT_PRIO - 1);
    b.own_sc(sched, "sched_sc", FULL_BUDGET, FULL_BUDGET);
    let mut clients = vec![];
    let mut scs = vec![];
    let mut ntfns = vec![];
    for i in 0..n {
        let t = b.thread(&format!("c{i}"), CLIENT_PRIO);
        let sc = b.own_sc(t, &format!("c{i}_sc"), FULL_BUDGET, FULL_BUDGET);
        let nf = b.k.create_notification();
        b.k.grant(t, Authority::NtfnCap(nf, Rights::RECV));
        b.k.grant(sched, Authority::NtfnCap(nf, Rights::SEND));
        b.k.grant(sched, Authority::ScCap(sc));
        clients.push(t);
        scs.push(sc);
        ntfns.push(nf);
    }
    b.k.start(sched);
    for &t in &clients {
        b.k.start(t);
    }
    let mut engine = b.finish(seed);
    engine.set_behavior(sched, Box::new(CoopPerSc::new(ntfns.clone(), scs.clone())));
    for (&t, &nf) in clients.iter().zip(&ntfns) {
        let ops = vec![Op::Compute(Operand::Imm(work)), sys(Syscall::Wait { ntfn: nf }), Op::Goto(0)];
        engine.set_behavior(t, Box::new(Script::new(ops)));
    }
    UlSystem { engine, scheduler: sched, clients, client_scs: scs }
}

/// Preemptive round robin: a timer moves one shared context between
/// always-busy clients every `quantum` ticks.
pub fn build_preempt_shared(n: usize, quantum: Time, seed: u64) -> UlSystem {
    let mut b = Builder::new();
    let sched = b.thread("sched", CLIENT_PRIO + 1);
    b.own_sc(sched, "sched_sc", FULL_BUDGET, FULL_BUDGET);
    let timer = b.k.create_notification();
    b.k.grant(sched, Authority::NtfnCap(timer, Rights::RECV));
    let shared = b.sc("shared", FULL_BUDGET, FULL_BUDGET);
    b.k.grant(sched, Authority::ScCap(shared));
    let mut clients = vec![];
    for i in 0..n {
        let t = b.thread(&format!("c{i}"), CLIENT_PRIO);
        b.k.grant(sched, Authority::TcbCap(t));
        clients.push(t);
    }
    b.k.setup_bind(shared, clients[0]).expect("fresh context");
    b.k.start(sched);
    for &t in &clients {
        b.k.start(t);
    }
    let mut engine = b.finish(seed);
    engine.set_behavior(sched, Box::new(PreemptShared::new(timer, shared, clients.clone(), quantum)));
    for &t in &clients {
        engine.set_behavior(t, Box::new(greedy()));
    }
    UlSystem { engine, scheduler: sched, clients, client_scs: vec![shared] }
}

/// Preemptive round robin driven by timeout faults: each client's context
/// holds one quantum per round of `n` quanta.
pub fn build_preempt_per_sc(n: usize, quantum: Time, seed: u64) -> UlSystem {
    let mut b = Builder::new();
    let sched = b.thread("sched", CLIENT_PRIO + 1);
    b.own_sc(sched, "sched_sc", FULL_BUDGET, FULL_BUDGET);
    let ep = b.k.create_endpoint();
    b.k.grant(sched, Authority::EndpointCap(ep, Rights::RECV));
    let mut clients = vec![];
    let mut scs = vec![];
    for i in 0..n {
        let t = b.thread(&format!("c{i}"), CLIENT_PRIO);
        let sc = b.own_sc(t, &format!("c{i}_sc"), quantum, quantum * n as Time);
        b.k.set_timeout_handler(t, Some(ep));
        b.k.grant(sched, Authority::ScCap(sc));
        clients.push(t);
        scs.push(sc);
    }
    b.k.start(sched);
    for &t in &clients {
        b.k.start(t);
    }
    let mut engine = b.finish(seed);
    engine.set_behavior(sched, Box::new(PreemptPerSc::new(ep, clients.clone(), scs.clone())));
    for &t in &clients {
        engine.set_behavior(t, Box::new(greedy()));
    }
    UlSystem { engine, scheduler: sched, clients, client_scs: scs }
}
