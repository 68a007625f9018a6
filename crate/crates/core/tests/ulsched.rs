use std::collections::BTreeMap;

use mcsim::analysis::{TaskSet, TaskSpec};
use mcsim::model::*;
use mcsim::sim::Summary;
use mcsim::trace::{Category, ObjRef};
use mcsim::ulsched::*;

mod common;
use common::{ideal_edf, timeline};

fn edf_set(tasks: &[(Time, Time)]) -> TaskSet {
    TaskSet::new(tasks.iter().enumerate().map(|(i, &(t, b))| TaskSpec::new(&format!("t{i}"), t, b, 1 + i as u32)).collect())
}

fn run_edf(tasks: &[(Time, Time)], horizon: Time) -> (UlSystem, Summary) {
    let mut sys = build_edf(&edf_set(tasks), 1);
    sys.engine.check_invariants(true);
    sys.engine.run_until(horizon).unwrap();
    let s = sys.engine.finish();
    (sys, s)
}

#[test]
fn edf_matches_ideal_reference() {
    let tasks = [(10, 3), (15, 4), (6, 2)];
    let horizon = 120;
    let (sys, s) = run_edf(&tasks, horizon);
    assert!(s.misses.is_empty(), "{:?}", s.misses);
    let got = timeline(sys.engine.trace(), horizon);
    let want = ideal_edf(&[10, 15, 6], &[3, 4, 2], horizon);
    for t in 0..horizon as usize {
        let g = got[t].and_then(|th| sys.clients.iter().position(|&c| c == th));
        assert_eq!(g, want[t], "tick {t}");
    }
}

#[test]
fn edf_full_utilization_meets_deadlines() {
    let tasks = [(4, 1), (8, 2), (16, 4), (32, 8)];
    let (_, s) = run_edf(&tasks, 320);
    assert!(s.misses.is_empty(), "{:?}", s.misses);
}

#[test]
fn edf_single_client_gets_its_budget_every_period() {
    let (sys, s) = run_edf(&[(50, 20)], 500);
    assert!(s.misses.is_empty());
    assert_eq!(s.thread_time(sys.clients[0]), 200);
}

fn shares(s: &Summary, clients: &[ThreadId]) -> Vec<f64> {
    let total: Time = clients.iter().map(|&c| s.thread_time(c)).sum();
    clients.iter().map(|&c| s.thread_time(c) as f64 / total as f64).collect()
}

#[test]
fn cfs_equal_weights_split_evenly() {
    let mut sys = build_cfs(&[1, 1], 1000, 3);
    sys.engine.run_until(1_000_000).unwrap();
    let s = sys.engine.finish();
    let sh = shares(&s, &sys.clients);
    assert!((sh[0] - 0.5).abs() <= 0.01, "{sh:?}");
}

#[test]
fn cfs_weights_two_to_one() {
    let mut sys = build_cfs(&[2, 1], 1000, 3);
    sys.engine.run_until(1_000_000).unwrap();
    let s = sys.engine.finish();
    let sh = shares(&s, &sys.clients);
    assert!((sh[0] - 2.0 / 3.0).abs() <= 0.01, "{sh:?}");
}

#[test]
fn cfs_lone_client_gets_everything() {
    let mut sys = build_cfs(&[3], 100, 0);
    sys.engine.run_until(10_000).unwrap();
    let s = sys.engine.finish();
    assert_eq!(s.thread_time(sys.clients[0]), 10_000);
}

fn run_order(sys: &UlSystem) -> Vec<usize> {
    let mut order = vec![];
    for r in sys.engine.trace() {
        if let (Category::Dispatch, Some(ObjRef::Thread(t))) = (r.category, r.subject) {
            if let Some(i) = sys.clients.iter().position(|&c| c == t) {
                if order.last() != Some(&i) {
                    order.push(i);
                }
            }
        }
    }
    order
}

fn assert_round_robin(order: &[usize], n: usize) {
    assert!(order.len() > 2 * n, "{order:?}");
    for w in order.windows(2) {
        assert_eq!(w[1], (w[0] + 1) % n, "{order:?}");
    }
}

#[test]
fn coop_shared_round_robin_on_one_context() {
    let mut sys = build_coop_shared(3, 7, 0);
    sys.engine.check_invariants(true);
    sys.engine.run_until(210).unwrap();
    let s = sys.engine.finish();
    assert_round_robin(&run_order(&sys), 3);
    for &c in &sys.clients {
        assert_eq!(s.thread_time(c), 70);
    }
    let shared = sys.client_scs[0];
    let on_shared: Time = s.run_matrix.iter().filter(|((_, sc), _)| *sc == shared).map(|(_, v)| v).sum();
    assert_eq!(on_shared, 210);
}

#[test]
fn coop_shared_single_client_returns_to_itself() {
    let mut sys = build_coop_shared(1, 5, 0);
    sys.engine.run_until(100).unwrap();
    let s = sys.engine.finish();
    assert_eq!(s.thread_time(sys.clients[0]), 100);
}

#[test]
fn coop_per_sc_round_robin() {
    let mut sys = build_coop_per_sc(3, 4, 0);
    sys.engine.check_invariants(true);
    sys.engine.run_until(120).unwrap();
    let s = sys.engine.finish();
    assert_round_robin(&run_order(&sys), 3);
    for &c in &sys.clients {
        assert_eq!(s.thread_time(c), 40);
    }
}

#[test]
fn preempt_shared_gives_each_client_a_quantum() {
    let mut sys = build_preempt_shared(3, 10, 0);
    sys.engine.check_invariants(true);
    sys.engine.run_until(300).unwrap();
    let s = sys.engine.finish();
    assert_round_robin(&run_order(&sys), 3);
    for &c in &sys.clients {
        assert_eq!(s.thread_time(c), 100);
    }
}

#[test]
fn preempt_per_sc_driven_by_timeouts() {
    let mut sys = build_preempt_per_sc(3, 10, 0);
    sys.engine.check_invariants(true);
    sys.engine.run_until(300).unwrap();
    let s = sys.engine.finish();
    assert_round_robin(&run_order(&sys), 3);
    for &c in &sys.clients {
        assert_eq!(s.thread_time(c), 100);
    }
    let faults = sys.engine.trace().iter().filter(|r| r.category == Category::TimeoutFault).count();
    assert!(faults >= 27, "{faults}");
}

#[test]
fn run_matrix_accounts_every_tick() {
    let mut sys = build_preempt_shared(2, 7, 0);
    sys.engine.run_until(1000).unwrap();
    let s = sys.engine.finish();
    let by_thread: BTreeMap<ThreadId, Time> = s.run_matrix.iter().fold(BTreeMap::new(), |mut m, ((t, _), v)| {
        *m.entry(*t).or_default() += v;
        m
    });
    for &c in &sys.clients {
        assert_eq!(by_thread.get(&c).copied().unwrap_or(0), s.thread_time(c));
    }
    assert!(s.time_conserved());
}
