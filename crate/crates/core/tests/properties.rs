use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use mcsim::analysis::{hyperperiod, ll_bound, rta, utilization, TaskSet, TaskSpec};
use mcsim::model::*;
use mcsim::sim::csv::trace_csv;
use mcsim::sim::scenario::{load, taskset_scenario};
use mcsim::taskgen::{assign_rm_priorities, make_taskset, randfixedsum_with, DEFAULT_PERIOD_RANGE};
use mcsim::ulsched::build_edf;

mod common;
use common::{as_indices, ideal_edf, timeline};

/// A random mix of clients, a server, a fault handler, a notification with
/// external events and a criticality controller.
fn random_scenario(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let passive = rng.gen_bool(0.5);
    let mut scs = vec![json!({"name": "h_sc", "budget": 20, "period": 20})];
    let mut threads = vec![json!({
        "name": "handler", "priority": 12, "criticality": 2, "sc": "h_sc",
        "caps": ["ep:fault:r", "sched_control"],
        "script": [
            {"op": "recv", "ep": "fault"},
            match rng.gen_range(0..4) {
                0 => json!({"op": "fault_reply", "action": "extend", "amount": rng.gen_range(0..3)}),
                1 => json!({"op": "fault_reply", "action": "rollback"}),
                2 => json!({"op": "fault_reply", "action": "suspend_owner"}),
                _ => json!({"op": "fault_reply", "action": "raise", "level": rng.gen_range(0..3)}),
            },
            {"op": "goto", "to": 0}
        ]
    })];
    if passive {
        scs.push(json!({"name": "init_sc", "budget": 5, "period": 1000}));
        scs.push(json!({"name": "s_sc", "budget": 5, "period": 1000}));
        threads.push(json!({
            "name": "init", "priority": 14, "sc": "init_sc",
            "caps": ["sc:s_sc", "tcb:server", "ntfn:boot"],
            "script": [
                {"op": "bind", "sc": "s_sc", "thread": "server"},
                {"op": "wait", "ntfn": "boot"},
                {"op": "unbind", "sc": "s_sc"},
                {"op": "halt"}
            ]
        }));
        threads.push(json!({
            "name": "server", "priority": 10, "timeout_handler": "fault",
            "caps": ["ep:ep:r", "ntfn:boot"],
            "script": [
                {"op": "signal_recv", "ntfn": "boot", "ep": "ep"},
                {"op": "compute", "reg": 7},
                {"op": "reply_recv", "ep": "ep"},
                {"op": "goto", "to": 1}
            ]
        }));
    } else {
        scs.push(json!({"name": "s_sc", "budget": 4, "period": 10}));
        threads.push(json!({
            "name": "server", "priority": 10, "sc": "s_sc", "caps": ["ep:ep:r"],
            "script": [
                {"op": "recv", "ep": "ep"},
                {"op": "compute", "reg": 7},
                {"op": "reply_recv", "ep": "ep"},
                {"op": "goto", "to": 1}
            ]
        }));
    }
    let clients = rng.gen_range(1..=4);
    for i in 0..clients {
        let name = format!("c{i}");
        let sc = format!("c{i}_sc");
        let budget = rng.gen_range(1..=8);
        scs.push(json!({"name": sc, "budget": budget, "period": rng.gen_range(budget..=20)}));
        let mut ops: Vec<Value> = vec![];
        for _ in 0..rng.gen_range(1..=6) {
            ops.push(match rng.gen_range(0..10) {
                0 | 1 => json!({"op": "compute", "ticks": rng.gen_range(1..=6)}),
                2 => json!({"op": "compute_rand", "min": 0, "max": 4}),
                3 => json!({"op": "yield"}),
                4 => json!({"op": "wait", "ntfn": "irq"}),
                5 => json!({"op": "signal", "ntfn": "irq"}),
                6 => json!({"op": "call", "ep": "ep", "badge": rng.gen_range(1..=4), "donate": rng.gen_bool(0.8)}),
                7 => json!({"op": "consume", "sc": sc}),
                8 => json!({"op": "set_system_criticality", "level": rng.gen_range(0..3)}),
                _ => json!({"op": "checkpoint", "resume": 0}),
            });
        }
        ops.push(json!({"op": "compute", "ticks": 1}));
        ops.push(json!({"op": "goto", "to": 0}));
        let mut t = json!({
            "name": name, "priority": rng.gen_range(1..=8), "criticality": rng.gen_range(0..3),
            "sc": sc, "caps": ["ep:ep:w", "ntfn:irq", "sched_control"], "script": ops
        });
        if rng.gen_bool(0.3) {
            t["timeout_handler"] = json!("fault");
        }
        threads.push(t);
    }
    let events: Vec<Value> =
        (0..rng.gen_range(0..6)).map(|_| json!({"at": rng.gen_range(0..300), "signal": "irq"})).collect();
    json!({
        "config": {"priority_bits": 4, "crit_levels": 3, "kernel_wcet": 1},
        "duration": rng.gen_range(100..400),
        "seed": seed,
        "scheduling_contexts": scs,
        "endpoints": ["ep", "fault"],
        "notifications": [{"name": "irq"}, {"name": "boot"}],
        "threads": threads,
        "events": events
    })
    .to_string()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn random_scenarios_keep_invariants_and_conserve_time(seed in any::<u64>()) {
        let text = random_scenario(seed);
        let file = load(&text).unwrap();
        let mut e = file.build().unwrap();
        e.check_invariants(true);
        e.run_until(file.duration).unwrap();
        let s = e.finish();
        prop_assert!(s.time_conserved(), "charged + idle != duration");
        let by_matrix: Time = s.run_matrix.values().sum();
        prop_assert_eq!(by_matrix + s.idle, s.duration);
    }

    #[test]
    fn replaying_external_events_reproduces_the_trace(seed in any::<u64>()) {
        let text = random_scenario(seed);
        let file = load(&text).unwrap();
        let mut first = file.build().unwrap();
        first.run_until(file.duration).unwrap();
        let events = first.external_events();
        let mut again = file.build().unwrap();
        again.replay_events(&events);
        again.run_until(file.duration).unwrap();
        prop_assert_eq!(trace_csv(first.trace(), first.names()), trace_csv(again.trace(), again.names()));
    }

    #[test]
    fn utilization_is_permutation_invariant_and_additive(
        a in prop::collection::vec((1u64..50, 1u64..50), 0..6),
        b in prop::collection::vec((1u64..50, 1u64..50), 0..6),
        rot in 0usize..6,
    ) {
        let mk = |v: &[(u64, u64)], tag: &str| TaskSet::new(
            v.iter().enumerate().map(|(i, &(t, b))| TaskSpec::new(&format!("{tag}{i}"), t.max(b), b.min(t), i as u32)).collect());
        let (sa, sb) = (mk(&a, "a"), mk(&b, "b"));
        let mut joined = sa.tasks.clone();
        joined.extend(sb.tasks.clone());
        let union = TaskSet::new(joined.clone());
        prop_assert_eq!(utilization(&union), utilization(&sa) + utilization(&sb));
        if !joined.is_empty() {
            let k = rot % joined.len();
            joined.rotate_left(k);
        }
        prop_assert_eq!(utilization(&TaskSet::new(joined)), utilization(&union));
    }

    #[test]
    fn below_the_bound_is_always_schedulable(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let utils = randfixedsum_with(n, ll_bound(n as u32) * 0.95, &mut rng).unwrap();
        let set = make_taskset(&utils, (10, 1000), seed);
        if utilization(&set) <= Ratio::new((ll_bound(n as u32) * 1e6) as u128, 1_000_000) {
            prop_assert!(rta(&set).unwrap().all_schedulable());
        }
    }

    #[test]
    fn generated_sets_respect_ranges(seed in any::<u64>(), n in 1usize..12, frac in 0.05f64..1.0) {
        let total = frac * n as f64;
        let utils = randfixedsum_with(n, total, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!((utils.iter().sum::<f64>() - total).abs() < 1e-9);
        prop_assert!(utils.iter().all(|&u| u > 0.0 && u <= 1.0 + 1e-12));
        let set = make_taskset(&utils, DEFAULT_PERIOD_RANGE, seed);
        for t in &set.tasks {
            prop_assert!(t.budget >= 1 && t.budget <= t.period);
            prop_assert!((DEFAULT_PERIOD_RANGE.0..=DEFAULT_PERIOD_RANGE.1).contains(&t.period));
        }
        prop_assert_eq!(&set, &make_taskset(&utils, DEFAULT_PERIOD_RANGE, seed));
    }

    #[test]
    fn user_level_edf_matches_ideal_edf(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let periods = [4, 5, 6, 10, 12, 15, 20, 30, 60];
        let n = rng.gen_range(1..=4);
        let mut tasks: Vec<TaskSpec> = (0..n).map(|i| {
            let t = periods[rng.gen_range(0..periods.len())];
            TaskSpec::new(&format!("t{i}"), t, rng.gen_range(1..=t), 0)
        }).collect();
        assign_rm_priorities(&mut tasks);
        let mut set = TaskSet::new(tasks);
        mcsim::taskgen::trim_to_total(&mut set, Ratio::from_integer(1));
        prop_assume!(utilization(&set) <= Ratio::from_integer(1));
        let h = hyperperiod(&set).unwrap();
        let mut sys = build_edf(&set, seed);
        sys.engine.check_invariants(true);
        sys.engine.run_until(h).unwrap();
        let s = sys.engine.finish();
        prop_assert!(s.misses.is_empty());
        let p: Vec<Time> = set.tasks.iter().map(|t| t.period).collect();
        let b: Vec<Time> = set.tasks.iter().map(|t| t.budget).collect();
        prop_assert_eq!(as_indices(&timeline(sys.engine.trace(), h), &sys.clients), ideal_edf(&p, &b, h));
    }

    #[test]
    fn taskset_simulation_agrees_with_rta(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let periods = [5, 8, 10, 20, 40];
        let n = rng.gen_range(1..=5);
        let mut tasks: Vec<TaskSpec> = (0..n).map(|i| {
            let t = periods[rng.gen_range(0..periods.len())];
            TaskSpec::new(&format!("t{i}"), t, rng.gen_range(1..=t / 2), 0)
        }).collect();
        assign_rm_priorities(&mut tasks);
        let set = TaskSet::new(tasks);
        let file = taskset_scenario(&set, KernelConfig::default());
        let mut e = file.build().unwrap();
        e.run_until(file.duration).unwrap();
        let s = e.finish();
        prop_assert_eq!(rta(&set).unwrap().all_schedulable(), s.misses.is_empty());
    }
}

#[test]
fn bound_decreases_toward_ln2() {
    for n in 1..300 {
        assert!(ll_bound(n + 1) < ll_bound(n));
    }
    assert!((ll_bound(1000) - std::f64::consts::LN_2).abs() < 0.001);
}

#[test]
fn many_randfixedsum_parameterizations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100_000 {
        let n = rng.gen_range(1..=10);
        let total = rng.gen_range(0.01..=n as f64);
        let u = randfixedsum_with(n, total, &mut rng).unwrap();
        assert!((u.iter().sum::<f64>() - total).abs() < 1e-9);
        assert!(u.iter().all(|&x| x > 0.0 && x <= 1.0 + 1e-12), "{u:?}");
    }
}

#[test]
fn high_mode_exact_analysis_keeps_t2() {
    use mcsim::analysis::Response;
    use mcsim::sim::golden::table1_tasks;
    let high = table1_tasks(7);
    let r = rta(&high).unwrap();
    assert_eq!(r.get("T2"), Some(Response::Schedulable(20)));
    assert_eq!(r.get("T1"), Some(Response::Unschedulable));
    // T2 and everything above it fail the sufficient bound, yet exact analysis passes.
    let upper = TaskSet::new(high.tasks.iter().filter(|t| t.name != "T1").cloned().collect());
    assert!(mcsim::analysis::utilization_f64(&upper) > ll_bound(4));
}
