//! Canned reproductions of the reference experiments, compared against
//! committed golden outputs.

use std::fmt::Write;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::csv::{summary_csv, trace_csv};
use super::scenario::{load, ConfigError};
use super::{Engine, SimError, Summary};
use crate::analysis::{hyperperiod, rta, utilization, Response, TaskSet};
use crate::kernel::Kernel;
use crate::model::*;
use crate::taskgen::{divisors_in, make_taskset_from, randfixedsum_with, trim_to_total};
use crate::ulsched::build_edf;

pub const FIGURES: [&str; 6] =
    ["budget-ex-a", "budget-ex-b", "mc-params-low", "mc-params-high", "mode-switch-counts", "edf-sweep"];

/// Bundled scenario files, by name.
pub const SCENARIOS: [(&str, &str); 7] = [
    ("fig3a", include_str!("../../scenarios/fig3a.json")),
    ("fig3b", include_str!("../../scenarios/fig3b.json")),
    ("table1-low", include_str!("../../scenarios/table1-low.json")),
    ("table1-high-noswitch", include_str!("../../scenarios/table1-high-noswitch.json")),
    ("table1-handler", include_str!("../../scenarios/table1-handler.json")),
    ("passive-server", include_str!("../../scenarios/passive-server.json")),
    ("rollback", include_str!("../../scenarios/rollback.json")),
];

const GOLDEN: [(&str, &str); 6] = [
    ("budget-ex-a", include_str!("../../golden/budget-ex-a.csv")),
    ("budget-ex-b", include_str!("../../golden/budget-ex-b.csv")),
    ("mc-params-low", include_str!("../../golden/mc-params-low.csv")),
    ("mc-params-high", include_str!("../../golden/mc-params-high.csv")),
    ("mode-switch-counts", include_str!("../../golden/mode-switch-counts.csv")),
    ("edf-sweep", include_str!("../../golden/edf-sweep.csv")),
];

#[derive(Debug, Error)]
pub enum GoldenError {
    #[error("unknown figure `{0}` (known: {known})", known = FIGURES.join(", "))]
    UnknownFigure(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub fn scenario(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn golden(figure: &str) -> Option<&'static str> {
    GOLDEN.iter().find(|(n, _)| *n == figure).map(|(_, t)| *t)
}

/// Build and run a scenario document for its configured duration.
pub fn run_text(text: &str) -> Result<(Engine, Summary), GoldenError> {
    let file = load(text)?;
    let mut e = file.build()?;
    e.check_invariants(true);
    e.run_until(file.duration)?;
    let s = e.finish();
    Ok((e, s))
}

pub fn run_bundled(name: &str) -> Result<(Engine, Summary), GoldenError> {
    run_text(scenario(name).ok_or_else(|| GoldenError::UnknownFigure(name.to_string()))?)
}

/// A named yes/no property of a reproduction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub ok: bool,
}

fn check(name: impl Into<String>, ok: bool) -> Check {
    Check { name: name.into(), ok }
}

#[derive(Clone, Debug)]
pub struct Reproduction {
    pub figure: String,
    pub output: String,
    pub checks: Vec<Check>,
    /// Lines that differ from the golden output, as `-golden` / `+actual`.
    pub diff: Vec<String>,
}

impl Reproduction {
    pub fn passed(&self) -> bool {
        self.diff.is_empty() && self.checks.iter().all(|c| c.ok)
    }
}

fn line_diff(want: &str, got: &str) -> Vec<String> {
    let w: Vec<&str> = want.lines().collect();
    let g: Vec<&str> = got.lines().collect();
    let mut out = Vec::new();
    for i in 0..w.len().max(g.len()) {
        match (w.get(i), g.get(i)) {
            (Some(a), Some(b)) if a == b => {}
            (a, b) => {
                if let Some(a) = a {
                    out.push(format!("{}: -{a}", i + 1));
                }
                if let Some(b) = b {
                    out.push(format!("{}: +{b}", i + 1));
                }
            }
        }
    }
    out
}

fn share(s: &Summary, e: &Engine, name: &str) -> Ratio<u64> {
    let t = e.names().thread_by_name(name).expect("thread exists");
    Ratio::new(s.thread_time(t), s.duration)
}

fn misses(s: &Summary, e: &Engine, name: &str) -> usize {
    s.misses_of(e.names().thread_by_name(name).expect("thread exists"))
}

/// Produce a figure's output and its property checks without comparing to
/// the golden copy.
pub fn render(figure: &str) -> Result<(String, Vec<Check>), GoldenError> {
    match figure {
        "budget-ex-a" => {
            let (e, s) = run_bundled("fig3a")?;
            let checks = [("p3", 1, 5), ("p2", 1, 2), ("p1", 3, 10)]
                .iter()
                .map(|&(n, a, b)| check(format!("u({n}) = {a}/{b}"), share(&s, &e, n) == Ratio::new(a, b)))
                .collect();
            Ok((trace_csv(e.trace(), e.names()), checks))
        }
        "budget-ex-b" => {
            let (e, s) = run_bundled("fig3b")?;
            let checks = vec![
                check("u(a) = 1/2", share(&s, &e, "a") == Ratio::new(1, 2)),
                check("u(b) = 1/2", share(&s, &e, "b") == Ratio::new(1, 2)),
                check("u(c) = 0", share(&s, &e, "c") == Ratio::from_integer(0)),
            ];
            Ok((trace_csv(e.trace(), e.names()), checks))
        }
        "mc-params-low" => {
            let (e, s) = run_bundled("table1-low")?;
            let report = rta(&table1_tasks(2)).expect("distinct priorities");
            let mut checks = vec![check("no deadline misses", s.misses.is_empty())];
            for (n, r) in [("T4", 4), ("T2", 15), ("T1", 25)] {
                checks.push(check(format!("R({n}) = {r}"), report.get(n) == Some(Response::Schedulable(r))));
            }
            Ok((summary_csv(&s, e.names()), checks))
        }
        "mc-params-high" => {
            let (e, s) = run_bundled("table1-handler")?;
            let mut checks: Vec<Check> =
                ["T5", "T4", "T2"].iter().map(|n| check(format!("{n} meets every deadline"), misses(&s, &e, n) == 0)).collect();
            let k = e.kernel();
            let eff = |n: &str| k.thread(e.names().thread_by_name(n).expect("thread exists")).effective_priority;
            checks.push(check("system criticality 1", k.system_criticality() == 1));
            checks.push(check("T3 below every high task", ["T5", "T4", "T2"].iter().all(|n| eff("T3") < eff(n))));
            Ok((summary_csv(&s, e.names()), checks))
        }
        "mode-switch-counts" => {
            let rows = mode_switch_benchmark();
            let mut out = String::from("level,boost_count,up_ops,down_ops\n");
            for r in &rows {
                let _ = writeln!(out, "{},{},{},{}", r.level, r.boost_count, r.up_ops, r.down_ops);
            }
            let counts: Vec<usize> = rows.iter().map(|r| r.boost_count).collect();
            let linear = rows
                .iter()
                .all(|r| r.up_ops <= MODE_SWITCH_K * r.boost_count as u64 && r.down_ops <= MODE_SWITCH_K * r.boost_count as u64);
            let checks = vec![check("boost counts 4/12/28", counts == [4, 12, 28]), check("ops <= 3 * boosted", linear)];
            Ok((out, checks))
        }
        "edf-sweep" => {
            let mut out = String::from("set,tasks,utilization,hyperperiod,jobs,misses\n");
            let mut total = 0;
            for (i, set) in edf_sweep_sets(EDF_SWEEP_SETS, EDF_SWEEP_SEED).iter().enumerate() {
                let r = run_edf_set(set)?;
                total += r.misses;
                let u = utilization(set);
                let _ = writeln!(out, "{i},{},{}/{},{},{},{}", set.tasks.len(), u.numer(), u.denom(), r.hyperperiod, r.jobs, r.misses);
            }
            Ok((out, vec![check("no deadline misses", total == 0)]))
        }
        other => Err(GoldenError::UnknownFigure(other.to_string())),
    }
}

/// Render `figure` and diff it against the committed golden output.
pub fn reproduce(figure: &str) -> Result<Reproduction, GoldenError> {
    let want = golden(figure).ok_or_else(|| GoldenError::UnknownFigure(figure.to_string()))?;
    let (output, checks) = render(figure)?;
    let diff = line_diff(want, &output);
    Ok(Reproduction { figure: figure.to_string(), output, checks, diff })
}

/// The fixed-priority task set of the mixed-criticality example, with the
/// given budget for T4.
pub fn table1_tasks(t4_budget: Time) -> TaskSet {
    use crate::analysis::TaskSpec;
    let mk = |n: &str, c: u32, p: u32, t: Time, b: Time| TaskSpec { criticality: c, ..TaskSpec::new(n, t, b, p) };
    TaskSet::new(vec![
        mk("T5", 1, 6, 10, 2),
        mk("T4", 1, 5, 20, t4_budget),
        mk("T3", 0, 4, 25, 5),
        mk("T2", 1, 3, 40, 4),
        mk("T1", 0, 2, 60, 6),
    ])
}

/// Per-boosted-thread bound on queue operations in a mode switch.
pub const MODE_SWITCH_K: u64 = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeSwitchRow {
    pub level: u32,
    pub boost_count: usize,
    /// Threads touched plus ready-queue operations, switching 0 to `level`.
    pub up_ops: u64,
    /// The same, switching back to 0.
    pub down_ops: u64,
}

/// 60 ready threads, 32/16/8/4 at criticality 0/1/2/3, switched from level
/// 0 to each higher level and back.
pub fn mode_switch_benchmark() -> Vec<ModeSwitchRow> {
    let mut k = Kernel::new(KernelConfig { priority_bits: 8, crit_levels: 4, kernel_wcet: 1 }).expect("valid config");
    let ctl = k.create_thread(255, 0).expect("valid priority");
    k.grant(ctl, Authority::SchedControl);
    let mut prio = 1;
    for (crit, count) in [(0, 32), (1, 16), (2, 8), (3, 4)] {
        for _ in 0..count {
            let t = k.create_thread(prio, crit).expect("valid priority");
            let sc = k.create_sc();
            k.setup_configure(sc, 1000, 1000).expect("valid parameters");
            k.setup_bind(sc, t).expect("fresh context");
            k.start(t);
            prio += 1;
        }
    }
    let cost = |k: &Kernel| k.ledger().crit_threads_touched + k.ledger().ready_queue_ops;
    [3, 2, 1]
        .into_iter()
        .map(|level| {
            let before = cost(&k);
            let sw = k.set_system_criticality(ctl, level).expect("valid level");
            let mid = cost(&k);
            k.set_system_criticality(ctl, 0).expect("valid level");
            ModeSwitchRow { level, boost_count: sw.boost_count, up_ops: mid - before, down_ops: cost(&k) - mid }
        })
        .collect()
}

pub const EDF_SWEEP_SETS: usize = 100;
pub const EDF_SWEEP_SEED: u64 = 2016;
/// Every period divides this, so hyperperiods stay at most this long.
pub const EDF_PERIOD_LCM: Time = 100_000;

/// Random task sets of up to 8 tasks at total utilization 1, periods drawn
/// from the divisors of [`EDF_PERIOD_LCM`] between 10 and 100 ms.
pub fn edf_sweep_sets(count: usize, seed: u64) -> Vec<TaskSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let allowed = divisors_in(EDF_PERIOD_LCM, 10 * TICKS_PER_MS, 100 * TICKS_PER_MS);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=8);
            let utils = randfixedsum_with(n, 1.0, &mut rng).expect("valid parameters");
            let mut set = make_taskset_from(&utils, &allowed, rng.gen());
            trim_to_total(&mut set, Ratio::from_integer(1));
            set
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdfRun {
    pub hyperperiod: Time,
    pub jobs: u64,
    pub misses: usize,
}

/// Run `set` under the user-level EDF scheduler for one hyperperiod.
pub fn run_edf_set(set: &TaskSet) -> Result<EdfRun, GoldenError> {
    let h = hyperperiod(set).expect("non-empty set");
    let mut sys = build_edf(set, 0);
    sys.engine.run_until(h)?;
    let s = sys.engine.finish();
    Ok(EdfRun { hyperperiod: h, jobs: s.jobs_done.iter().map(|&(_, j)| j).sum(), misses: s.misses.len() })
}
