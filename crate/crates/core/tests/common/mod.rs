//! Independent reference models shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use mcsim::model::{ThreadId, Time};
use mcsim::trace::{Category, ObjRef, TraceRecord};

/// Per-tick owner of the processor, reconstructed from dispatch and idle
/// records.
pub fn timeline(trace: &[TraceRecord], horizon: Time) -> Vec<Option<ThreadId>> {
    let mut out = vec![None; horizon as usize];
    let mut cur: Option<ThreadId> = None;
    let mut from = 0;
    let mut paint = |from: Time, to: Time, who: Option<ThreadId>| {
        for t in from..to.min(horizon) {
            out[t as usize] = who;
        }
    };
    for r in trace {
        let who = match (r.category, r.subject) {
            (Category::Dispatch, Some(ObjRef::Thread(t))) => Some(t),
            (Category::Idle, _) => None,
            _ => continue,
        };
        paint(from, r.time, cur);
        cur = who;
        from = r.time;
    }
    paint(from, horizon, cur);
    out
}

/// Always-busy threads `(priority, budget, period)` under fixed priorities,
/// each budget topped up at every multiple of its period. Ties go to the
/// lower index.
pub fn fixed_priority_budgets(threads: &[(u32, Time, Time)], horizon: Time) -> Vec<Option<usize>> {
    let mut left: Vec<Time> = vec![0; threads.len()];
    (0..horizon)
        .map(|t| {
            for (i, &(_, b, p)) in threads.iter().enumerate() {
                if t % p == 0 {
                    left[i] = b;
                }
            }
            let pick = (0..threads.len()).filter(|&i| left[i] > 0).max_by_key(|&i| (threads[i].0, std::cmp::Reverse(i)));
            if let Some(i) = pick {
                left[i] -= 1;
            }
            pick
        })
        .collect()
}

/// Round robin with a one-tick quantum among the highest-priority threads.
pub fn round_robin(priorities: &[u32], horizon: Time) -> Vec<Option<usize>> {
    let top = priorities.iter().copied().max();
    let mut queue: VecDeque<usize> = (0..priorities.len()).filter(|&i| Some(priorities[i]) == top).collect();
    (0..horizon)
        .map(|_| {
            let i = queue.pop_front()?;
            queue.push_back(i);
            Some(i)
        })
        .collect()
}

/// Ideal preemptive EDF over synchronous periodic tasks; ties go to the
/// lower index.
pub fn ideal_edf(periods: &[Time], wcets: &[Time], horizon: Time) -> Vec<Option<usize>> {
    let n = periods.len();
    let mut left = vec![0; n];
    let mut deadline = vec![0; n];
    (0..horizon)
        .map(|t| {
            for i in 0..n {
                if t % periods[i] == 0 {
                    assert_eq!(left[i], 0, "reference overran");
                    left[i] = wcets[i];
                    deadline[i] = t + periods[i];
                }
            }
            let pick = (0..n).filter(|&i| left[i] > 0).min_by_key(|&i| (deadline[i], i));
            if let Some(i) = pick {
                left[i] -= 1;
            }
            pick
        })
        .collect()
}

/// Map a timeline of thread ids to indices into `order`.
pub fn as_indices(tl: &[Option<ThreadId>], order: &[ThreadId]) -> Vec<Option<usize>> {
    tl.iter().map(|t| t.and_then(|t| order.iter().position(|&o| o == t))).collect()
}
