//! Offline schedulability analysis: utilization, the Liu-Layland bound,
//! response-time analysis and hyperperiods.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Time;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub period: Time,
    pub budget: Time,
    /// Higher is more urgent.
    pub priority: u32,
    #[serde(default)]
    pub criticality: u32,
    /// Budget granted in high-criticality mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_hi: Option<Time>,
}

impl TaskSpec {
    pub fn new(name: &str, period: Time, budget: Time, priority: u32) -> Self {
        TaskSpec { name: name.to_string(), period, budget, priority, criticality: 0, budget_hi: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSet {
    pub tasks: Vec<TaskSpec>,
}

impl TaskSet {
    pub fn new(tasks: Vec<TaskSpec>) -> Self {
        TaskSet { tasks }
    }

    /// The same set with every task's high-mode budget in force.
    pub fn high_mode(&self) -> TaskSet {
        let tasks = self
            .tasks
            .iter()
            .map(|t| TaskSpec { budget: t.budget_hi.unwrap_or(t.budget), ..t.clone() })
            .collect();
        TaskSet { tasks }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        for t in &self.tasks {
            if t.period == 0 || t.budget > t.period || t.budget_hi.is_some_and(|b| b > t.period) {
                return Err(AnalysisError::BadTask(t.name.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("tasks {0} and {1} share a priority")]
    TiePriorities(String, String),
    #[error("task {0} has B > T or T = 0")]
    BadTask(String),
}

/// Exact total utilization.
pub fn utilization(set: &TaskSet) -> Ratio<u128> {
    set.tasks
        .iter()
        .fold(Ratio::from_integer(0), |acc, t| acc + Ratio::new(t.budget as u128, t.period as u128))
}

pub fn utilization_f64(set: &TaskSet) -> f64 {
    let u = utilization(set);
    *u.numer() as f64 / *u.denom() as f64
}

/// Liu-Layland utilization bound for `n` tasks under rate-monotonic priorities.
pub fn ll_bound(n: u32) -> f64 {
    assert!(n >= 1, "bound needs at least one task");
    let n = n as f64;
    n * (2f64.powf(1.0 / n) - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Response {
    Schedulable(Time),
    Unschedulable,
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Response::Schedulable(r) => write!(f, "{r}"),
            Response::Unschedulable => f.write_str("unschedulable"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RtaReport {
    /// In the order of the input set.
    pub entries: Vec<(String, Response)>,
}

impl RtaReport {
    pub fn get(&self, name: &str) -> Option<Response> {
        self.entries.iter().find(|(n, _)| n == name).map(|&(_, r)| r)
    }

    pub fn all_schedulable(&self) -> bool {
        self.entries.iter().all(|(_, r)| matches!(r, Response::Schedulable(_)))
    }
}

/// Response-time analysis with implicit deadlines. Each task's response time
/// is the least fixed point of `R = B + sum over higher-priority j of
/// ceil(R / T_j) * B_j`, abandoned once it exceeds the period.
pub fn rta(set: &TaskSet) -> Result<RtaReport, AnalysisError> {
    set.validate()?;
    for (i, a) in set.tasks.iter().enumerate() {
        if let Some(b) = set.tasks[i + 1..].iter().find(|b| b.priority == a.priority) {
            return Err(AnalysisError::TiePriorities(a.name.clone(), b.name.clone()));
        }
    }
    let entries = set
        .tasks
        .iter()
        .map(|t| {
            let hp: Vec<&TaskSpec> = set.tasks.iter().filter(|o| o.priority > t.priority).collect();
            let mut r = t.budget + hp.iter().map(|o| o.budget).sum::<Time>();
            let resp = loop {
                if r > t.period {
                    break Response::Unschedulable;
                }
                let next = t.budget + hp.iter().map(|o| r.div_ceil(o.period) * o.budget).sum::<Time>();
                if next == r {
                    break Response::Schedulable(r);
                }
                r = next;
            };
            (t.name.clone(), resp)
        })
        .collect();
    Ok(RtaReport { entries })
}

fn gcd(a: Time, b: Time) -> Time {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Least common multiple of all periods, or `None` on overflow.
pub fn hyperperiod(set: &TaskSet) -> Option<Time> {
    set.tasks.iter().try_fold(1u64, |acc, t| (acc / gcd(acc, t.period)).checked_mul(t.period))
}

/// Plain-text report used by the `analyze` command.
pub fn report(set: &TaskSet) -> Result<String, AnalysisError> {
    let mut out = String::new();
    let u = utilization(set);
    let n = set.tasks.len() as u32;
    out.push_str(&format!("tasks,{n}\n"));
    out.push_str(&format!("utilization,{}/{},{:.4}\n", u.numer(), u.denom(), utilization_f64(set)));
    if n > 0 {
        let b = ll_bound(n);
        out.push_str(&format!("ll_bound,{b:.4},{}\n", if utilization_f64(set) <= b { "pass" } else { "fail" }));
    }
    match hyperperiod(set) {
        Some(h) => out.push_str(&format!("hyperperiod,{h}\n")),
        None => out.push_str("hyperperiod,overflow\n"),
    }
    for (name, r) in rta(set)?.entries {
        out.push_str(&format!("response,{name},{r}\n"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_task_utilization() {
        let s = TaskSet::new(vec![TaskSpec::new("a", 10, 2, 1)]);
        assert_eq!(utilization(&s), Ratio::new(1, 5));
        let s = TaskSet::new(vec![TaskSpec::new("a", 20, 7, 1)]);
        assert_eq!(utilization(&s), Ratio::new(7, 20));
        assert_eq!(utilization(&TaskSet::default()), Ratio::from_integer(0));
    }

    #[test]
    fn bound_values() {
        assert!((ll_bound(1) - 1.0).abs() < 1e-12);
        assert!((ll_bound(5) - 0.7435).abs() < 0.0005);
        assert!((ll_bound(4) - 0.7568).abs() < 0.0005);
    }

    #[test]
    fn single_full_task_responds_at_period() {
        let s = TaskSet::new(vec![TaskSpec::new("a", 7, 7, 1)]);
        assert_eq!(rta(&s).unwrap().get("a"), Some(Response::Schedulable(7)));
        assert_eq!(hyperperiod(&s), Some(7));
    }

    #[test]
    fn ties_rejected() {
        let s = TaskSet::new(vec![TaskSpec::new("a", 7, 1, 1), TaskSpec::new("b", 9, 1, 1)]);
        assert!(matches!(rta(&s), Err(AnalysisError::TiePriorities(_, _))));
    }

    #[test]
    fn hyperperiods() {
        let s = TaskSet::new([5, 10, 20].iter().map(|&t| TaskSpec::new("x", t, 1, t as u32)).collect());
        assert_eq!(hyperperiod(&s), Some(20));
    }
}
