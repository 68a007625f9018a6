//! CSV export of traces and run summaries.

use std::fmt::Write;

use super::{Names, Summary};
use crate::trace::TraceRecord;

pub const TRACE_HEADER: &str = "time,category,subject,object,detail";
pub const SUMMARY_HEADER: &str = "kind,name,metric,value";

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn trace_csv(trace: &[TraceRecord], names: &Names) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        let subject = r.subject.map(|o| names.of(o)).unwrap_or_default();
        let object = r.object.map(|o| names.of(o)).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.time,
            r.category,
            field(&subject),
            field(&object),
            field(&r.detail)
        );
    }
    out
}

pub fn summary_csv(s: &Summary, names: &Names) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    let mut row = |kind: &str, name: &str, metric: &str, value: String| {
        let _ = writeln!(out, "{kind},{},{metric},{value}", field(name));
    };
    row("system", "", "duration", s.duration.to_string());
    row("system", "", "idle", s.idle.to_string());
    for &(t, v) in &s.thread_time {
        let n = names.thread(t);
        row("thread", &n, "run_time", v.to_string());
        let done = s.jobs_done.iter().find(|(x, _)| *x == t).map_or(0, |&(_, d)| d);
        row("thread", &n, "jobs_done", done.to_string());
        row("thread", &n, "deadline_misses", s.misses_of(t).to_string());
    }
    for &(sc, v) in &s.sc_charged {
        row("sc", &names.sc(sc), "charged", v.to_string());
    }
    for (&(t, sc), &v) in &s.run_matrix {
        row("run", &format!("{}@{}", names.thread(t), names.sc(sc)), "time", v.to_string());
    }
    for m in &s.misses {
        let completed = m.completed.map_or("none".to_string(), |c| c.to_string());
        row("miss", &names.thread(m.thread), &format!("job={};deadline={}", m.job, m.deadline), completed);
    }
    let l = &s.ledger;
    for (metric, v) in [
        ("kernel_entries", l.kernel_entries),
        ("scheduler_invocations", l.scheduler_invocations),
        ("timer_reprograms", l.timer_reprograms),
        ("charges", l.charges),
        ("rollbacks", l.rollbacks),
        ("fastpath_ipc", l.fastpath_ipc),
        ("slowpath_ipc", l.slowpath_ipc),
        ("ready_queue_ops", l.ready_queue_ops),
        ("release_queue_ops", l.release_queue_ops),
        ("crit_threads_touched", l.crit_threads_touched),
    ] {
        row("ledger", "", metric, v.to_string());
    }
    out
}
