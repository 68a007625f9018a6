//! Scenario files: JSON descriptions of kernel objects, threads with
//! behavior scripts, and external events.

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use super::script::{Op, Operand, Script};
use super::{Engine, JobSpec};
use crate::analysis::{hyperperiod, TaskSet};
use crate::kernel::Kernel;
use crate::model::*;
use crate::syscall::Syscall;
use crate::timefault::FaultAction;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("{}", self.render())]
pub struct ConfigError {
    /// Location in the document, e.g. `threads[2].script[0].ep`.
    pub path: String,
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { path: path.into(), message: message.into(), line: None, column: None }
    }

    fn render(&self) -> String {
        let mut s = String::new();
        if let (Some(l), Some(c)) = (self.line, self.column) {
            s.push_str(&format!("line {l}, column {c}: "));
        }
        if !self.path.is_empty() {
            s.push_str(&format!("{}: ", self.path));
        }
        s.push_str(&self.message);
        s
    }
}

fn default_true() -> bool {
    true
}

fn default_duration() -> Time {
    1000
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub config: KernelConfig,
    #[serde(default = "default_duration")]
    pub duration: Time,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scheduling_contexts: Vec<ScDef>,
    #[serde(default)]
    pub endpoints: Vec<String>,
    #[serde(default)]
    pub notifications: Vec<NtfnDef>,
    pub threads: Vec<ThreadDef>,
    #[serde(default)]
    pub events: Vec<EventDef>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScDef {
    pub name: String,
    pub budget: Time,
    pub period: Time,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtfnDef {
    pub name: String,
    #[serde(default)]
    pub bound_to: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventDef {
    pub at: Time,
    pub signal: String,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobDef {
    pub period: Time,
    #[serde(default)]
    pub offset: Time,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreadDef {
    pub name: String,
    pub priority: u32,
    #[serde(default)]
    pub mcp: u32,
    #[serde(default)]
    pub criticality: u32,
    #[serde(default)]
    pub mcc: u32,
    #[serde(default)]
    pub sc: Option<String>,
    #[serde(default)]
    pub timeout_handler: Option<String>,
    #[serde(default)]
    pub caps: Vec<String>,
    #[serde(default)]
    pub job: Option<JobDef>,
    #[serde(default = "default_true")]
    pub start: bool,
    #[serde(default)]
    pub script: Vec<RawOp>,
}

fn one() -> u64 {
    1
}

/// Script verb as written in a scenario file.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum RawOp {
    Compute { ticks: Option<Time>, reg: Option<usize> },
    ComputeRand { min: Time, max: Time },
    JobDone,
    Goto { to: usize },
    Halt,
    Checkpoint { resume: usize },
    Set { reg: usize, value: u64 },
    Add { reg: usize, value: Option<u64>, src: Option<usize> },
    AddMsg { reg: usize },
    ProgramTimer { ntfn: String, delay: Time },
    Call { ep: String, #[serde(default)] badge: u64, badge_reg: Option<usize>, #[serde(default = "default_true")] donate: bool },
    Send { ep: String, #[serde(default)] badge: u64 },
    Nbsend { ep: String, #[serde(default)] badge: u64 },
    Recv { ep: String },
    Reply { #[serde(default)] badge: u64, badge_reg: Option<usize> },
    ReplyRecv { ep: String, #[serde(default)] badge: u64, badge_reg: Option<usize> },
    NbsendWait { send: String, recv: String, #[serde(default)] badge: u64 },
    Signal { ntfn: String },
    Wait { ntfn: String },
    SignalRecv { ntfn: String, ep: String },
    SignalWait { signal: String, wait: String },
    Yield { sc: Option<String> },
    YieldTo { sc: String },
    Consume { sc: String },
    Configure { sc: String, budget: Time, period: Time, #[serde(default)] data: u64 },
    Bind { sc: String, thread: String },
    Unbind { sc: String },
    SetPriority { thread: String, priority: u32 },
    SetCriticality { thread: String, criticality: u32 },
    SetSystemCriticality { level: u32 },
    SaveCaller { target: String, slot: u32 },
    SetCaller { slot: u32 },
    SwapCaller { a: String, b: String },
    FaultReply { action: String, #[serde(default)] amount: Time, #[serde(default = "one")] level: u64 },
    Suspend { thread: String },
    Resume { thread: String },
}

/// Name lookups used while resolving a scenario.
struct Ids {
    threads: BTreeMap<String, ThreadId>,
    scs: BTreeMap<String, ScId>,
    eps: BTreeMap<String, EpId>,
    ntfns: BTreeMap<String, NtfnId>,
}

fn lookup<T: Copy>(map: &BTreeMap<String, T>, name: &str, what: &str, path: &str) -> Result<T, ConfigError> {
    map.get(name).copied().ok_or_else(|| ConfigError::at(path, format!("unknown {what} `{name}`")))
}

impl Ids {
    fn thread(&self, n: &str, p: &str) -> Result<ThreadId, ConfigError> {
        lookup(&self.threads, n, "thread", p)
    }
    fn sc(&self, n: &str, p: &str) -> Result<ScId, ConfigError> {
        lookup(&self.scs, n, "scheduling context", p)
    }
    fn ep(&self, n: &str, p: &str) -> Result<EpId, ConfigError> {
        lookup(&self.eps, n, "endpoint", p)
    }
    fn ntfn(&self, n: &str, p: &str) -> Result<NtfnId, ConfigError> {
        lookup(&self.ntfns, n, "notification", p)
    }
}

fn parse_slot(s: &str, p: &str) -> Result<ReplySlot, ConfigError> {
    if s == "caller" {
        return Ok(ReplySlot::Caller);
    }
    s.strip_prefix("saved:")
        .and_then(|n| n.parse().ok())
        .map(ReplySlot::Saved)
        .ok_or_else(|| ConfigError::at(p, format!("bad reply slot `{s}` (want `caller` or `saved:N`)")))
}

fn parse_rights(s: &str, p: &str) -> Result<Rights, ConfigError> {
    match s {
        "r" => Ok(Rights::RECV),
        "w" => Ok(Rights::SEND),
        "rw" | "wr" => Ok(Rights::ALL),
        _ => Err(ConfigError::at(p, format!("bad rights `{s}`"))),
    }
}

fn parse_cap(s: &str, ids: &Ids, p: &str) -> Result<Authority, ConfigError> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["sched_control"] => Ok(Authority::SchedControl),
        ["sc", n] => Ok(Authority::ScCap(ids.sc(n, p)?)),
        ["tcb", n] => Ok(Authority::TcbCap(ids.thread(n, p)?)),
        ["ep", n, r] => Ok(Authority::EndpointCap(ids.ep(n, p)?, parse_rights(r, p)?)),
        ["ep", n] => Ok(Authority::EndpointCap(ids.ep(n, p)?, Rights::ALL)),
        ["ntfn", n, r] => Ok(Authority::NtfnCap(ids.ntfn(n, p)?, parse_rights(r, p)?)),
        ["ntfn", n] => Ok(Authority::NtfnCap(ids.ntfn(n, p)?, Rights::ALL)),
        _ => Err(ConfigError::at(p, format!("bad capability `{s}`"))),
    }
}

fn resolve_op(op: &RawOp, own_sc: Option<ScId>, ids: &Ids, p: &str) -> Result<Op, ConfigError> {
    let sys = |call: Syscall| Op::Sys { call, badge: None };
    let with_reg = |call: Syscall, r: Option<usize>| Op::Sys { call, badge: r.map(Operand::Reg) };
    let reg = |r: usize| if r < 8 { Ok(r) } else { Err(ConfigError::at(p, format!("register {r} out of range 0..8"))) };
    Ok(match op {
        RawOp::Compute { ticks: Some(t), reg: None } => Op::Compute(Operand::Imm(*t)),
        RawOp::Compute { ticks: None, reg: Some(r) } => Op::Compute(Operand::Reg(reg(*r)?)),
        RawOp::Compute { .. } => return Err(ConfigError::at(p, "compute needs exactly one of `ticks` or `reg`")),
        RawOp::ComputeRand { min, max } => {
            if min > max {
                return Err(ConfigError::at(p, "compute_rand needs min <= max"));
            }
            Op::ComputeRand { min: *min, max: *max }
        }
        RawOp::JobDone => Op::JobDone,
        RawOp::Goto { to } => Op::Goto(*to),
        RawOp::Halt => Op::Halt,
        RawOp::Checkpoint { resume } => Op::Checkpoint { resume: *resume },
        RawOp::Set { reg: r, value } => Op::Set { reg: reg(*r)?, value: *value },
        RawOp::Add { reg: r, value: Some(v), src: None } => Op::Add { reg: reg(*r)?, value: Operand::Imm(*v) },
        RawOp::Add { reg: r, value: None, src: Some(s) } => Op::Add { reg: reg(*r)?, value: Operand::Reg(reg(*s)?) },
        RawOp::Add { .. } => return Err(ConfigError::at(p, "add needs exactly one of `value` or `src`")),
        RawOp::AddMsg { reg: r } => Op::Add { reg: reg(*r)?, value: Operand::Reg(super::script::MSG_REG) },
        RawOp::ProgramTimer { ntfn, delay } => Op::ProgramTimer { ntfn: ids.ntfn(ntfn, p)?, delay: *delay },
        RawOp::Call { ep, badge, badge_reg, donate } => {
            with_reg(Syscall::Call { ep: ids.ep(ep, p)?, badge: *badge, donate: *donate }, *badge_reg)
        }
        RawOp::Send { ep, badge } => sys(Syscall::Send { ep: ids.ep(ep, p)?, badge: *badge }),
        RawOp::Nbsend { ep, badge } => sys(Syscall::NbSend { ep: ids.ep(ep, p)?, badge: *badge }),
        RawOp::Recv { ep } => sys(Syscall::Recv { ep: ids.ep(ep, p)? }),
        RawOp::Reply { badge, badge_reg } => with_reg(Syscall::Reply { badge: *badge }, *badge_reg),
        RawOp::ReplyRecv { ep, badge, badge_reg } => {
            with_reg(Syscall::ReplyRecv { ep: ids.ep(ep, p)?, badge: *badge }, *badge_reg)
        }
        RawOp::NbsendWait { send, recv, badge } => {
            sys(Syscall::NbSendWait { send: ids.ep(send, p)?, recv: ids.ep(recv, p)?, badge: *badge })
        }
        RawOp::Signal { ntfn } => sys(Syscall::Signal { ntfn: ids.ntfn(ntfn, p)? }),
        RawOp::Wait { ntfn } => sys(Syscall::Wait { ntfn: ids.ntfn(ntfn, p)? }),
        RawOp::SignalRecv { ntfn, ep } => sys(Syscall::SignalRecv { ntfn: ids.ntfn(ntfn, p)?, ep: ids.ep(ep, p)? }),
        RawOp::SignalWait { signal, wait } => {
            sys(Syscall::SignalWait { signal: ids.ntfn(signal, p)?, wait: ids.ntfn(wait, p)? })
        }
        RawOp::Yield { sc } => {
            let sc = match sc {
                Some(n) => ids.sc(n, p)?,
                None => own_sc.ok_or_else(|| ConfigError::at(p, "yield without `sc` in a thread with no home SC"))?,
            };
            sys(Syscall::Yield { sc })
        }
        RawOp::YieldTo { sc } => sys(Syscall::YieldTo { sc: ids.sc(sc, p)? }),
        RawOp::Consume { sc } => sys(Syscall::Consume { sc: ids.sc(sc, p)? }),
        RawOp::Configure { sc, budget, period, data } => {
            sys(Syscall::Configure { sc: ids.sc(sc, p)?, budget: *budget, period: *period, data: *data })
        }
        RawOp::Bind { sc, thread } => sys(Syscall::Bind { sc: ids.sc(sc, p)?, thread: ids.thread(thread, p)? }),
        RawOp::Unbind { sc } => sys(Syscall::Unbind { sc: ids.sc(sc, p)? }),
        RawOp::SetPriority { thread, priority } => {
            sys(Syscall::SetPriority { thread: ids.thread(thread, p)?, priority: *priority })
        }
        RawOp::SetCriticality { thread, criticality } => {
            sys(Syscall::SetCriticality { thread: ids.thread(thread, p)?, criticality: *criticality })
        }
        RawOp::SetSystemCriticality { level } => sys(Syscall::SetSystemCriticality { level: *level }),
        RawOp::SaveCaller { target, slot } => sys(Syscall::SaveCaller { target: ids.thread(target, p)?, slot: *slot }),
        RawOp::SetCaller { slot } => sys(Syscall::SetCaller { slot: *slot }),
        RawOp::SwapCaller { a, b } => sys(Syscall::SwapCaller { a: parse_slot(a, p)?, b: parse_slot(b, p)? }),
        RawOp::FaultReply { action, amount, level } => {
            let action = match action.as_str() {
                "extend" => FaultAction::ExtendBudget(*amount),
                "rollback" => FaultAction::RollbackAndReset { checkpoint: None },
                "suspend_owner" => FaultAction::SuspendOwner,
                "raise" => FaultAction::RaiseSystemCriticality(*level as u32),
                other => return Err(ConfigError::at(p, format!("unknown fault action `{other}`"))),
            };
            sys(Syscall::FaultReply { action })
        }
        RawOp::Suspend { thread } => sys(Syscall::Suspend { thread: ids.thread(thread, p)? }),
        RawOp::Resume { thread } => sys(Syscall::Resume { thread: ids.thread(thread, p)? }),
    })
}

fn check_unique<'a>(names: impl Iterator<Item = &'a String>, section: &str) -> Result<(), ConfigError> {
    let mut seen = std::collections::BTreeSet::new();
    for (i, n) in names.enumerate() {
        if !seen.insert(n) {
            return Err(ConfigError::at(format!("{section}[{i}].name"), format!("duplicate name `{n}`")));
        }
    }
    Ok(())
}

fn kerr(path: String, e: KernelError) -> ConfigError {
    ConfigError::at(path, e.to_string())
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError {
            path: String::new(),
            message: e.to_string(),
            line: Some(e.line()),
            column: Some(e.column()),
        })
    }

    /// Build an engine ready to run.
    pub fn build(&self) -> Result<Engine, ConfigError> {
        self.config.validate().map_err(|e| kerr("config".into(), e))?;
        check_unique(self.threads.iter().map(|t| &t.name), "threads")?;
        check_unique(self.scheduling_contexts.iter().map(|s| &s.name), "scheduling_contexts")?;
        check_unique(self.notifications.iter().map(|n| &n.name), "notifications")?;
        let mut k = Kernel::new(self.config).map_err(|e| kerr("config".into(), e))?;
        let mut ids = Ids { threads: BTreeMap::new(), scs: BTreeMap::new(), eps: BTreeMap::new(), ntfns: BTreeMap::new() };

        for (i, s) in self.scheduling_contexts.iter().enumerate() {
            let sc = k.create_sc();
            k.setup_configure(sc, s.budget, s.period).map_err(|e| kerr(format!("scheduling_contexts[{i}]"), e))?;
            ids.scs.insert(s.name.clone(), sc);
        }
        for (i, name) in self.endpoints.iter().enumerate() {
            if ids.eps.insert(name.clone(), k.create_endpoint()).is_some() {
                return Err(ConfigError::at(format!("endpoints[{i}]"), format!("duplicate name `{name}`")));
            }
        }
        for n in &self.notifications {
            ids.ntfns.insert(n.name.clone(), k.create_notification());
        }
        for (i, t) in self.threads.iter().enumerate() {
            let p = format!("threads[{i}]");
            let id = k.create_thread(t.priority, t.criticality).map_err(|e| kerr(p, e))?;
            ids.threads.insert(t.name.clone(), id);
        }

        let mut own_sc = Vec::new();
        for (i, t) in self.threads.iter().enumerate() {
            let p = format!("threads[{i}]");
            let id = ids.threads[&t.name];
            k.set_mcp(id, t.mcp);
            if t.mcc >= self.config.crit_levels {
                return Err(ConfigError::at(format!("{p}.mcc"), "mcc exceeds the number of criticality levels"));
            }
            k.set_mcc(id, t.mcc);
            k.grant(id, Authority::TcbCap(id));
            let sc = match &t.sc {
                Some(n) => {
                    let sc = ids.sc(n, &format!("{p}.sc"))?;
                    k.setup_bind(sc, id).map_err(|e| kerr(format!("{p}.sc"), e))?;
                    k.grant(id, Authority::ScCap(sc));
                    Some(sc)
                }
                None => None,
            };
            own_sc.push(sc);
            if let Some(h) = &t.timeout_handler {
                k.set_timeout_handler(id, Some(ids.ep(h, &format!("{p}.timeout_handler"))?));
            }
            for (j, c) in t.caps.iter().enumerate() {
                k.grant(id, parse_cap(c, &ids, &format!("{p}.caps[{j}]"))?);
            }
        }
        for (i, n) in self.notifications.iter().enumerate() {
            if let Some(b) = &n.bound_to {
                let t = ids.thread(b, &format!("notifications[{i}].bound_to"))?;
                k.bind_notification(ids.ntfns[&n.name], t);
            }
        }

        let mut scripts = Vec::new();
        for (i, t) in self.threads.iter().enumerate() {
            let ops = t
                .script
                .iter()
                .enumerate()
                .map(|(j, op)| resolve_op(op, own_sc[i], &ids, &format!("threads[{i}].script[{j}]")))
                .collect::<Result<Vec<_>, _>>()?;
            for (j, op) in ops.iter().enumerate() {
                let target = match op {
                    Op::Goto(to) => Some(*to),
                    Op::Checkpoint { resume } => Some(*resume),
                    _ => None,
                };
                if target.is_some_and(|to| to > ops.len()) {
                    return Err(ConfigError::at(format!("threads[{i}].script[{j}]"), "jump target past end of script"));
                }
            }
            scripts.push(ops);
        }

        let mut engine = Engine::new(k, self.seed);
        for (i, t) in self.threads.iter().enumerate() {
            let id = ids.threads[&t.name];
            engine.names_mut().threads.insert(id, t.name.clone());
            engine.set_behavior(id, Box::new(Script::new(std::mem::take(&mut scripts[i]))));
            if let Some(j) = &t.job {
                if j.period == 0 {
                    return Err(ConfigError::at(format!("threads[{i}].job.period"), "period must be positive"));
                }
                engine.set_job(id, JobSpec { period: j.period, offset: j.offset });
            }
        }
        for (name, &sc) in &ids.scs {
            engine.names_mut().scs.insert(sc, name.clone());
        }
        for (name, &ep) in &ids.eps {
            engine.names_mut().eps.insert(ep, name.clone());
        }
        for (name, &n) in &ids.ntfns {
            engine.names_mut().ntfns.insert(n, name.clone());
        }
        for (i, e) in self.events.iter().enumerate() {
            let n = ids.ntfn(&e.signal, &format!("events[{i}].signal"))?;
            engine.add_event(e.at, n);
        }
        for t in &self.threads {
            if t.start {
                engine.kernel_mut().start(ids.threads[&t.name]);
            }
        }
        Ok(engine)
    }
}

/// Scenario in which every task of `set` is a periodic thread with its own
/// SC (B, T): each job computes for B, then yields until its next period.
/// Runs for one hyperperiod.
pub fn taskset_scenario(set: &TaskSet, config: KernelConfig) -> ScenarioFile {
    let threads = set
        .tasks
        .iter()
        .map(|t| ThreadDef {
            name: t.name.clone(),
            priority: t.priority,
            mcp: 0,
            criticality: t.criticality.min(config.crit_levels - 1),
            mcc: 0,
            sc: Some(format!("{}_sc", t.name)),
            timeout_handler: None,
            caps: Vec::new(),
            job: Some(JobDef { period: t.period, offset: 0 }),
            start: true,
            script: vec![
                RawOp::Compute { ticks: Some(t.budget), reg: None },
                RawOp::JobDone,
                RawOp::Yield { sc: None },
                RawOp::Goto { to: 0 },
            ],
        })
        .collect();
    ScenarioFile {
        config,
        duration: hyperperiod(set).unwrap_or(default_duration()),
        seed: 0,
        scheduling_contexts: set
            .tasks
            .iter()
            .map(|t| ScDef { name: format!("{}_sc", t.name), budget: t.budget, period: t.period })
            .collect(),
        endpoints: Vec::new(),
        notifications: Vec::new(),
        threads,
        events: Vec::new(),
    }
}

/// Parse either a scenario or a task-set document.
pub fn load(text: &str) -> Result<ScenarioFile, ConfigError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError {
        path: String::new(),
        message: e.to_string(),
        line: Some(e.line()),
        column: Some(e.column()),
    })?;
    if v.get("tasks").is_some() && v.get("threads").is_none() {
        let set: TaskSet = serde_json::from_value(v).map_err(|e| ConfigError::at("tasks", e.to_string()))?;
        set.validate().map_err(|e| ConfigError::at("tasks", e.to_string()))?;
        let prio_bits = set.tasks.iter().map(|t| t.priority).max().unwrap_or(0).max(1).ilog2() + 1;
        let config = KernelConfig { priority_bits: prio_bits.max(8), ..KernelConfig::default() };
        return Ok(taskset_scenario(&set, config));
    }
    ScenarioFile::parse(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_endpoint_reports_path() {
        let text = r#"{"endpoints":["a"],"threads":[{"name":"x","priority":1,"script":[{"op":"recv","ep":"b"}]}]}"#;
        let err = ScenarioFile::parse(text).unwrap().build().err().unwrap();
        assert_eq!(err.path, "threads[0].script[0]");
        assert!(err.message.contains("`b`"));
    }

    #[test]
    fn syntax_error_has_line() {
        let err = ScenarioFile::parse("{\n  \"threads\": [,]\n}").unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn unknown_field_rejected() {
        let err = ScenarioFile::parse(r#"{"threads":[{"name":"x","priority":1,"prio":2}]}"#).unwrap_err();
        assert!(err.message.contains("prio"));
    }

    #[test]
    fn budget_above_period_rejected() {
        let text = r#"{"scheduling_contexts":[{"name":"s","budget":3,"period":2}],"threads":[]}"#;
        let err = ScenarioFile::parse(text).unwrap().build().err().unwrap();
        assert_eq!(err.path, "scheduling_contexts[0]");
    }
}
