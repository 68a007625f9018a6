//! Append-only trace records and the kernel operation-count ledger.

use std::fmt;

use serde::Serialize;

use crate::model::{EpId, NtfnId, ScId, ThreadId, Time};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Category {
    Dispatch,
    Preempt,
    Expire,
    Refill,
    TimerProgram,
    IpcCall,
    IpcReply,
    Donate,
    DonationReturn,
    Signal,
    Wait,
    TimeoutFault,
    FaultReply,
    CritSwitch,
    BorrowedScFault,
    DeadlineMiss,
    Idle,
    JobDone,
    ExternalSignal,
    SyscallError,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Dispatch => "dispatch",
            Category::Preempt => "preempt",
            Category::Expire => "expire",
            Category::Refill => "refill",
            Category::TimerProgram => "timer-program",
            Category::IpcCall => "ipc-call",
            Category::IpcReply => "ipc-reply",
            Category::Donate => "donate",
            Category::DonationReturn => "donation-return",
            Category::Signal => "signal",
            Category::Wait => "wait",
            Category::TimeoutFault => "timeout-fault",
            Category::FaultReply => "fault-reply",
            Category::CritSwitch => "crit-switch",
            Category::BorrowedScFault => "borrowed-sc-fault",
            Category::DeadlineMiss => "deadline-miss",
            Category::Idle => "idle",
            Category::JobDone => "job-done",
            Category::ExternalSignal => "external-signal",
            Category::SyscallError => "syscall-error",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kernel object named in a trace record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ObjRef {
    Thread(ThreadId),
    Sc(ScId),
    Ep(EpId),
    Ntfn(NtfnId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub time: Time,
    pub category: Category,
    pub subject: Option<ObjRef>,
    pub object: Option<ObjRef>,
    /// `key=value` pairs separated by `;`.
    pub detail: String,
}

impl TraceRecord {
    pub fn new(time: Time, category: Category) -> Self {
        TraceRecord { time, category, subject: None, object: None, detail: String::new() }
    }

    pub fn subject(mut self, s: ObjRef) -> Self {
        self.subject = Some(s);
        self
    }

    pub fn object(mut self, o: ObjRef) -> Self {
        self.object = Some(o);
        self
    }

    pub fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }
}

/// Counts of kernel-internal operations. Stands in for cycle costs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OpLedger {
    pub kernel_entries: u64,
    pub scheduler_invocations: u64,
    pub timer_reprograms: u64,
    pub charges: u64,
    pub rollbacks: u64,
    pub fastpath_ipc: u64,
    pub slowpath_ipc: u64,
    pub ready_queue_ops: u64,
    pub release_queue_ops: u64,
    pub crit_threads_touched: u64,
}
