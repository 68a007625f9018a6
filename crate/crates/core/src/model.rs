//! Kernel object types shared by the scheduling, IPC, fault and criticality
//! code: threads, scheduling contexts, endpoints, notifications, reply
//! capabilities and the authority table.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in ticks. One tick is one simulated microsecond.
pub type Time = u64;

/// Ticks per simulated millisecond.
pub const TICKS_PER_MS: Time = 1000;

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident, $prefix:literal) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Index of a thread control block.
    ThreadId,
    "t"
);
id_type!(
    /// Index of a scheduling context.
    ScId,
    "sc"
);
id_type!(
    /// Index of an IPC endpoint.
    EpId,
    "ep"
);
id_type!(
    /// Index of a notification object.
    NtfnId,
    "ntfn"
);

/// Errors returned by kernel operations. A failed operation leaves kernel
/// state untouched.
#[derive(Clone, Copy, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelError {
    #[error("missing authority for operation")]
    NoAuthority,
    #[error("scheduling context or thread already bound")]
    AlreadyBound,
    #[error("scheduling context not bound")]
    NotBound,
    #[error("requested priority exceeds the caller's maximum controlled priority")]
    ExceedsMcp,
    #[error("requested criticality exceeds the caller's maximum controlled criticality")]
    ExceedsMcc,
    #[error("scheduling context has insufficient budget")]
    NoBudget,
    #[error("invalid budget/period parameters")]
    BadParams,
    #[error("criticality level out of range")]
    BadLevel,
    #[error("receiver is passive and the sender refused to donate its scheduling context")]
    DonationRefused,
    #[error("no reply capability in the reply slot")]
    NoReplyCap,
    #[error("reply slot is empty")]
    EmptySlot,
    #[error("no outstanding timeout fault")]
    NoFault,
    #[error("notification already has a waiter")]
    NotificationBusy,
    #[error("invalid object reference")]
    InvalidObject,
    #[error("thread is not in a state that allows this operation")]
    BadState,
}

pub type KernelResult<T> = Result<T, KernelError>;

/// Build-time kernel parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    /// Number of base-priority bits (`Np`); base priorities are `0..2^Np`.
    pub priority_bits: u32,
    /// Number of criticality levels (`Ncrit`).
    pub crit_levels: u32,
    /// Worst-case kernel operation time. Threads need at least this much
    /// budget left to be admitted to the ready queues.
    pub kernel_wcet: Time,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { priority_bits: 8, crit_levels: 4, kernel_wcet: 1 }
    }
}

/// Upper bound on `Ncrit * 2^Np`.
pub const MAX_EFFECTIVE_PRIORITIES: u32 = 1024;

impl KernelConfig {
    pub fn validate(&self) -> KernelResult<()> {
        if self.crit_levels == 0 || self.priority_bits > 10 {
            return Err(KernelError::BadParams);
        }
        let total = (self.crit_levels as u64) << self.priority_bits;
        if total > MAX_EFFECTIVE_PRIORITIES as u64 {
            return Err(KernelError::BadParams);
        }
        Ok(())
    }

    pub fn num_base_priorities(&self) -> u32 {
        1 << self.priority_bits
    }

    pub fn num_effective_priorities(&self) -> u32 {
        self.crit_levels << self.priority_bits
    }

    pub fn max_base_priority(&self) -> u32 {
        self.num_base_priorities() - 1
    }

    /// Effective priority of a thread at system criticality `level`.
    pub fn effective_priority(&self, base: u32, criticality: u32, level: u32) -> u32 {
        if level > 0 && criticality >= level {
            base | (level << self.priority_bits)
        } else {
            base
        }
    }
}

/// Scheduling-relevant state of a thread.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThreadState {
    Running,
    Ready,
    /// Runnable but waiting in the release queue for a budget refill.
    OutOfBudget,
    BlockedSend(EpId),
    BlockedRecv(EpId),
    BlockedOnReply,
    /// Waiting for its timeout handler to reply to a fault.
    BlockedOnFault,
    WaitingNotification(NtfnId),
    /// Would run, but holds no scheduling context.
    NoSchedContext,
    Suspended,
}

impl ThreadState {
    pub fn is_blocked(self) -> bool {
        matches!(
            self,
            ThreadState::BlockedSend(_)
                | ThreadState::BlockedRecv(_)
                | ThreadState::BlockedOnReply
                | ThreadState::BlockedOnFault
                | ThreadState::WaitingNotification(_)
        )
    }
}

/// Scenario-visible user state of a thread: a program counter and a small
/// register file, plus the last committed copy used for rollback.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserContext {
    pub pc: usize,
    pub regs: [u64; 8],
    pub checkpoint: Option<Checkpoint>,
    /// Number of rollbacks applied; in-flight work is discarded on change.
    pub rollbacks: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub pc: usize,
    pub regs: [u64; 8],
}

impl UserContext {
    /// Commit the current registers as the consistent state; a rollback
    /// resumes at `resume_pc`.
    pub fn commit(&mut self, resume_pc: usize) {
        self.checkpoint = Some(Checkpoint { pc: resume_pc, regs: self.regs });
    }
}

/// Why a timeout fault was raised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultReason {
    BudgetExpired,
    CriticalitySwitch,
}

/// Fault message sent to a timeout handler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeoutFault {
    pub faulting_thread: ThreadId,
    pub sc_in_use: Option<ScId>,
    pub sc_owner: Option<ThreadId>,
    pub reason: FaultReason,
    pub timestamp: Time,
}

/// Something delivered to a thread's mailbox on wake-up or syscall return.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    /// IPC from `sender` (`None` when synthesised from a bound notification).
    Ipc { badge: u64, sender: Option<ThreadId> },
    Reply { badge: u64 },
    Notification { badge: u64 },
    Fault(TimeoutFault),
    Value(u64),
    Error(KernelError),
}

/// Badge carried by a reply that aborted the request.
pub const ABORT_BADGE: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplyKind {
    Ipc,
    Fault,
}

/// Single-use capability to reply to a blocked caller. Not `Clone`: moving
/// it is the only way to hand it on.
#[derive(Debug, PartialEq, Eq)]
pub struct ReplyCap {
    pub caller: ThreadId,
    /// SC to give back to the caller on reply.
    pub donated_sc: Option<ScId>,
    pub kind: ReplyKind,
}

/// Where a reply capability can be kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReplySlot {
    /// The thread's implicit reply slot, filled by receiving a call.
    Caller,
    /// A numbered storage slot.
    Saved(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchedContext {
    pub id: ScId,
    pub budget: Time,
    pub period: Time,
    pub remaining: Time,
    pub next_refill: Time,
    /// Time accounted since the last `consume` enquiry.
    pub consumed: Time,
    /// Total ever charged; never reset.
    pub charged_total: Time,
    pub home_thread: Option<ThreadId>,
    pub running_thread: Option<ThreadId>,
    pub yield_from: Option<ThreadId>,
    pub data: u64,
    pub configured: bool,
}

impl SchedContext {
    pub fn new(id: ScId) -> Self {
        SchedContext {
            id,
            budget: 0,
            period: 1,
            remaining: 0,
            next_refill: 0,
            consumed: 0,
            charged_total: 0,
            home_thread: None,
            running_thread: None,
            yield_from: None,
            data: 0,
            configured: false,
        }
    }

    pub fn utilization(&self) -> f64 {
        self.budget as f64 / self.period as f64
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct Thread {
    pub id: ThreadId,
    pub base_priority: u32,
    pub effective_priority: u32,
    pub mcp: u32,
    pub criticality: u32,
    pub mcc: u32,
    pub state: ThreadState,
    pub home_sc: Option<ScId>,
    pub current_sc: Option<ScId>,
    pub timeout_handler: Option<EpId>,
    pub reply_slot: Option<ReplyCap>,
    pub call_stack_prev: Option<ThreadId>,
    pub call_stack_next: Option<ThreadId>,
    pub bound_ntfn: Option<NtfnId>,
    pub mailbox: Option<Message>,
    pub fault: Option<TimeoutFault>,
    pub last_recv_ep: Option<EpId>,
    pub user: UserContext,
}

impl Thread {
    pub fn new(id: ThreadId, priority: u32, criticality: u32) -> Self {
        Thread {
            id,
            base_priority: priority,
            effective_priority: priority,
            mcp: 0,
            criticality,
            mcc: 0,
            state: ThreadState::NoSchedContext,
            home_sc: None,
            current_sc: None,
            timeout_handler: None,
            reply_slot: None,
            call_stack_prev: None,
            call_stack_next: None,
            bound_ntfn: None,
            mailbox: None,
            fault: None,
            last_recv_ep: None,
            user: UserContext::default(),
        }
    }

    /// A passive thread has no SC bound to it.
    pub fn is_passive(&self) -> bool {
        self.home_sc.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Send,
    Recv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PendingKind {
    Send,
    Call { donate: bool },
    Fault,
    Recv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pending {
    pub thread: ThreadId,
    pub kind: PendingKind,
    pub badge: u64,
    pub seq: u64,
}

impl Pending {
    pub fn direction(&self) -> Direction {
        match self.kind {
            PendingKind::Recv => Direction::Recv,
            _ => Direction::Send,
        }
    }
}

/// Rendezvous endpoint. Waiters are served by effective priority, FIFO among
/// equal priorities; the order is evaluated when a waiter is taken so that
/// priority changes while queued are respected.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Endpoint {
    pub id: Option<EpId>,
    pub queue: Vec<Pending>,
}

impl Endpoint {
    pub fn direction(&self) -> Option<Direction> {
        self.queue.first().map(Pending::direction)
    }

    pub fn remove(&mut self, thread: ThreadId) -> Option<Pending> {
        let pos = self.queue.iter().position(|p| p.thread == thread)?;
        Some(self.queue.remove(pos))
    }
}

/// Single binary semaphore with an optional waiter and bound thread.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Notification {
    pub word: bool,
    pub waiter: Option<ThreadId>,
    pub bound_thread: Option<ThreadId>,
}

/// Badge delivered when a bound notification arrives as an IPC.
pub const NOTIFICATION_BADGE: u64 = 1 << 63;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rights {
    pub send: bool,
    pub recv: bool,
}

impl Rights {
    pub const SEND: Rights = Rights { send: true, recv: false };
    pub const RECV: Rights = Rights { send: false, recv: true };
    pub const ALL: Rights = Rights { send: true, recv: true };

    pub fn covers(self, needed: Rights) -> bool {
        (self.send || !needed.send) && (self.recv || !needed.recv)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Authority {
    SchedControl,
    ScCap(ScId),
    TcbCap(ThreadId),
    EndpointCap(EpId, Rights),
    NtfnCap(NtfnId, Rights),
}

/// Flat capability table: which thread holds which authority.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuthorityTable {
    held: BTreeSet<(ThreadId, Authority)>,
}

impl AuthorityTable {
    pub fn grant(&mut self, holder: ThreadId, kind: Authority) {
        self.held.insert((holder, kind));
    }

    pub fn revoke(&mut self, holder: ThreadId, kind: Authority) {
        self.held.remove(&(holder, kind));
    }

    pub fn holds(&self, holder: ThreadId, kind: Authority) -> bool {
        match kind {
            Authority::EndpointCap(ep, needed) => self.held.iter().any(|(h, a)| {
                *h == holder && matches!(a, Authority::EndpointCap(e, r) if *e == ep && r.covers(needed))
            }),
            Authority::NtfnCap(n, needed) => self.held.iter().any(|(h, a)| {
                *h == holder && matches!(a, Authority::NtfnCap(e, r) if *e == n && r.covers(needed))
            }),
            other => self.held.contains(&(holder, other)),
        }
    }

    pub fn require(&self, holder: ThreadId, kind: Authority) -> KernelResult<()> {
        if self.holds(holder, kind) {
            Ok(())
        } else {
            Err(KernelError::NoAuthority)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &(ThreadId, Authority)> {
        self.held.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_limits() {
        assert!(KernelConfig { priority_bits: 8, crit_levels: 4, kernel_wcet: 1 }.validate().is_ok());
        assert_eq!(
            KernelConfig { priority_bits: 8, crit_levels: 5, kernel_wcet: 1 }.validate(),
            Err(KernelError::BadParams)
        );
        assert!(KernelConfig { priority_bits: 10, crit_levels: 1, kernel_wcet: 1 }.validate().is_ok());
    }

    #[test]
    fn effective_priority_at_level_zero_is_base() {
        let cfg = KernelConfig::default();
        for crit in 0..4 {
            assert_eq!(cfg.effective_priority(17, crit, 0), 17);
        }
        assert_eq!(cfg.effective_priority(17, 2, 2), 17 | (2 << 8));
        assert_eq!(cfg.effective_priority(17, 1, 2), 17);
    }

    #[test]
    fn endpoint_rights() {
        let mut table = AuthorityTable::default();
        let t = ThreadId(0);
        table.grant(t, Authority::EndpointCap(EpId(1), Rights::SEND));
        assert!(table.holds(t, Authority::EndpointCap(EpId(1), Rights::SEND)));
        assert!(!table.holds(t, Authority::EndpointCap(EpId(1), Rights::RECV)));
        assert!(!table.holds(t, Authority::EndpointCap(EpId(2), Rights::SEND)));
        table.grant(t, Authority::EndpointCap(EpId(1), Rights::ALL));
        assert!(table.holds(t, Authority::EndpointCap(EpId(1), Rights::RECV)));
    }
}
