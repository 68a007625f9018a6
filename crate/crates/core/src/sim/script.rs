//! Interpreter for the small per-thread behavior scripts used in scenario
//! files. Program counter and registers live in the thread's user context so
//! that a rollback restores them.

use rand::Rng;

use super::{Behavior, Step, StepCx};
use crate::model::*;
use crate::syscall::Syscall;

/// Register that receives the payload of the last message.
pub const MSG_REG: usize = 7;
/// Register that receives `1 + error index` when a syscall fails.
pub const ERR_REG: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operand {
    Imm(u64),
    Reg(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Compute(Operand),
    ComputeRand { min: Time, max: Time },
    JobDone,
    Goto(usize),
    Halt,
    /// Commit registers; a rollback resumes at `resume`.
    Checkpoint { resume: usize },
    Set { reg: usize, value: u64 },
    Add { reg: usize, value: Operand },
    ProgramTimer { ntfn: NtfnId, delay: Time },
    /// A system call; `badge` overrides the call's badge field.
    Sys { call: Syscall, badge: Option<Operand> },
}

/// Zero-time operations a script may execute in one go before it is
/// considered stuck.
const MAX_INLINE_OPS: usize = 10_000;

#[derive(Clone, Debug)]
pub struct Script {
    ops: Vec<Op>,
}

impl Script {
    pub fn new(ops: Vec<Op>) -> Self {
        Script { ops }
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }
}

fn error_index(e: KernelError) -> u64 {
    use KernelError::*;
    let all = [
        NoAuthority, AlreadyBound, NotBound, ExceedsMcp, ExceedsMcc, NoBudget, BadParams, BadLevel,
        DonationRefused, NoReplyCap, EmptySlot, NoFault, NotificationBusy, InvalidObject, BadState,
    ];
    all.iter().position(|&x| x == e).unwrap_or(all.len()) as u64
}

fn with_badge(call: &Syscall, badge: u64) -> Syscall {
    let mut c = call.clone();
    match &mut c {
        Syscall::Call { badge: b, .. }
        | Syscall::Send { badge: b, .. }
        | Syscall::NbSend { badge: b, .. }
        | Syscall::Reply { badge: b }
        | Syscall::ReplyRecv { badge: b, .. }
        | Syscall::NbSendWait { badge: b, .. } => *b = badge,
        _ => {}
    }
    c
}

impl Behavior for Script {
    fn next_step(&mut self, cx: &mut StepCx<'_>) -> Step {
        if let Some(m) = cx.take_mailbox() {
            let regs = &mut cx.user().regs;
            match m {
                Message::Ipc { badge, .. } | Message::Reply { badge } | Message::Notification { badge } => {
                    regs[MSG_REG] = badge
                }
                Message::Value(v) => regs[MSG_REG] = v,
                Message::Fault(f) => regs[MSG_REG] = f.faulting_thread.0 as u64,
                Message::Error(e) => regs[ERR_REG] = 1 + error_index(e),
            }
        }
        for _ in 0..MAX_INLINE_OPS {
            let pc = cx.user().pc;
            let Some(op) = self.ops.get(pc).cloned() else { return Step::Halt };
            cx.user().pc = pc + 1;
            let value = |cx: &mut StepCx<'_>, o: Operand| match o {
                Operand::Imm(v) => v,
                Operand::Reg(r) => cx.user().regs[r],
            };
            match op {
                Op::Compute(o) => {
                    let t = value(cx, o);
                    if t > 0 {
                        return Step::Compute(t);
                    }
                }
                Op::ComputeRand { min, max } => {
                    let t = cx.rng.gen_range(min..=max);
                    if t > 0 {
                        return Step::Compute(t);
                    }
                }
                Op::JobDone => return Step::JobDone,
                Op::Goto(to) => cx.user().pc = to,
                Op::Halt => return Step::Halt,
                Op::Checkpoint { resume } => cx.user().commit(resume),
                Op::Set { reg, value: v } => cx.user().regs[reg] = v,
                Op::Add { reg, value: o } => {
                    let v = value(cx, o);
                    let r = &mut cx.user().regs[reg];
                    *r = r.wrapping_add(v);
                }
                Op::ProgramTimer { ntfn, delay } => return Step::ProgramTimer { ntfn, at: cx.now + delay },
                Op::Sys { call, badge } => {
                    let call = match badge {
                        Some(o) => with_badge(&call, value(cx, o)),
                        None => call,
                    };
                    return Step::Syscall(call);
                }
            }
        }
        Step::Halt
    }
}
