//! Discrete-event simulator of a capability-based microkernel scheduler
//! with scheduling contexts, budget enforcement, SC donation over IPC,
//! timeout fault handlers and mixed-criticality mode switches.

pub mod analysis;
pub mod crit;
pub mod ipc;
pub mod kernel;
pub mod model;
pub mod sched;
pub mod sim;
pub mod syscall;
pub mod taskgen;
pub mod timefault;
pub mod trace;
pub mod ulsched;

pub use kernel::Kernel;
pub use model::*;
pub use syscall::{Syscall, SyscallOutcome};
pub use timefault::FaultAction;
