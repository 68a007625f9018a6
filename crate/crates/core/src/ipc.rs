//! Endpoint IPC with scheduling-context donation, notifications, and reply
//! capability storage.

use crate::kernel::Kernel;
use crate::model::*;
use crate::trace::{Category, ObjRef};

impl Kernel {
    /// Index of the waiter to serve next on `ep` in direction `dir`: highest
    /// effective priority, earliest arrival among equals.
    fn best_waiter(&self, ep: EpId, dir: Direction) -> Option<usize> {
        let q = &self.endpoints[ep.index()].queue;
        q.iter()
            .enumerate()
            .filter(|(_, p)| p.direction() == dir)
            .max_by(|(_, a), (_, b)| {
                self.eff(a.thread).cmp(&self.eff(b.thread)).then(b.seq.cmp(&a.seq))
            })
            .map(|(i, _)| i)
    }

    fn enqueue(&mut self, ep: EpId, thread: ThreadId, kind: PendingKind, badge: u64) {
        let seq = self.ep_seq;
        self.ep_seq += 1;
        self.endpoints[ep.index()].queue.push(Pending { thread, kind, badge, seq });
    }

    /// Lend `sc` from `from` to `to`.
    fn donate(&mut self, sc: ScId, from: ThreadId, to: ThreadId) {
        self.attach_sc(sc, to);
        self.threads[from.index()].call_stack_next = Some(to);
        self.threads[to.index()].call_stack_prev = Some(from);
        self.record(Category::Donate, ObjRef::Sc(sc), Some(ObjRef::Thread(to)), format!("from={from}"));
    }

    /// Deliver a call from `client` to the blocked receiver `server`. The
    /// client must already be off the CPU.
    fn deliver_call(&mut self, client: ThreadId, server: ThreadId, badge: u64) {
        let client_sc = self.threads[client.index()].current_sc;
        let donated = match (self.threads[server.index()].current_sc, client_sc) {
            (None, Some(sc)) => {
                self.donate(sc, client, server);
                Some(sc)
            }
            _ => None,
        };
        self.threads[client.index()].state = ThreadState::BlockedOnReply;
        let th = &mut self.threads[server.index()];
        th.reply_slot = Some(ReplyCap { caller: client, donated_sc: donated, kind: ReplyKind::Ipc });
        th.mailbox = Some(Message::Ipc { badge, sender: Some(client) });
        self.record(Category::IpcCall, ObjRef::Thread(client), Some(ObjRef::Thread(server)), format!("badge={badge}"));
    }

    /// Call `ep`, blocking until a reply arrives. With `donate`, the caller
    /// lends its SC to a passive receiver.
    pub fn call(&mut self, client: ThreadId, ep: EpId, badge: u64, donate: bool) -> KernelResult<()> {
        self.check_ep(ep)?;
        self.authority.require(client, Authority::EndpointCap(ep, Rights::SEND))?;
        match self.best_waiter(ep, Direction::Recv) {
            Some(i) => {
                let server = self.endpoints[ep.index()].queue[i].thread;
                if self.threads[server.index()].current_sc.is_none() && !donate {
                    return Err(KernelError::DonationRefused);
                }
                self.endpoints[ep.index()].queue.remove(i);
                let was_current = self.current == Some(client);
                if was_current {
                    self.current = None;
                } else {
                    self.remove_from_sched(client);
                }
                self.deliver_call(client, server, badge);
                let direct = was_current
                    && self.threads[server.index()].current_sc.is_some()
                    && self.threads[server.index()].current_sc == self.current_sc;
                if direct {
                    self.current = Some(server);
                    self.threads[server.index()].state = ThreadState::Running;
                    self.ledger.fastpath_ipc += 1;
                } else {
                    self.make_runnable(server);
                    self.ledger.slowpath_ipc += 1;
                }
            }
            None => {
                self.block(client, ThreadState::BlockedSend(ep));
                self.enqueue(ep, client, PendingKind::Call { donate }, badge);
                self.ledger.slowpath_ipc += 1;
            }
        }
        Ok(())
    }

    /// Send on `ep`. Without `blocking`, the message is dropped if nobody is
    /// waiting.
    pub fn send(&mut self, sender: ThreadId, ep: EpId, badge: u64, blocking: bool) -> KernelResult<()> {
        self.check_ep(ep)?;
        self.authority.require(sender, Authority::EndpointCap(ep, Rights::SEND))?;
        self.do_send(sender, ep, badge, blocking);
        Ok(())
    }

    fn do_send(&mut self, sender: ThreadId, ep: EpId, badge: u64, blocking: bool) {
        match self.best_waiter(ep, Direction::Recv) {
            Some(i) => {
                let r = self.endpoints[ep.index()].queue.remove(i).thread;
                self.threads[r.index()].mailbox = Some(Message::Ipc { badge, sender: Some(sender) });
                self.make_runnable(r);
            }
            None if blocking => {
                self.block(sender, ThreadState::BlockedSend(ep));
                self.enqueue(ep, sender, PendingKind::Send, badge);
            }
            None => {}
        }
    }

    /// Receive on `ep`.
    pub fn recv(&mut self, receiver: ThreadId, ep: EpId) -> KernelResult<()> {
        self.check_ep(ep)?;
        self.authority.require(receiver, Authority::EndpointCap(ep, Rights::RECV))?;
        self.do_recv(receiver, ep);
        Ok(())
    }

    pub(crate) fn do_recv(&mut self, receiver: ThreadId, ep: EpId) {
        self.threads[receiver.index()].last_recv_ep = Some(ep);
        if let Some(n) = self.threads[receiver.index()].bound_ntfn {
            if self.ntfns[n.index()].word {
                self.ntfns[n.index()].word = false;
                self.threads[receiver.index()].mailbox =
                    Some(Message::Ipc { badge: NOTIFICATION_BADGE, sender: None });
                self.settle(receiver);
                return;
            }
        }
        loop {
            let Some(i) = self.best_waiter(ep, Direction::Send) else {
                self.block(receiver, ThreadState::BlockedRecv(ep));
                self.enqueue(ep, receiver, PendingKind::Recv, 0);
                return;
            };
            let p = self.endpoints[ep.index()].queue.remove(i);
            match p.kind {
                PendingKind::Send => {
                    self.threads[receiver.index()].mailbox =
                        Some(Message::Ipc { badge: p.badge, sender: Some(p.thread) });
                    self.make_runnable(p.thread);
                }
                PendingKind::Call { donate } => {
                    if self.threads[receiver.index()].current_sc.is_none() && !donate {
                        self.threads[p.thread.index()].mailbox = Some(Message::Error(KernelError::DonationRefused));
                        self.make_runnable(p.thread);
                        continue;
                    }
                    self.deliver_call(p.thread, receiver, p.badge);
                    self.ledger.slowpath_ipc += 1;
                }
                PendingKind::Fault => {
                    let fault = self.threads[p.thread.index()].fault.expect("queued fault has a record");
                    let th = &mut self.threads[receiver.index()];
                    th.mailbox = Some(Message::Fault(fault));
                    th.reply_slot = Some(ReplyCap { caller: p.thread, donated_sc: None, kind: ReplyKind::Fault });
                }
                PendingKind::Recv => unreachable!("send-direction waiter"),
            }
            self.settle(receiver);
            return;
        }
    }

    /// Consume `server`'s reply capability, hand the message and any donated
    /// SC back to the caller. The caller is not yet placed on a queue.
    fn reply_core(&mut self, server: ThreadId, badge: u64) -> KernelResult<ThreadId> {
        let cap = match &self.threads[server.index()].reply_slot {
            Some(c) if c.kind == ReplyKind::Ipc => self.threads[server.index()].reply_slot.take().unwrap(),
            _ => return Err(KernelError::NoReplyCap),
        };
        let caller = cap.caller;
        self.threads[caller.index()].mailbox = Some(Message::Reply { badge });
        if let Some(sc) = cap.donated_sc {
            let holder = self.scs[sc.index()].running_thread;
            if let Some(h) = holder {
                if let Some(prev) = self.threads[h.index()].call_stack_prev.take() {
                    self.threads[prev.index()].call_stack_next = None;
                }
            }
            let held_by_running = holder.is_some() && holder == self.current;
            self.attach_sc(sc, caller);
            if held_by_running {
                let h = holder.unwrap();
                if self.threads[h.index()].current_sc.is_none() {
                    self.current = None;
                    self.threads[h.index()].state = ThreadState::NoSchedContext;
                }
            }
            self.record(Category::DonationReturn, ObjRef::Sc(sc), Some(ObjRef::Thread(caller)), String::new());
        }
        self.threads[caller.index()].call_stack_next = None;
        self.record(Category::IpcReply, ObjRef::Thread(server), Some(ObjRef::Thread(caller)), format!("badge={badge}"));
        Ok(caller)
    }

    /// Run the caller directly if the replier gave up the CPU and the caller
    /// now holds the SC that was running; otherwise queue it.
    fn place_caller(&mut self, caller: ThreadId) {
        if self.threads[caller.index()].state == ThreadState::Suspended {
            return;
        }
        let sc = self.threads[caller.index()].current_sc;
        let direct = self.current.is_none()
            && sc.is_some()
            && sc == self.current_sc
            && self.sc_available(sc.unwrap()) >= self.min_budget();
        if direct {
            self.current = Some(caller);
            self.threads[caller.index()].state = ThreadState::Running;
            self.ledger.fastpath_ipc += 1;
        } else {
            self.threads[caller.index()].state = ThreadState::NoSchedContext;
            self.make_runnable(caller);
            self.ledger.slowpath_ipc += 1;
        }
    }

    /// Reply to the caller whose capability is in `server`'s reply slot.
    pub fn reply(&mut self, server: ThreadId, badge: u64) -> KernelResult<()> {
        if self.threads[server.index()].reply_slot.as_ref().is_some_and(|c| c.kind == ReplyKind::Fault) {
            return self.handler_reply(server, crate::timefault::FaultAction::ExtendBudget(0));
        }
        let caller = self.reply_core(server, badge)?;
        self.place_caller(caller);
        Ok(())
    }

    /// Reply, then receive on `ep`, in one operation.
    pub fn reply_recv(&mut self, server: ThreadId, ep: EpId, badge: u64) -> KernelResult<()> {
        self.check_ep(ep)?;
        self.authority.require(server, Authority::EndpointCap(ep, Rights::RECV))?;
        let caller = self.reply_core(server, badge)?;
        self.do_recv(server, ep);
        self.place_caller(caller);
        Ok(())
    }

    /// Non-blocking send on `send_ep` followed by a receive on `recv_ep`.
    pub fn nbsend_wait(&mut self, t: ThreadId, send_ep: EpId, recv_ep: EpId, badge: u64) -> KernelResult<()> {
        self.check_ep(send_ep)?;
        self.check_ep(recv_ep)?;
        self.authority.require(t, Authority::EndpointCap(send_ep, Rights::SEND))?;
        self.authority.require(t, Authority::EndpointCap(recv_ep, Rights::RECV))?;
        self.do_send(t, send_ep, badge, false);
        self.do_recv(t, recv_ep);
        Ok(())
    }

    /// Signal a notification.
    pub fn signal(&mut self, t: ThreadId, n: NtfnId) -> KernelResult<()> {
        self.check_ntfn(n)?;
        self.authority.require(t, Authority::NtfnCap(n, Rights::SEND))?;
        self.do_signal(n);
        self.record(Category::Signal, ObjRef::Thread(t), Some(ObjRef::Ntfn(n)), String::new());
        Ok(())
    }

    /// Signal from outside any thread, e.g. a device interrupt.
    pub fn external_signal(&mut self, n: NtfnId) {
        self.do_signal(n);
        self.emit(crate::trace::TraceRecord::new(self.clock, Category::ExternalSignal).object(ObjRef::Ntfn(n)));
    }

    pub(crate) fn do_signal(&mut self, n: NtfnId) {
        if let Some(w) = self.ntfns[n.index()].waiter.take() {
            self.threads[w.index()].mailbox = Some(Message::Notification { badge: 1 });
            self.make_runnable(w);
            return;
        }
        if let Some(b) = self.ntfns[n.index()].bound_thread {
            if let ThreadState::BlockedRecv(ep) = self.threads[b.index()].state {
                self.endpoints[ep.index()].remove(b);
                self.threads[b.index()].mailbox = Some(Message::Ipc { badge: NOTIFICATION_BADGE, sender: None });
                self.make_runnable(b);
                return;
            }
        }
        self.ntfns[n.index()].word = true;
    }

    /// Wait on a notification.
    pub fn wait(&mut self, t: ThreadId, n: NtfnId) -> KernelResult<()> {
        self.check_ntfn(n)?;
        self.authority.require(t, Authority::NtfnCap(n, Rights::RECV))?;
        self.do_wait(t, n)
    }

    fn do_wait(&mut self, t: ThreadId, n: NtfnId) -> KernelResult<()> {
        let nt = &mut self.ntfns[n.index()];
        if nt.word {
            nt.word = false;
            self.threads[t.index()].mailbox = Some(Message::Notification { badge: 1 });
            return Ok(());
        }
        if nt.waiter.is_some_and(|w| w != t) {
            return Err(KernelError::NotificationBusy);
        }
        nt.waiter = Some(t);
        self.block(t, ThreadState::WaitingNotification(n));
        self.record(Category::Wait, ObjRef::Thread(t), Some(ObjRef::Ntfn(n)), String::new());
        Ok(())
    }

    /// Signal `n` then receive on `ep`.
    pub fn signal_recv(&mut self, t: ThreadId, n: NtfnId, ep: EpId) -> KernelResult<()> {
        self.check_ntfn(n)?;
        self.check_ep(ep)?;
        self.authority.require(t, Authority::NtfnCap(n, Rights::SEND))?;
        self.authority.require(t, Authority::EndpointCap(ep, Rights::RECV))?;
        self.do_signal(n);
        self.record(Category::Signal, ObjRef::Thread(t), Some(ObjRef::Ntfn(n)), String::new());
        self.do_recv(t, ep);
        Ok(())
    }

    /// Signal `n` then wait on `w`.
    pub fn signal_wait(&mut self, t: ThreadId, n: NtfnId, w: NtfnId) -> KernelResult<()> {
        self.check_ntfn(n)?;
        self.check_ntfn(w)?;
        self.authority.require(t, Authority::NtfnCap(n, Rights::SEND))?;
        self.authority.require(t, Authority::NtfnCap(w, Rights::RECV))?;
        if !self.ntfns[w.index()].word && self.ntfns[w.index()].waiter.is_some_and(|x| x != t) {
            return Err(KernelError::NotificationBusy);
        }
        self.do_signal(n);
        self.do_wait(t, w)
    }

    /// Move the reply capability out of `target`'s reply slot into the
    /// actor's storage slot `slot`.
    pub fn save_caller(&mut self, actor: ThreadId, target: ThreadId, slot: u32) -> KernelResult<()> {
        self.authority.require(actor, Authority::TcbCap(target))?;
        let cap = self.threads[target.index()].reply_slot.take().ok_or(KernelError::EmptySlot)?;
        self.saved.insert((actor, slot), cap);
        Ok(())
    }

    /// Move the capability in storage slot `slot` into the actor's reply
    /// slot. Whatever was in the reply slot moves to `slot`.
    pub fn set_caller(&mut self, actor: ThreadId, slot: u32) -> KernelResult<()> {
        self.authority.require(actor, Authority::TcbCap(actor))?;
        let cap = self.saved.remove(&(actor, slot)).ok_or(KernelError::EmptySlot)?;
        if let Some(old) = self.threads[actor.index()].reply_slot.replace(cap) {
            self.saved.insert((actor, slot), old);
        }
        Ok(())
    }

    /// Exchange the contents of two of the actor's reply-capability slots.
    pub fn swap_caller(&mut self, actor: ThreadId, a: ReplySlot, b: ReplySlot) -> KernelResult<()> {
        self.authority.require(actor, Authority::TcbCap(actor))?;
        if a == b {
            return Ok(());
        }
        let ca = self.take_slot(actor, a);
        let cb = self.take_slot(actor, b);
        if ca.is_none() && cb.is_none() {
            return Err(KernelError::EmptySlot);
        }
        self.put_slot(actor, a, cb);
        self.put_slot(actor, b, ca);
        Ok(())
    }

    fn take_slot(&mut self, actor: ThreadId, s: ReplySlot) -> Option<ReplyCap> {
        match s {
            ReplySlot::Caller => self.threads[actor.index()].reply_slot.take(),
            ReplySlot::Saved(i) => self.saved.remove(&(actor, i)),
        }
    }

    fn put_slot(&mut self, actor: ThreadId, s: ReplySlot, cap: Option<ReplyCap>) {
        let Some(cap) = cap else { return };
        match s {
            ReplySlot::Caller => self.threads[actor.index()].reply_slot = Some(cap),
            ReplySlot::Saved(i) => {
                self.saved.insert((actor, i), cap);
            }
        }
    }

    /// Abort the call waiting in `server`'s reply slot, if any, returning any
    /// donated SC to its caller.
    pub(crate) fn abort_pending_reply(&mut self, server: ThreadId) {
        if self.threads[server.index()].reply_slot.as_ref().is_some_and(|c| c.kind == ReplyKind::Ipc) {
            let caller = self.reply_core(server, ABORT_BADGE).expect("checked reply capability");
            self.threads[caller.index()].state = ThreadState::NoSchedContext;
            self.make_runnable(caller);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fx {
        k: Kernel,
        client: ThreadId,
        server: ThreadId,
        ep: EpId,
        csc: ScId,
    }

    /// Active client at priority 2 and a passive server at 5 blocked on `ep`.
    fn passive_server() -> Fx {
        let mut k = Kernel::new(KernelConfig::default()).unwrap();
        let client = k.create_thread(2, 0).unwrap();
        let server = k.create_thread(5, 0).unwrap();
        let ep = k.create_endpoint();
        let csc = k.create_sc();
        k.setup_configure(csc, 10, 100).unwrap();
        k.setup_bind(csc, client).unwrap();
        k.grant(client, Authority::EndpointCap(ep, Rights::SEND));
        k.grant(server, Authority::EndpointCap(ep, Rights::RECV));
        k.start(server);
        k.do_recv(server, ep);
        k.start(client);
        k.schedule();
        Fx { k, client, server, ep, csc }
    }

    #[test]
    fn call_donates_to_passive_server_and_reply_returns_it() {
        let Fx { mut k, client, server, ep, csc } = passive_server();
        assert_eq!(k.current(), Some(client));
        k.kernel_entry(1);
        k.call(client, ep, 7, true).unwrap();
        assert_eq!(k.current(), Some(server));
        assert_eq!(k.thread(server).current_sc, Some(csc));
        assert_eq!(k.take_mailbox(server), Some(Message::Ipc { badge: 7, sender: Some(client) }));
        k.schedule();
        k.check_invariants().unwrap();
        k.kernel_entry(4);
        k.reply_recv(server, ep, 9).unwrap();
        k.schedule();
        assert_eq!(k.current(), Some(client));
        assert_eq!(k.thread(client).current_sc, Some(csc));
        assert_eq!(k.thread(server).current_sc, None);
        assert_eq!(k.thread(server).state, ThreadState::BlockedRecv(ep));
        assert_eq!(k.take_mailbox(client), Some(Message::Reply { badge: 9 }));
        assert_eq!(k.sc_charged_total(csc), 4);
        assert_eq!(k.ledger().fastpath_ipc, 2);
        k.check_invariants().unwrap();
    }

    #[test]
    fn call_without_donation_to_passive_server_is_refused() {
        let Fx { mut k, client, ep, .. } = passive_server();
        let before = format!("{k:?}");
        assert_eq!(k.call(client, ep, 0, false), Err(KernelError::DonationRefused));
        assert_eq!(before, format!("{k:?}"));
    }

    #[test]
    fn reply_without_capability_fails() {
        let Fx { mut k, server, .. } = passive_server();
        assert_eq!(k.reply(server, 0), Err(KernelError::NoReplyCap));
    }

    #[test]
    fn queued_callers_served_by_priority() {
        let mut k = Kernel::new(KernelConfig::default()).unwrap();
        let ep = k.create_endpoint();
        let mut callers = Vec::new();
        for prio in [3, 7, 7, 1] {
            let t = k.create_thread(prio, 0).unwrap();
            let sc = k.create_sc();
            k.setup_configure(sc, 5, 10).unwrap();
            k.setup_bind(sc, t).unwrap();
            k.grant(t, Authority::EndpointCap(ep, Rights::SEND));
            k.start(t);
            k.call(t, ep, prio as u64, true).unwrap();
            callers.push(t);
        }
        let server = k.create_thread(9, 0).unwrap();
        let ssc = k.create_sc();
        k.setup_configure(ssc, 5, 10).unwrap();
        k.setup_bind(ssc, server).unwrap();
        k.grant(server, Authority::EndpointCap(ep, Rights::RECV));
        k.start(server);
        let mut order = Vec::new();
        for _ in 0..4 {
            k.do_recv(server, ep);
            if let Some(Message::Ipc { sender: Some(s), .. }) = k.take_mailbox(server) {
                order.push(s);
            }
            k.reply(server, 0).unwrap();
        }
        assert_eq!(order, vec![callers[1], callers[2], callers[0], callers[3]]);
        k.check_invariants().unwrap();
    }

    #[test]
    fn notification_word_and_waiter() {
        let mut k = Kernel::new(KernelConfig::default()).unwrap();
        let a = k.create_thread(1, 0).unwrap();
        let b = k.create_thread(1, 0).unwrap();
        let n = k.create_notification();
        for t in [a, b] {
            k.grant(t, Authority::NtfnCap(n, Rights::ALL));
            k.start(t);
        }
        k.signal(a, n).unwrap();
        assert!(k.notification(n).word);
        k.wait(b, n).unwrap();
        assert!(!k.notification(n).word);
        k.wait(b, n).unwrap();
        assert_eq!(k.wait(a, n), Err(KernelError::NotificationBusy));
        k.signal(a, n).unwrap();
        assert_eq!(k.take_mailbox(b), Some(Message::Notification { badge: 1 }));
        assert_eq!(k.notification(n).waiter, None);
    }

    #[test]
    fn swap_of_empty_slots_fails() {
        let mut k = Kernel::new(KernelConfig::default()).unwrap();
        let a = k.create_thread(1, 0).unwrap();
        k.grant(a, Authority::TcbCap(a));
        assert_eq!(k.swap_caller(a, ReplySlot::Caller, ReplySlot::Saved(0)), Err(KernelError::EmptySlot));
        assert_eq!(k.set_caller(a, 3), Err(KernelError::EmptySlot));
    }
}
