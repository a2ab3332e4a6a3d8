//! PBFT replica state machine. Handlers consume one input and return the
//! actions the cluster has to carry out; the replica never touches the
//! network or the clock directly.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::message::{Batch, Message, PreparedCert, Request};
use super::{quorum, Block, ReplicaId, SimTime, TxId};
use crate::hash::Cid;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ReplicaParams {
    pub n: u32,
    pub f: u32,
    pub batch_ms: f64,
    pub block_cap_bytes: u64,
    pub view_timeout_ms: f64,
}

impl ReplicaParams {
    fn primary(&self, view: u64) -> ReplicaId {
        ReplicaId((view % self.n as u64) as u32)
    }
}

#[derive(Debug)]
pub(crate) enum Action {
    /// Multicast to every replica, the sender included.
    Broadcast(Message),
    SetViewTimer { generation: u64, after_ms: f64 },
    SetBatchTimer { view: u64, after_ms: f64 },
    Executed { txs: Vec<TxId> },
}

/// Which (view, seq, digest) a replica executed and when.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ExecutedEntry {
    pub view: u64,
    pub seq: u64,
    pub digest: Cid,
    pub time: SimTime,
}

#[derive(Debug, Default)]
struct Slot {
    batch: Option<Arc<Batch>>,
    prepares: BTreeMap<Cid, BTreeSet<ReplicaId>>,
    commits: BTreeMap<Cid, BTreeSet<ReplicaId>>,
    prepared: bool,
    committed: bool,
}

#[derive(Debug, Clone)]
struct ViewChangeVote {
    last_executed: u64,
    prepared: Vec<PreparedCert>,
}

pub(crate) struct Replica {
    id: ReplicaId,
    params: ReplicaParams,
    view: u64,
    in_view_change: bool,
    view_change_attempts: u32,
    slots: BTreeMap<(u64, u64), Slot>,
    /// Highest-view prepared certificate per sequence number.
    prepared_certs: BTreeMap<u64, PreparedCert>,
    committed: BTreeMap<u64, (u64, Arc<Batch>)>,
    last_executed: u64,
    executed_txs: BTreeSet<TxId>,
    executed_log: Vec<ExecutedEntry>,
    chain: Vec<Block>,
    /// Requests seen from clients and not yet executed, in arrival order.
    pending: Vec<Arc<Request>>,
    /// Primary only: requests not yet proposed in the current view.
    mempool: VecDeque<Arc<Request>>,
    next_seq: u64,
    batch_timer_armed: bool,
    timer_generation: u64,
    timer_armed: bool,
    view_changes: BTreeMap<u64, BTreeMap<ReplicaId, ViewChangeVote>>,
    new_view_sent: BTreeSet<u64>,
}

impl Replica {
    pub fn new(id: ReplicaId, params: ReplicaParams) -> Self {
        Replica {
            id,
            params,
            view: 0,
            in_view_change: false,
            view_change_attempts: 0,
            slots: BTreeMap::new(),
            prepared_certs: BTreeMap::new(),
            committed: BTreeMap::new(),
            last_executed: 0,
            executed_txs: BTreeSet::new(),
            executed_log: Vec::new(),
            chain: Vec::new(),
            pending: Vec::new(),
            mempool: VecDeque::new(),
            next_seq: 1,
            batch_timer_armed: false,
            timer_generation: 0,
            timer_armed: false,
            view_changes: BTreeMap::new(),
            new_view_sent: BTreeSet::new(),
        }
    }

    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn executed_log(&self) -> &[ExecutedEntry] {
        &self.executed_log
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    fn is_primary(&self) -> bool {
        self.params.primary(self.view) == self.id
    }

    pub fn on_request(&mut self, req: Arc<Request>, out: &mut Vec<Action>) {
        let id = req.tx.tx_id;
        if self.executed_txs.contains(&id) || self.pending.iter().any(|r| r.tx.tx_id == id) {
            return;
        }
        self.pending.push(req.clone());
        if self.is_primary() && !self.in_view_change {
            self.mempool.push_back(req);
            self.maybe_propose(out);
        }
        if !self.timer_armed {
            self.arm_view_timer(self.params.view_timeout_ms, out);
        }
    }

    pub fn on_batch_timer(&mut self, view: u64, out: &mut Vec<Action>) {
        if view != self.view {
            return;
        }
        self.batch_timer_armed = false;
        if !self.is_primary() || self.in_view_change || self.mempool.is_empty() {
            return;
        }
        self.propose(out);
        self.maybe_propose(out);
    }

    pub fn on_view_timer(&mut self, generation: u64, out: &mut Vec<Action>) {
        if generation != self.timer_generation || !self.timer_armed {
            return;
        }
        self.timer_armed = false;
        self.start_view_change(self.view + 1, out);
    }

    pub fn on_message(&mut self, now: SimTime, from: ReplicaId, msg: Message, out: &mut Vec<Action>) {
        match msg {
            Message::PrePrepare { view, seq, digest, batch } => self.on_pre_prepare(now, from, view, seq, digest, batch, out),
            Message::Prepare { view, seq, digest } => {
                if from == self.params.primary(view) {
                    return;
                }
                self.slots.entry((view, seq)).or_default().prepares.entry(digest).or_default().insert(from);
                self.check_slot(now, view, seq, out);
            }
            Message::Commit { view, seq, digest } => {
                self.slots.entry((view, seq)).or_default().commits.entry(digest).or_default().insert(from);
                self.check_slot(now, view, seq, out);
            }
            Message::ViewChange { new_view, last_executed, prepared } => {
                self.on_view_change(from, new_view, ViewChangeVote { last_executed, prepared }, out)
            }
            Message::NewView { view, entries } => self.on_new_view(now, from, view, entries, out),
        }
    }

    /// Proposes full blocks while the mempool holds at least a cap's worth of
    /// bytes, then arms the batch timer for the remainder.
    fn maybe_propose(&mut self, out: &mut Vec<Action>) {
        while self.mempool_bytes() >= self.params.block_cap_bytes {
            self.propose(out);
        }
        if !self.mempool.is_empty() && !self.batch_timer_armed {
            self.batch_timer_armed = true;
            out.push(Action::SetBatchTimer { view: self.view, after_ms: self.params.batch_ms });
        }
    }

    fn mempool_bytes(&self) -> u64 {
        self.mempool.iter().map(|r| r.tx.payload_bytes.len() as u64).sum()
    }

    fn propose(&mut self, out: &mut Vec<Action>) {
        let mut taken = Vec::new();
        let mut bytes = 0u64;
        while let Some(front) = self.mempool.front() {
            let size = front.tx.payload_bytes.len() as u64;
            if !taken.is_empty() && bytes + size > self.params.block_cap_bytes {
                break;
            }
            bytes += size;
            taken.push(self.mempool.pop_front().expect("front exists"));
        }
        if taken.is_empty() {
            return;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let batch = Arc::new(Batch::new(taken, 0));
        out.push(Action::Broadcast(Message::PrePrepare { view: self.view, seq, digest: batch.digest(), batch }));
    }

    #[allow(clippy::too_many_arguments)]
    fn on_pre_prepare(
        &mut self,
        now: SimTime,
        from: ReplicaId,
        view: u64,
        seq: u64,
        digest: Cid,
        batch: Arc<Batch>,
        out: &mut Vec<Action>,
    ) {
        if self.in_view_change || view != self.view || from != self.params.primary(view) {
            return;
        }
        if digest != batch.digest() {
            return;
        }
        self.accept_proposal(now, view, seq, batch, out);
    }

    fn accept_proposal(&mut self, now: SimTime, view: u64, seq: u64, batch: Arc<Batch>, out: &mut Vec<Action>) {
        let slot = self.slots.entry((view, seq)).or_default();
        if slot.batch.is_some() {
            return;
        }
        let digest = batch.digest();
        slot.batch = Some(batch);
        if !self.is_primary() {
            out.push(Action::Broadcast(Message::Prepare { view, seq, digest }));
        }
        self.check_slot(now, view, seq, out);
    }

    fn check_slot(&mut self, now: SimTime, view: u64, seq: u64, out: &mut Vec<Action>) {
        if view != self.view || self.in_view_change {
            return;
        }
        let f = self.params.f as usize;
        let Some(slot) = self.slots.get_mut(&(view, seq)) else { return };
        let Some(batch) = slot.batch.clone() else { return };
        let digest = batch.digest();
        if !slot.prepared && slot.prepares.get(&digest).map_or(0, |s| s.len()) >= 2 * f {
            slot.prepared = true;
            let newer = self.prepared_certs.get(&seq).is_none_or(|c| c.view < view);
            if newer {
                self.prepared_certs.insert(seq, PreparedCert { view, seq, batch: batch.clone() });
            }
            out.push(Action::Broadcast(Message::Commit { view, seq, digest }));
        }
        let slot = self.slots.get_mut(&(view, seq)).expect("slot exists");
        if slot.prepared && !slot.committed && slot.commits.get(&digest).map_or(0, |s| s.len()) >= quorum(self.params.f) {
            slot.committed = true;
            if seq > self.last_executed {
                self.committed.entry(seq).or_insert((view, batch));
            }
            self.execute_ready(now, out);
        }
    }

    fn execute_ready(&mut self, now: SimTime, out: &mut Vec<Action>) {
        let mut progressed = false;
        while let Some((view, batch)) = self.committed.remove(&(self.last_executed + 1)) {
            self.last_executed += 1;
            progressed = true;
            self.executed_log.push(ExecutedEntry { view, seq: self.last_executed, digest: batch.digest(), time: now });
            let fresh: Vec<&Arc<Request>> =
                batch.requests().iter().filter(|r| !self.executed_txs.contains(&r.tx.tx_id)).collect();
            if fresh.is_empty() {
                continue;
            }
            let txs: Vec<_> = fresh.iter().map(|r| r.tx.clone()).collect();
            let digests: Vec<Cid> = fresh.iter().map(|r| r.digest).collect();
            let ids: Vec<TxId> = txs.iter().map(|t| t.tx_id).collect();
            let parent = self.chain.last().map_or(Cid::ZERO, |b| b.digest());
            self.chain.push(Block::new(self.chain.len() as u64, txs, &digests, parent, now));
            self.executed_txs.extend(ids.iter().copied());
            out.push(Action::Executed { txs: ids });
        }
        if progressed {
            let executed = &self.executed_txs;
            self.pending.retain(|r| !executed.contains(&r.tx.tx_id));
            self.mempool.retain(|r| !executed.contains(&r.tx.tx_id));
            self.disarm_view_timer();
            if !self.pending.is_empty() {
                self.arm_view_timer(self.params.view_timeout_ms, out);
            }
        }
    }

    fn arm_view_timer(&mut self, after_ms: f64, out: &mut Vec<Action>) {
        self.timer_generation += 1;
        self.timer_armed = true;
        out.push(Action::SetViewTimer { generation: self.timer_generation, after_ms });
    }

    fn disarm_view_timer(&mut self) {
        self.timer_generation += 1;
        self.timer_armed = false;
    }

    fn start_view_change(&mut self, target: u64, out: &mut Vec<Action>) {
        self.view = target;
        self.in_view_change = true;
        self.view_change_attempts += 1;
        self.mempool.clear();
        self.batch_timer_armed = false;
        let prepared = self.prepared_certs.values().cloned().collect();
        out.push(Action::Broadcast(Message::ViewChange { new_view: target, last_executed: self.last_executed, prepared }));
        // Successive view changes back off exponentially.
        let backoff = (1u64 << self.view_change_attempts.min(16)) as f64;
        self.disarm_view_timer();
        self.arm_view_timer(self.params.view_timeout_ms * backoff, out);
    }

    fn on_view_change(&mut self, from: ReplicaId, new_view: u64, vote: ViewChangeVote, out: &mut Vec<Action>) {
        if new_view < self.view || (new_view == self.view && !self.in_view_change) {
            return;
        }
        let votes = self.view_changes.entry(new_view).or_default();
        votes.insert(from, vote);
        let count = votes.len();
        if new_view > self.view && count > self.params.f as usize {
            self.start_view_change(new_view, out);
        }
        let votes = &self.view_changes[&new_view];
        if self.view == new_view
            && self.in_view_change
            && self.params.primary(new_view) == self.id
            && votes.len() >= quorum(self.params.f)
            && !self.new_view_sent.contains(&new_view)
        {
            self.new_view_sent.insert(new_view);
            let entries = Self::reproposals(votes);
            out.push(Action::Broadcast(Message::NewView { view: new_view, entries }));
        }
    }

    /// For every sequence number between the lowest and highest executed or
    /// prepared position reported by the quorum, re-propose the batch from the
    /// highest-view prepared certificate, or a null batch if none exists.
    fn reproposals(votes: &BTreeMap<ReplicaId, ViewChangeVote>) -> Vec<(u64, Arc<Batch>)> {
        let low = votes.values().map(|v| v.last_executed).min().unwrap_or(0);
        let mut best: BTreeMap<u64, &PreparedCert> = BTreeMap::new();
        let mut high = votes.values().map(|v| v.last_executed).max().unwrap_or(0);
        for cert in votes.values().flat_map(|v| v.prepared.iter()) {
            high = high.max(cert.seq);
            let replace = best.get(&cert.seq).is_none_or(|b| b.view < cert.view);
            if replace {
                best.insert(cert.seq, cert);
            }
        }
        let null = Arc::new(Batch::null());
        ((low + 1)..=high)
            .map(|seq| (seq, best.get(&seq).map_or_else(|| null.clone(), |c| c.batch.clone())))
            .collect()
    }

    fn on_new_view(&mut self, now: SimTime, from: ReplicaId, view: u64, entries: Vec<(u64, Arc<Batch>)>, out: &mut Vec<Action>) {
        if view < self.view || from != self.params.primary(view) || (view == self.view && !self.in_view_change) {
            return;
        }
        self.view = view;
        self.in_view_change = false;
        self.view_change_attempts = 0;
        self.batch_timer_armed = false;
        let mut reproposed = BTreeSet::new();
        let mut top = self.last_executed;
        for (seq, batch) in &entries {
            top = top.max(*seq);
            reproposed.extend(batch.requests().iter().map(|r| r.tx.tx_id));
        }
        self.mempool.clear();
        if self.is_primary() {
            self.next_seq = top + 1;
            self.mempool = self
                .pending
                .iter()
                .filter(|r| !reproposed.contains(&r.tx.tx_id))
                .cloned()
                .collect();
        }
        for (seq, batch) in entries {
            self.accept_proposal(now, view, seq, batch, out);
        }
        let seqs: Vec<u64> = self.slots.range((view, 0)..(view + 1, 0)).map(|((_, s), _)| *s).collect();
        for seq in seqs {
            self.check_slot(now, view, seq, out);
        }
        self.disarm_view_timer();
        if !self.pending.is_empty() {
            self.arm_view_timer(self.params.view_timeout_ms, out);
        }
        if self.is_primary() {
            self.maybe_propose(out);
        }
    }
}
