use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use serde::{Deserialize, Serialize};

use super::message::{Message, MessageRecord, Request};
use super::network::{Network, NetworkModel};
use super::replica::{Action, ExecutedEntry, Replica, ReplicaParams};
use super::{
    quorum, Block, ByzantineBehavior, FaultMode, LedgerError, ReplicaId, SimTime, Transaction, TxId, TxKind,
};
use crate::hash::{tag, tagged_hash, Cid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n: u32,
    pub f: u32,
    pub network: NetworkModel,
    /// The primary proposes at most this long after a request reaches an
    /// empty mempool.
    pub batch_ms: f64,
    /// A block is proposed at once when the mempool holds this many bytes.
    pub block_cap_bytes: u64,
    pub view_change_timeout_ms: f64,
    /// Simulated time without any commit after which
    /// [`Cluster::run_until_quiescent`] reports a liveness stall.
    pub stall_budget_ms: f64,
    pub seed: u64,
}

impl ClusterConfig {
    pub fn new(n: u32, f: u32, network: NetworkModel, seed: u64) -> Self {
        ClusterConfig {
            n,
            f,
            network,
            batch_ms: 50.0,
            block_cap_bytes: 4 * 1024 * 1024,
            view_change_timeout_ms: 5_000.0,
            stall_budget_ms: 60_000.0,
            seed,
        }
    }
}

/// Submission and commit timing of one transaction. A transaction counts as
/// committed once `f + 1` honest replicas executed it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxTiming {
    pub tx_id: TxId,
    pub kind: TxKind,
    pub payload_bytes: u64,
    pub submit_time: SimTime,
    pub commit_time: Option<SimTime>,
}

impl TxTiming {
    pub fn overhead_ms(&self) -> Option<f64> {
        self.commit_time.map(|c| c - self.submit_time)
    }
}

/// One processed event, in processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: SimTime,
    pub event_id: u64,
    /// `None` for client requests, which reach every replica at once.
    pub replica: Option<ReplicaId>,
    pub what: TraceKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Request(TxId),
    Deliver { from: ReplicaId, kind: super::MessageKind },
    BatchTimer,
    ViewTimer,
    Fault(FaultMode),
}

enum Event {
    Request(Arc<Request>),
    Deliver { from: ReplicaId, to: ReplicaId, msg: Message },
    BatchTimer { replica: ReplicaId, view: u64 },
    ViewTimer { replica: ReplicaId, generation: u64 },
    Fault { replica: ReplicaId, mode: FaultMode },
}

struct Scheduled {
    time: SimTime,
    id: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.id).cmp(&(other.time, other.id))
    }
}

struct TxState {
    timing: TxTiming,
    honest_executions: u32,
}

/// A simulated PBFT cluster. Events are processed in `(time, event id)`
/// order, so a run is fully determined by the config, the seed and the
/// submission script.
pub struct Cluster {
    config: ClusterConfig,
    replicas: Vec<Replica>,
    faults: Vec<FaultMode>,
    network: Network,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_event_id: u64,
    now: SimTime,
    txs: BTreeMap<TxId, TxState>,
    commit_order: Vec<TxId>,
    transcript: Vec<MessageRecord>,
    trace: Vec<TraceEvent>,
    last_progress: SimTime,
}

pub fn new_cluster(n: u32, f: u32, net: NetworkModel, seed: u64) -> Result<Cluster, LedgerError> {
    Cluster::new(ClusterConfig::new(n, f, net, seed))
}

impl Cluster {
    pub fn new(config: ClusterConfig) -> Result<Self, LedgerError> {
        let (n, f) = (config.n, config.f);
        if n < 3 * f + 1 {
            return Err(LedgerError::BadQuorum { n, f });
        }
        let params = ReplicaParams {
            n,
            f,
            batch_ms: config.batch_ms,
            block_cap_bytes: config.block_cap_bytes,
            view_timeout_ms: config.view_change_timeout_ms,
        };
        Ok(Cluster {
            config,
            replicas: (0..n).map(|i| Replica::new(ReplicaId(i), params)).collect(),
            faults: alloc::vec![FaultMode::Honest; n as usize],
            network: Network::new(config.network, n as usize, config.seed),
            queue: BinaryHeap::new(),
            next_event_id: 0,
            now: SimTime::ZERO,
            txs: BTreeMap::new(),
            commit_order: Vec::new(),
            transcript: Vec::new(),
            trace: Vec::new(),
            last_progress: SimTime::ZERO,
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn network(&self) -> &NetworkModel {
        self.network.model()
    }

    pub fn quorum_size(&self) -> usize {
        quorum(self.config.f)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn fault_mode(&self, replica: ReplicaId) -> Result<FaultMode, LedgerError> {
        self.faults.get(replica.0 as usize).copied().ok_or(LedgerError::UnknownReplica(replica))
    }

    /// Sets a replica's fault mode effective immediately.
    pub fn set_fault(&mut self, replica: ReplicaId, mode: FaultMode) -> Result<(), LedgerError> {
        let slot = self.faults.get_mut(replica.0 as usize).ok_or(LedgerError::UnknownReplica(replica))?;
        *slot = mode;
        Ok(())
    }

    /// Switches a replica's fault mode at a future simulated time.
    pub fn schedule_fault(&mut self, replica: ReplicaId, mode: FaultMode, at: SimTime) -> Result<(), LedgerError> {
        self.fault_mode(replica)?;
        self.schedule(at.max(self.now), Event::Fault { replica, mode });
        Ok(())
    }

    /// Hands the transaction to every replica at `max(now, tx.submit_time)`;
    /// the current primary puts it into its mempool.
    pub fn submit(&mut self, mut tx: Transaction) -> Result<TxId, LedgerError> {
        let id = tx.tx_id;
        if self.txs.contains_key(&id) {
            return Err(LedgerError::DuplicateTx(id));
        }
        tx.submit_time = tx.submit_time.max(self.now);
        let timing = TxTiming {
            tx_id: id,
            kind: tx.kind,
            payload_bytes: tx.payload_bytes.len() as u64,
            submit_time: tx.submit_time,
            commit_time: None,
        };
        self.txs.insert(id, TxState { timing, honest_executions: 0 });
        let at = tx.submit_time;
        self.schedule(at, Event::Request(Arc::new(Request::new(tx))));
        Ok(id)
    }

    pub fn pending_count(&self) -> usize {
        self.txs.values().filter(|t| t.timing.commit_time.is_none()).count()
    }

    /// Processes events until none are left. Fails with
    /// [`LedgerError::LivenessStall`] when submitted transactions see no
    /// commit progress for `stall_budget_ms`. Once everything submitted is
    /// committed, leftover view-change chatter of lagging replicas is cut off
    /// after the same budget.
    pub fn run_until_quiescent(&mut self) -> Result<(), LedgerError> {
        let budget = self.config.stall_budget_ms;
        while let Some(Reverse(next)) = self.queue.pop() {
            if next.time - self.last_progress > budget {
                let pending = self.pending_count();
                if pending > 0 {
                    self.queue.push(Reverse(next));
                    return Err(LedgerError::LivenessStall { budget_ms: budget, pending });
                }
                self.queue.clear();
                break;
            }
            self.now = next.time;
            self.process(next.id, next.event);
        }
        let pending = self.pending_count();
        if pending > 0 {
            return Err(LedgerError::LivenessStall { budget_ms: budget, pending });
        }
        Ok(())
    }

    /// Submit time to commit time of a committed transaction, in ms.
    pub fn commit_time(&self, tx: TxId) -> Result<f64, LedgerError> {
        self.txs
            .get(&tx)
            .and_then(|t| t.timing.overhead_ms())
            .ok_or(LedgerError::NotCommitted(tx))
    }

    pub fn timing(&self, tx: TxId) -> Option<&TxTiming> {
        self.txs.get(&tx).map(|t| &t.timing)
    }

    /// Timing of every submitted transaction, ordered by id.
    pub fn timings(&self) -> impl Iterator<Item = &TxTiming> {
        self.txs.values().map(|t| &t.timing)
    }

    /// Transactions in the order they became committed.
    pub fn commit_order(&self) -> &[TxId] {
        &self.commit_order
    }

    pub fn committed_log(&self, replica: ReplicaId) -> Result<&[Block], LedgerError> {
        self.replicas
            .get(replica.0 as usize)
            .map(|r| r.chain())
            .ok_or(LedgerError::UnknownReplica(replica))
    }

    /// The longest chain held by an honest replica.
    pub fn canonical_chain(&self) -> &[Block] {
        self.replicas
            .iter()
            .zip(&self.faults)
            .filter(|(_, f)| **f == FaultMode::Honest)
            .map(|(r, _)| r.chain())
            .fold(&[][..], |best, c| if c.len() > best.len() { c } else { best })
    }

    pub fn view_of(&self, replica: ReplicaId) -> Result<u64, LedgerError> {
        self.replicas.get(replica.0 as usize).map(|r| r.view()).ok_or(LedgerError::UnknownReplica(replica))
    }

    /// `(view, seq, digest, time)` of every log position a replica executed.
    pub fn executed_positions(&self, replica: ReplicaId) -> Result<Vec<(u64, u64, Cid, SimTime)>, LedgerError> {
        let r = self.replicas.get(replica.0 as usize).ok_or(LedgerError::UnknownReplica(replica))?;
        Ok(r.executed_log().iter().map(|e: &ExecutedEntry| (e.view, e.seq, e.digest, e.time)).collect())
    }

    /// Every delivered message in delivery order.
    pub fn transcript(&self) -> &[MessageRecord] {
        &self.transcript
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    fn schedule(&mut self, time: SimTime, event: Event) {
        let id = self.next_event_id;
        self.next_event_id += 1;
        self.queue.push(Reverse(Scheduled { time, id, event }));
    }

    fn process(&mut self, event_id: u64, event: Event) {
        let now = self.now;
        let trace = |replica: ReplicaId, what: TraceKind| TraceEvent { time: now, event_id, replica: Some(replica), what };
        match event {
            Event::Request(req) => {
                self.last_progress = self.last_progress.max(now);
                self.trace.push(TraceEvent { time: now, event_id, replica: None, what: TraceKind::Request(req.tx.tx_id) });
                for i in 0..self.replicas.len() {
                    if self.faults[i] == FaultMode::Crashed {
                        continue;
                    }
                    let mut out = Vec::new();
                    self.replicas[i].on_request(req.clone(), &mut out);
                    self.apply(ReplicaId(i as u32), out);
                }
            }
            Event::Deliver { from, to, msg } => {
                if self.faults[to.0 as usize] == FaultMode::Crashed {
                    return;
                }
                self.transcript.push(msg.record(now, from, to));
                self.trace.push(trace(to, TraceKind::Deliver { from, kind: msg.kind() }));
                let mut out = Vec::new();
                self.replicas[to.0 as usize].on_message(now, from, msg, &mut out);
                self.apply(to, out);
            }
            Event::BatchTimer { replica, view } => {
                if self.faults[replica.0 as usize] == FaultMode::Crashed {
                    return;
                }
                self.trace.push(trace(replica, TraceKind::BatchTimer));
                let mut out = Vec::new();
                self.replicas[replica.0 as usize].on_batch_timer(view, &mut out);
                self.apply(replica, out);
            }
            Event::ViewTimer { replica, generation } => {
                if self.faults[replica.0 as usize] == FaultMode::Crashed {
                    return;
                }
                self.trace.push(trace(replica, TraceKind::ViewTimer));
                let mut out = Vec::new();
                self.replicas[replica.0 as usize].on_view_timer(generation, &mut out);
                self.apply(replica, out);
            }
            Event::Fault { replica, mode } => {
                self.trace.push(trace(replica, TraceKind::Fault(mode)));
                self.faults[replica.0 as usize] = mode;
            }
        }
    }

    fn apply(&mut self, replica: ReplicaId, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Broadcast(msg) => {
                    for to in 0..self.config.n {
                        self.send(replica, ReplicaId(to), msg.clone());
                    }
                }
                Action::SetViewTimer { generation, after_ms } => {
                    self.schedule(self.now + after_ms, Event::ViewTimer { replica, generation })
                }
                Action::SetBatchTimer { view, after_ms } => {
                    self.schedule(self.now + after_ms, Event::BatchTimer { replica, view })
                }
                Action::Executed { txs } => self.on_executed(replica, txs),
            }
        }
    }

    fn on_executed(&mut self, replica: ReplicaId, txs: Vec<TxId>) {
        if self.faults[replica.0 as usize] != FaultMode::Honest {
            return;
        }
        let needed = self.config.f + 1;
        for id in txs {
            if let Some(state) = self.txs.get_mut(&id) {
                state.honest_executions += 1;
                if state.honest_executions == needed {
                    state.timing.commit_time = Some(self.now);
                    self.commit_order.push(id);
                    self.last_progress = self.now;
                }
            }
        }
    }

    fn send(&mut self, from: ReplicaId, to: ReplicaId, msg: Message) {
        let msg = match self.faults[from.0 as usize] {
            FaultMode::Crashed => return,
            FaultMode::Honest => msg,
            FaultMode::Byzantine(behavior) => match tamper(behavior, from, to, msg) {
                Some(m) => m,
                None => return,
            },
        };
        let at = if from == to { self.now } else { self.network.transmit(self.now, from, to, msg.wire_bytes()) };
        self.schedule(at, Event::Deliver { from, to, msg });
    }
}

fn garble(digest: Cid, salt: u32) -> Cid {
    tagged_hash(tag::BATCH, &[b"garbled", digest.as_bytes(), &salt.to_le_bytes()])
}

/// Rewrites an outgoing message of a Byzantine replica; `None` drops it.
/// Messages to itself pass untouched so its own state stays consistent.
fn tamper(behavior: ByzantineBehavior, from: ReplicaId, to: ReplicaId, msg: Message) -> Option<Message> {
    if matches!(msg, Message::ViewChange { .. } | Message::NewView { .. }) {
        return None;
    }
    if from == to {
        return Some(msg);
    }
    match (behavior, msg) {
        (ByzantineBehavior::Silent, _) => None,
        (ByzantineBehavior::Equivocate, Message::PrePrepare { view, seq, batch, .. }) => {
            let variant = Arc::new(batch.variant(to.0 as u64 + 1));
            Some(Message::PrePrepare { view, seq, digest: variant.digest(), batch: variant })
        }
        (ByzantineBehavior::Equivocate, Message::Prepare { view, seq, digest }) => {
            Some(Message::Prepare { view, seq, digest: garble(digest, to.0) })
        }
        (ByzantineBehavior::Equivocate, Message::Commit { view, seq, digest }) => {
            Some(Message::Commit { view, seq, digest: garble(digest, to.0) })
        }
        (ByzantineBehavior::CorruptDigest, Message::PrePrepare { view, seq, digest, batch }) => {
            Some(Message::PrePrepare { view, seq, digest: garble(digest, u32::MAX), batch })
        }
        (ByzantineBehavior::CorruptDigest, Message::Prepare { view, seq, digest }) => {
            Some(Message::Prepare { view, seq, digest: garble(digest, u32::MAX) })
        }
        (ByzantineBehavior::CorruptDigest, Message::Commit { view, seq, digest }) => {
            Some(Message::Commit { view, seq, digest: garble(digest, u32::MAX) })
        }
        (_, other) => Some(other),
    }
}
