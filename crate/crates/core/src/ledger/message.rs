use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ReplicaId, SimTime, Transaction, CONTROL_MESSAGE_BYTES};
use crate::hash::{tag, tagged_hash, Cid};

#[derive(Debug)]
pub(crate) struct Request {
    pub tx: Arc<Transaction>,
    pub digest: Cid,
}

impl Request {
    pub fn new(tx: Transaction) -> Self {
        let digest = tx.digest();
        Request { tx: Arc::new(tx), digest }
    }
}

/// An ordered batch of requests proposed for one sequence number.
#[derive(Debug)]
pub(crate) struct Batch {
    requests: Vec<Arc<Request>>,
    nonce: u64,
    digest: Cid,
    wire_bytes: u64,
}

impl Batch {
    pub fn new(requests: Vec<Arc<Request>>, nonce: u64) -> Self {
        let n = nonce.to_le_bytes();
        let mut parts: Vec<&[u8]> = Vec::with_capacity(requests.len() + 1);
        parts.push(&n);
        for r in &requests {
            parts.push(r.digest.as_bytes());
        }
        let digest = tagged_hash(tag::BATCH, &parts);
        let wire_bytes = requests.iter().map(|r| r.tx.payload_bytes.len() as u64).sum();
        Batch { requests, nonce, digest, wire_bytes }
    }

    pub fn null() -> Self {
        Batch::new(Vec::new(), 0)
    }

    /// Same requests under a different nonce, hence a different digest.
    pub fn variant(&self, nonce: u64) -> Self {
        Batch::new(self.requests.clone(), nonce)
    }

    pub fn requests(&self) -> &[Arc<Request>] {
        &self.requests
    }

    pub fn digest(&self) -> Cid {
        self.digest
    }

    pub fn wire_bytes(&self) -> u64 {
        self.wire_bytes
    }

    #[allow(dead_code)]
    pub fn nonce(&self) -> u64 {
        self.nonce
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PreparedCert {
    pub view: u64,
    pub seq: u64,
    pub batch: Arc<Batch>,
}

#[derive(Debug, Clone)]
pub(crate) enum Message {
    PrePrepare { view: u64, seq: u64, digest: Cid, batch: Arc<Batch> },
    Prepare { view: u64, seq: u64, digest: Cid },
    Commit { view: u64, seq: u64, digest: Cid },
    ViewChange { new_view: u64, last_executed: u64, prepared: Vec<PreparedCert> },
    NewView { view: u64, entries: Vec<(u64, Arc<Batch>)> },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::PrePrepare { .. } => MessageKind::PrePrepare,
            Message::Prepare { .. } => MessageKind::Prepare,
            Message::Commit { .. } => MessageKind::Commit,
            Message::ViewChange { .. } => MessageKind::ViewChange,
            Message::NewView { .. } => MessageKind::NewView,
        }
    }

    /// Bytes charged by the network model. View-change traffic carries
    /// digests only; batches are assumed to be fetched out of band.
    pub fn wire_bytes(&self) -> u64 {
        match self {
            Message::PrePrepare { batch, .. } => CONTROL_MESSAGE_BYTES + batch.wire_bytes(),
            Message::Prepare { .. } | Message::Commit { .. } => CONTROL_MESSAGE_BYTES,
            Message::ViewChange { prepared, .. } => CONTROL_MESSAGE_BYTES + 32 * prepared.len() as u64,
            Message::NewView { entries, .. } => CONTROL_MESSAGE_BYTES + 32 * entries.len() as u64,
        }
    }

    pub fn record(&self, time: SimTime, from: ReplicaId, to: ReplicaId) -> MessageRecord {
        let (view, seq, digest) = match self {
            Message::PrePrepare { view, seq, digest, .. }
            | Message::Prepare { view, seq, digest }
            | Message::Commit { view, seq, digest } => (*view, *seq, *digest),
            Message::ViewChange { new_view, .. } => (*new_view, 0, Cid::ZERO),
            Message::NewView { view, .. } => (*view, 0, Cid::ZERO),
        };
        MessageRecord { time, from, to, kind: self.kind(), view, seq, digest, wire_bytes: self.wire_bytes() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    PrePrepare,
    Prepare,
    Commit,
    ViewChange,
    NewView,
}

/// One delivered message, as observed by its recipient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageRecord {
    pub time: SimTime,
    pub from: ReplicaId,
    pub to: ReplicaId,
    pub kind: MessageKind,
    pub view: u64,
    pub seq: u64,
    pub digest: Cid,
    pub wire_bytes: u64,
}
