//! Discrete-event PBFT ledger.
//!
//! A [`Cluster`] runs `n >= 3f + 1` replicas over a simulated network. The
//! replicas run the normal-case three-phase protocol (pre-prepare, prepare,
//! commit) with batching at the primary and a minimal view change on primary
//! timeout. Signatures are modelled as authenticated channels at zero cost; the
//! measured quantity is the simulated time from submission to commit.

mod cluster;
mod message;
mod network;
mod replica;

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{content_id, tag, tagged_hash, Cid};
use crate::nft::AccountId;

pub use cluster::{new_cluster, Cluster, ClusterConfig, TraceEvent, TraceKind, TxTiming};
pub use message::{MessageKind, MessageRecord};
pub use network::NetworkModel;

/// Wire bytes of a protocol message without any batch content: view, sequence
/// number, digest and the authenticator.
pub const CONTROL_MESSAGE_BYTES: u64 = 128;

/// Milliseconds on the simulation clock.
#[derive(Clone, Copy, Default, Serialize, Deserialize)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn from_ms(ms: f64) -> Self {
        SimTime(ms)
    }

    pub fn as_ms(&self) -> f64 {
        self.0
    }
}

impl PartialEq for SimTime {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add<f64> for SimTime {
    type Output = SimTime;
    fn add(self, ms: f64) -> SimTime {
        SimTime(self.0 + ms)
    }
}

impl Sub for SimTime {
    type Output = f64;
    fn sub(self, rhs: SimTime) -> f64 {
        self.0 - rhs.0
    }
}

impl fmt::Debug for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxId(pub u64);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReplicaId(pub u32);

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    Deploy,
    Mint,
    TransferFrom,
    Burn,
    Approve,
    SetApprovalForAll,
    List,
    Buy,
    Custom,
}

impl TxKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TxKind::Deploy => "Deploy",
            TxKind::Mint => "Mint",
            TxKind::TransferFrom => "TransferFrom",
            TxKind::Burn => "Burn",
            TxKind::Approve => "Approve",
            TxKind::SetApprovalForAll => "SetApprovalForAll",
            TxKind::List => "List",
            TxKind::Buy => "Buy",
            TxKind::Custom => "Custom",
        }
    }

    fn code(&self) -> u8 {
        *self as u8
    }
}

/// A client transaction. `payload_bytes.len()` is exactly the size charged by
/// the bandwidth model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: TxId,
    pub kind: TxKind,
    pub payload_bytes: Vec<u8>,
    pub submitter: AccountId,
    pub submit_time: SimTime,
}

impl Transaction {
    pub fn new(tx_id: TxId, kind: TxKind, payload_bytes: Vec<u8>, submitter: AccountId) -> Self {
        Transaction { tx_id, kind, payload_bytes, submitter, submit_time: SimTime::ZERO }
    }

    /// Schedules arrival at the primary no earlier than `at`.
    pub fn at(mut self, at: SimTime) -> Self {
        self.submit_time = at;
        self
    }

    pub fn digest(&self) -> Cid {
        let payload = content_id(&self.payload_bytes);
        tagged_hash(
            tag::TX,
            &[
                &self.tx_id.0.to_le_bytes(),
                &[self.kind.code()],
                self.submitter.name().as_bytes(),
                &[0],
                payload.as_bytes(),
            ],
        )
    }
}

/// One committed block of a replica's chain. Null batches from view changes
/// and batches whose transactions were all executed before leave no block.
#[derive(Debug, Clone)]
pub struct Block {
    pub height: u64,
    pub txs: Vec<Arc<Transaction>>,
    pub parent_digest: Cid,
    pub commit_time: SimTime,
    digest: Cid,
}

impl Block {
    fn new(height: u64, txs: Vec<Arc<Transaction>>, tx_digests: &[Cid], parent_digest: Cid, commit_time: SimTime) -> Self {
        let mut parts: Vec<&[u8]> = Vec::with_capacity(tx_digests.len() + 2);
        let h = height.to_le_bytes();
        parts.push(&h);
        parts.push(parent_digest.as_bytes());
        for d in tx_digests {
            parts.push(d.as_bytes());
        }
        let digest = tagged_hash(tag::BLOCK, &parts);
        Block { height, txs, parent_digest, commit_time, digest }
    }

    /// Digest over height, parent and contents; commit time is excluded.
    pub fn digest(&self) -> Cid {
        self.digest
    }

    pub fn tx_ids(&self) -> impl Iterator<Item = TxId> + '_ {
        self.txs.iter().map(|t| t.tx_id)
    }
}

/// Scripted misbehaviour of a Byzantine replica. Byzantine replicas never take
/// part in view changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ByzantineBehavior {
    /// Sends a different batch (as primary) or a different digest (as backup)
    /// to every peer.
    Equivocate,
    /// Sends nothing.
    Silent,
    /// Sends messages whose digest does not match their content.
    CorruptDigest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultMode {
    Honest,
    Crashed,
    Byzantine(ByzantineBehavior),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LedgerError {
    #[error("{n} replicas cannot tolerate {f} faults (need n >= 3f + 1)")]
    BadQuorum { n: u32, f: u32 },
    #[error("transaction {0} already submitted")]
    DuplicateTx(TxId),
    #[error("no commit progress for {budget_ms} ms of simulated time with {pending} transactions pending")]
    LivenessStall { budget_ms: f64, pending: usize },
    #[error("transaction {0} is not committed")]
    NotCommitted(TxId),
    #[error("unknown replica {0}")]
    UnknownReplica(ReplicaId),
}

pub(crate) fn quorum(f: u32) -> usize {
    2 * f as usize + 1
}
