//! Protocol core for blockchain-based semantic exchange.
//!
//! Everything in this crate is deterministic and `no_std` (with `alloc`):
//!
//! * [`payload`]: semantic payloads and the blockwise transforms that stand in
//!   for semantic extraction,
//! * [`hash`]: content identifiers and domain-separated hashing,
//! * [`store`]: content-addressed off-chain storage,
//! * [`ledger`]: a discrete-event PBFT cluster simulator,
//! * [`nft`]: the NFT contract and marketplace escrow, folded over committed
//!   ledger transactions,
//! * [`market`]: Stackelberg pricing between producers and consumers,
//! * [`fairshare`]: commit-and-challenge proofs binding a published transformed
//!   payload to a hidden source payload.
//!
//! IO, configuration, CSV and the command line live in the `semex` crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod fairshare;
pub mod hash;
pub mod ledger;
pub mod market;
pub mod nft;
pub mod payload;
pub mod store;

pub use hash::{content_id, Cid};
pub use payload::{apply_transform, chunk, SemanticPayload, TaskType, TransformKind, TransformSpec};
