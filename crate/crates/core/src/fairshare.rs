//! Commit-and-challenge proof that a published payload `t` is the blockwise
//! transform of a hidden source `s`.
//!
//! The producer commits to `s` with a Merkle tree over salted blocks, derives
//! `k` challenge indices from the root and `content_id(t)`, and opens only
//! those blocks. A verifier recomputes the transform on the opened blocks and
//! compares against the matching segments of `t`. A cheat that corrupts `m`
//! of `N` segments survives with probability `C(N−m, k) / C(N, k)`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{content_id, tag, tagged_hash, Cid};
use crate::payload::{transform_bytes, SemanticPayload, TransformSpec};

pub const PROOF_VERSION: u16 = 1;
pub const SALT_LEN: usize = 16;

pub type Salt = [u8; SALT_LEN];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FairshareError {
    #[error("invalid proof parameters")]
    BadParams,
    #[error("payload has {n_blocks} blocks but {k} challenges are required")]
    TooFewBlocks { n_blocks: u32, k: u32 },
    #[error("payload of {len} bytes is not a whole number of {block_size}-byte blocks")]
    UnalignedPayload { len: usize, block_size: u32 },
    #[error("opening does not match the committed source")]
    OpeningMismatch,
    #[error("malformed proof encoding")]
    MalformedProof,
    #[error("revealed source does not match the committed root")]
    RootMismatch(Box<FraudRecord>),
    #[error("revealed source does not transform into the published payload")]
    TransformMismatch(Box<FraudRecord>),
}

/// Evidence that a seller's reveal contradicts the proof bound to its token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FraudRecord {
    /// Content id of the serialized proof the seller published.
    pub proof_id: Cid,
    pub committed_root: Cid,
    pub published_t: Cid,
    /// Root recomputed from the reveal for a root mismatch, content id of the
    /// recomputed transform for a transform mismatch.
    pub observed: Cid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crs {
    pub security_bits: u16,
    pub transform: TransformSpec,
    /// Number of source blocks; fixed once the source is committed.
    pub n_blocks: Option<u32>,
    pub challenge_count: u32,
    pub version: u16,
}

/// Transparent setup: the reference string is a plain description of the
/// parameters.
pub fn setup(security_bits: u16, transform: TransformSpec, k: u32) -> Result<Crs, FairshareError> {
    if k == 0 || !matches!(security_bits, 128 | 256) || !transform.block_size_bytes().is_multiple_of(transform.ratio()) {
        return Err(FairshareError::BadParams);
    }
    Ok(Crs { security_bits, transform, n_blocks: None, challenge_count: k, version: PROOF_VERSION })
}

impl Crs {
    pub fn bind(&self, n_blocks: u32) -> Result<Crs, FairshareError> {
        if n_blocks < self.challenge_count {
            return Err(FairshareError::TooFewBlocks { n_blocks, k: self.challenge_count });
        }
        if self.n_blocks.is_some_and(|n| n != n_blocks) {
            return Err(FairshareError::BadParams);
        }
        Ok(Crs { n_blocks: Some(n_blocks), ..*self })
    }

    pub fn block_size(&self) -> usize {
        self.transform.block_size_bytes() as usize
    }

    pub fn segment_len(&self) -> usize {
        self.transform.output_per_block()
    }

    pub fn digest(&self) -> Cid {
        let kind = match self.transform.kind() {
            crate::payload::TransformKind::ContourExtract => 0u8,
            crate::payload::TransformKind::Downsample => 1u8,
        };
        tagged_hash(
            tag::CRS,
            &[
                &self.version.to_le_bytes(),
                &self.security_bits.to_le_bytes(),
                &[kind],
                &self.transform.ratio().to_le_bytes(),
                &self.transform.block_size_bytes().to_le_bytes(),
                &self.n_blocks.unwrap_or(0).to_le_bytes(),
                &self.challenge_count.to_le_bytes(),
            ],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCommitment {
    pub merkle_root: Cid,
    pub n_blocks: u32,
    pub block_size: u32,
}

/// The producer's private decommitment: every block and its salt.
#[derive(Clone, PartialEq, Eq)]
pub struct Opening {
    blocks: Vec<Vec<u8>>,
    salts: Vec<Salt>,
}

impl core::fmt::Debug for Opening {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Opening").field("n_blocks", &self.blocks.len()).finish_non_exhaustive()
    }
}

impl Opening {
    pub fn new(blocks: Vec<Vec<u8>>, salts: Vec<Salt>) -> Self {
        Opening { blocks, salts }
    }

    pub fn blocks(&self) -> &[Vec<u8>] {
        &self.blocks
    }

    pub fn salts(&self) -> &[Salt] {
        &self.salts
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn root(&self) -> Cid {
        merkle_root(&self.leaves())
    }

    pub fn to_payload(&self) -> SemanticPayload {
        SemanticPayload::raw(self.blocks.concat())
    }

    fn leaves(&self) -> Vec<Cid> {
        self.blocks.iter().zip(&self.salts).enumerate().map(|(i, (b, s))| leaf_hash(i as u32, s, b)).collect()
    }
}

pub fn leaf_hash(index: u32, salt: &Salt, block: &[u8]) -> Cid {
    tagged_hash(tag::MERKLE_LEAF, &[&index.to_le_bytes(), salt, block])
}

fn node_hash(l: &Cid, r: &Cid) -> Cid {
    tagged_hash(tag::MERKLE_NODE, &[l.as_bytes(), r.as_bytes()])
}

fn padded_width(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

fn tree_depth(n: usize) -> usize {
    padded_width(n).trailing_zeros() as usize
}

fn merkle_levels(leaves: &[Cid]) -> Vec<Vec<Cid>> {
    let mut level = leaves.to_vec();
    level.resize(padded_width(leaves.len()), Cid::ZERO);
    let mut levels = vec![level];
    while levels.last().map_or(0, Vec::len) > 1 {
        let prev = levels.last().unwrap();
        let next = prev.chunks_exact(2).map(|p| node_hash(&p[0], &p[1])).collect();
        levels.push(next);
    }
    levels
}

fn merkle_root(leaves: &[Cid]) -> Cid {
    merkle_levels(leaves).last().unwrap()[0]
}

fn auth_path(levels: &[Vec<Cid>], mut index: usize) -> Vec<Cid> {
    let mut path = Vec::with_capacity(levels.len() - 1);
    for level in &levels[..levels.len() - 1] {
        path.push(level[index ^ 1]);
        index >>= 1;
    }
    path
}

fn root_from_path(leaf: Cid, mut index: usize, path: &[Cid]) -> Cid {
    let mut acc = leaf;
    for sibling in path {
        acc = if index & 1 == 0 { node_hash(&acc, sibling) } else { node_hash(sibling, &acc) };
        index >>= 1;
    }
    acc
}

pub fn commit_source(crs: &Crs, s: &SemanticPayload, rng_seed: u64) -> Result<(SourceCommitment, Opening), FairshareError> {
    let bs = crs.block_size();
    if !s.size_bytes().is_multiple_of(bs) {
        return Err(FairshareError::UnalignedPayload { len: s.size_bytes(), block_size: bs as u32 });
    }
    let n = (s.size_bytes() / bs) as u32;
    crs.bind(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let blocks: Vec<Vec<u8>> = s.bytes().chunks_exact(bs).map(<[u8]>::to_vec).collect();
    let salts = blocks
        .iter()
        .map(|_| {
            let mut salt = [0u8; SALT_LEN];
            rng.fill_bytes(&mut salt);
            salt
        })
        .collect();
    let opening = Opening { blocks, salts };
    let commitment = SourceCommitment { merkle_root: opening.root(), n_blocks: n, block_size: bs as u32 };
    Ok((commitment, opening))
}

/// Fiat-Shamir challenge indices, sorted ascending.
///
/// # Panics
///
/// If `crs` has no block count bound or asks for more challenges than blocks.
pub fn derive_challenges(source_root: &Cid, t_digest: &Cid, crs: &Crs) -> Vec<u32> {
    let n = crs.n_blocks.expect("challenge derivation needs a bound block count");
    let k = crs.challenge_count as usize;
    assert!(k <= n as usize, "more challenges than blocks");
    let zone = ((1u128 << 64) / u128::from(n)) * u128::from(n);
    let crs_digest = crs.digest();
    let mut picked = Vec::with_capacity(k);
    let mut counter = 0u32;
    while picked.len() < k {
        let h = tagged_hash(
            tag::CHALLENGE,
            &[crs_digest.as_bytes(), source_root.as_bytes(), t_digest.as_bytes(), &counter.to_le_bytes()],
        );
        counter += 1;
        for word in h.as_bytes().chunks_exact(8) {
            let w = u64::from_le_bytes(word.try_into().unwrap());
            if u128::from(w) >= zone {
                continue;
            }
            let idx = (w % u64::from(n)) as u32;
            if !picked.contains(&idx) {
                picked.push(idx);
                if picked.len() == k {
                    break;
                }
            }
        }
    }
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenedBlock {
    pub index: u32,
    pub block: Vec<u8>,
    pub salt: Salt,
    pub path: Vec<Cid>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proof {
    pub version: u16,
    pub source_root: Cid,
    pub t_digest: Cid,
    pub opened: Vec<OpenedBlock>,
}

impl Proof {
    /// `version u16 | source_root | t_digest | k u32 | k × (index u32,
    /// block_len u32, block, salt, depth u8, depth × node)`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(self.source_root.as_bytes());
        out.extend_from_slice(self.t_digest.as_bytes());
        out.extend_from_slice(&(self.opened.len() as u32).to_le_bytes());
        for o in &self.opened {
            out.extend_from_slice(&o.index.to_le_bytes());
            out.extend_from_slice(&(o.block.len() as u32).to_le_bytes());
            out.extend_from_slice(&o.block);
            out.extend_from_slice(&o.salt);
            out.push(o.path.len() as u8);
            for node in &o.path {
                out.extend_from_slice(node.as_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Proof, FairshareError> {
        let mut r = Reader(bytes);
        let version = u16::from_le_bytes(r.array()?);
        let source_root = Cid::from_bytes(r.array()?);
        let t_digest = Cid::from_bytes(r.array()?);
        let k = u32::from_le_bytes(r.array()?);
        let mut opened = Vec::new();
        for _ in 0..k {
            let index = u32::from_le_bytes(r.array()?);
            let len = u32::from_le_bytes(r.array()?) as usize;
            let block = r.take(len)?.to_vec();
            let salt = r.array()?;
            let [depth] = r.array()?;
            let path = (0..depth).map(|_| r.array().map(Cid::from_bytes)).collect::<Result<_, _>>()?;
            opened.push(OpenedBlock { index, block, salt, path });
        }
        if !r.0.is_empty() {
            return Err(FairshareError::MalformedProof);
        }
        Ok(Proof { version, source_root, t_digest, opened })
    }

    pub fn id(&self) -> Cid {
        content_id(&self.to_bytes())
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FairshareError> {
        if self.0.len() < n {
            return Err(FairshareError::MalformedProof);
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FairshareError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

/// Opens the challenged blocks. `t` is not checked against `s`, so a dishonest
/// producer can prove a wrong `t` and only loses if a challenge hits it.
pub fn prove(crs: &Crs, s: &SemanticPayload, t: &SemanticPayload, opening: &Opening) -> Result<Proof, FairshareError> {
    let bs = crs.block_size();
    let matches_source = opening.salts.len() == opening.blocks.len()
        && opening.blocks.iter().all(|b| b.len() == bs)
        && opening.blocks.len() * bs == s.size_bytes()
        && s.bytes().chunks_exact(bs).zip(&opening.blocks).all(|(a, b)| a == b.as_slice());
    if !matches_source {
        return Err(FairshareError::OpeningMismatch);
    }
    let crs = crs.bind(opening.n_blocks() as u32)?;
    let levels = merkle_levels(&opening.leaves());
    let source_root = levels.last().unwrap()[0];
    let t_digest = content_id(t.bytes());
    let opened = derive_challenges(&source_root, &t_digest, &crs)
        .into_iter()
        .map(|i| OpenedBlock {
            index: i,
            block: opening.blocks[i as usize].clone(),
            salt: opening.salts[i as usize],
            path: auth_path(&levels, i as usize),
        })
        .collect();
    Ok(Proof { version: crs.version, source_root, t_digest, opened })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("proof version differs from the reference string")]
    Version,
    #[error("proof is for a different transformed payload")]
    TransformedDigest,
    #[error("transformed payload length does not fit the block layout")]
    Length,
    #[error("opened indices are not the derived challenges")]
    Challenges,
    #[error("authentication path for block {0} does not reach the root")]
    Path(u32),
    #[error("block {0} does not transform into its published segment")]
    Segment(u32),
}

pub fn verify(crs: &Crs, t: &SemanticPayload, proof: &Proof) -> bool {
    check(crs, t, proof).is_ok()
}

/// [`verify`] with the reason for a rejection.
pub fn check(crs: &Crs, t: &SemanticPayload, proof: &Proof) -> Result<(), Rejection> {
    if proof.version != crs.version {
        return Err(Rejection::Version);
    }
    if proof.t_digest != content_id(t.bytes()) {
        return Err(Rejection::TransformedDigest);
    }
    let seg = crs.segment_len();
    if seg == 0 || !t.size_bytes().is_multiple_of(seg) {
        return Err(Rejection::Length);
    }
    let n = (t.size_bytes() / seg) as u32;
    let crs = crs.bind(n).map_err(|_| Rejection::Length)?;
    let expected = derive_challenges(&proof.source_root, &proof.t_digest, &crs);
    if proof.opened.len() != expected.len() || proof.opened.iter().zip(&expected).any(|(o, i)| o.index != *i) {
        return Err(Rejection::Challenges);
    }
    let depth = tree_depth(n as usize);
    for o in &proof.opened {
        if o.block.len() != crs.block_size() || o.path.len() != depth {
            return Err(Rejection::Path(o.index));
        }
        let leaf = leaf_hash(o.index, &o.salt, &o.block);
        if root_from_path(leaf, o.index as usize, &o.path) != proof.source_root {
            return Err(Rejection::Path(o.index));
        }
        let start = o.index as usize * seg;
        let segment = transform_bytes(crs.transform.kind(), crs.transform.ratio(), &o.block);
        if segment != t.bytes()[start..start + seg] {
            return Err(Rejection::Segment(o.index));
        }
    }
    Ok(())
}

/// Buyer-side check of the full post-payment reveal.
pub fn reveal_source(crs: &Crs, t: &SemanticPayload, proof: &Proof, revealed: &Opening) -> Result<SemanticPayload, FairshareError> {
    let fraud = |observed| Box::new(FraudRecord {
        proof_id: proof.id(),
        committed_root: proof.source_root,
        published_t: proof.t_digest,
        observed,
    });
    let well_formed = revealed.salts.len() == revealed.blocks.len()
        && revealed.blocks.iter().all(|b| b.len() == crs.block_size());
    let root = if well_formed { revealed.root() } else { Cid::ZERO };
    if root != proof.source_root {
        return Err(FairshareError::RootMismatch(fraud(root)));
    }
    let s = revealed.to_payload();
    let recomputed = transform_bytes(crs.transform.kind(), crs.transform.ratio(), s.bytes());
    let digest = content_id(&recomputed);
    if digest != proof.t_digest || recomputed != t.bytes() {
        return Err(FairshareError::TransformMismatch(fraud(digest)));
    }
    Ok(s)
}

/// `C(n − m, k) / C(n, k)`: chance that `k` distinct challenges among `n`
/// blocks all miss `m` corrupted ones.
pub fn miss_probability(n: u32, m: u32, k: u32) -> f64 {
    let good = n.saturating_sub(m);
    if k > good {
        return 0.0;
    }
    (0..k).map(|i| f64::from(good - i) / f64::from(n - i)).product()
}

/// Authentication path length for `n_blocks` leaves.
pub fn merkle_depth(n_blocks: usize) -> usize {
    tree_depth(n_blocks)
}

#[cfg(test)]
mod tests;
