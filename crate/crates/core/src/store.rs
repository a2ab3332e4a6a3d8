//! Content-addressed off-chain storage standing in for IPFS publication.
//!
//! Entries are keyed by the [`Cid`] of their bytes and re-verified on every
//! read, so out-of-band tampering surfaces as [`StoreError::CorruptEntry`].

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

use crate::hash::{content_id, Cid};
use crate::ledger::SimTime;
use crate::payload::SemanticPayload;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("no entry for {0}")]
    NotFound(Cid),
    #[error("stored bytes for {0} no longer hash to their id")]
    CorruptEntry(Cid),
}

#[derive(Debug, Clone, Default)]
pub struct Store {
    entries: BTreeMap<Cid, Vec<u8>>,
    get_latency_ms: f64,
    put_count: u64,
    get_count: u64,
}

impl Store {
    pub fn new(get_latency_ms: f64) -> Self {
        Store { get_latency_ms: get_latency_ms.max(0.0), ..Default::default() }
    }

    pub fn put(&mut self, payload: &SemanticPayload) -> Cid {
        self.put_bytes(payload.bytes())
    }

    pub fn put_bytes(&mut self, bytes: &[u8]) -> Cid {
        let cid = content_id(bytes);
        self.put_count += 1;
        self.entries.entry(cid).or_insert_with(|| bytes.to_vec());
        cid
    }

    pub fn get(&mut self, cid: &Cid) -> Result<&[u8], StoreError> {
        self.get_count += 1;
        let bytes = self.entries.get(cid).ok_or(StoreError::NotFound(*cid))?;
        if content_id(bytes) != *cid {
            return Err(StoreError::CorruptEntry(*cid));
        }
        Ok(bytes)
    }

    /// [`Store::get`] inside a simulation: advances `clock` by the lookup latency.
    pub fn fetch(&mut self, cid: &Cid, clock: &mut SimTime) -> Result<&[u8], StoreError> {
        *clock = *clock + self.get_latency_ms;
        self.get(cid)
    }

    /// Inserts bytes under a caller-supplied id without hashing them, as when
    /// restoring a snapshot. Integrity is checked later by [`Store::get`].
    pub fn import_raw(&mut self, cid: Cid, bytes: Vec<u8>) {
        self.entries.insert(cid, bytes);
    }

    pub fn contains(&self, cid: &Cid) -> bool {
        self.entries.contains_key(cid)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Cid, &[u8])> {
        self.entries.iter().map(|(c, b)| (c, b.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get_latency_ms(&self) -> f64 {
        self.get_latency_ms
    }

    pub fn put_count(&self) -> u64 {
        self.put_count
    }

    pub fn get_count(&self) -> u64 {
        self.get_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec;

    #[test]
    fn put_is_idempotent() {
        let mut store = Store::new(0.0);
        let p = SemanticPayload::raw(vec![1, 2, 3]);
        let a = store.put(&p);
        let b = store.put(&p);
        assert_eq!(a, b);
        assert_eq!(store.len(), 1);
        assert_eq!(store.put_count(), 2);
        assert_eq!(store.get(&a).unwrap(), &[1, 2, 3]);
    }

    #[test]
    fn unknown_cid_not_found() {
        let mut store = Store::new(0.0);
        let c = content_id(b"missing");
        assert_eq!(store.get(&c), Err(StoreError::NotFound(c)));
    }

    #[test]
    fn tampered_entry_detected() {
        let mut store = Store::new(0.0);
        let c = store.put_bytes(b"original");
        store.entries.get_mut(&c).unwrap()[0] ^= 1;
        assert_eq!(store.get(&c), Err(StoreError::CorruptEntry(c)));
    }

    #[test]
    fn megabyte_round_trip() {
        let mut store = Store::new(0.0);
        let bytes: Vec<u8> = (0..1_048_576u32).map(|i| (i.wrapping_mul(2654435761) >> 24) as u8).collect();
        let c = store.put_bytes(&bytes);
        let back = store.get(&c).unwrap();
        assert_eq!(back.len(), 1_048_576);
        assert_eq!(back, bytes.as_slice());
    }

    #[test]
    fn fetch_advances_clock() {
        let mut store = Store::new(12.5);
        let c = store.put_bytes(b"x");
        let mut clock = SimTime::from_ms(100.0);
        store.fetch(&c, &mut clock).unwrap();
        assert_eq!(clock.as_ms(), 112.5);
        assert_eq!(store.get_count(), 1);
    }

    proptest! {
        #[test]
        fn every_entry_hashes_to_its_key(items in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..64), 0..20)) {
            let mut store = Store::new(0.0);
            for item in &items {
                let c = store.put_bytes(item);
                prop_assert_eq!(store.get(&c).unwrap(), item.as_slice());
            }
            for (c, b) in store.entries() {
                prop_assert_eq!(content_id(b), *c);
            }
        }
    }
}
