//! Content identifiers and domain-separated SHA-256.

use alloc::string::String;
use core::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Length in bytes of every digest produced by this crate.
pub const DIGEST_LEN: usize = 32;

/// One-byte prefixes keeping the hash domains of different structures apart.
///
/// Plain content ids are untagged so a [`Cid`] is the ordinary SHA-256 of the
/// stored bytes.
pub mod tag {
    pub const MERKLE_LEAF: u8 = 0x00;
    pub const MERKLE_NODE: u8 = 0x01;
    pub const CHALLENGE: u8 = 0x02;
    pub const CRS: u8 = 0x03;
    pub const TX: u8 = 0x10;
    pub const BATCH: u8 = 0x11;
    pub const BLOCK: u8 = 0x12;
}

/// A 32-byte collision-resistant digest.
///
/// Human-readable formats carry it as a lowercase hex string, binary ones as
/// raw bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Cid([u8; DIGEST_LEN]);

impl Cid {
    pub const ZERO: Cid = Cid([0u8; DIGEST_LEN]);

    pub const fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Cid(bytes)
    }

    pub const fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Cid(out))
    }
}

impl Serialize for Cid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if serializer.is_human_readable() {
            serializer.serialize_str(&self.to_hex())
        } else {
            self.0.serialize(serializer)
        }
    }
}

impl<'de> Deserialize<'de> for Cid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        if deserializer.is_human_readable() {
            let s = <&str>::deserialize(deserializer)?;
            Cid::from_hex(s).map_err(de::Error::custom)
        } else {
            <[u8; DIGEST_LEN]>::deserialize(deserializer).map(Cid)
        }
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// SHA-256 of `bytes`.
pub fn content_id(bytes: &[u8]) -> Cid {
    Cid(Sha256::digest(bytes).into())
}

/// SHA-256 over `tag ‖ parts[0] ‖ parts[1] ‖ ...`.
pub fn tagged_hash(domain: u8, parts: &[&[u8]]) -> Cid {
    let mut hasher = Sha256::new();
    hasher.update([domain]);
    for part in parts {
        hasher.update(part);
    }
    Cid(hasher.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};
    use std::collections::HashSet;
    use std::vec::Vec;

    #[test]
    fn empty_input_matches_published_sha256_vector() {
        assert_eq!(
            content_id(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            content_id(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn deterministic() {
        let b = b"semantic payload";
        assert_eq!(content_id(b), content_id(b));
    }

    #[test]
    fn no_collisions_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut seen = HashSet::new();
        let mut inputs = HashSet::new();
        for _ in 0..10_000 {
            let len = (rng.next_u32() % 64) as usize;
            let mut buf = vec![0u8; len];
            rng.fill_bytes(&mut buf);
            if inputs.insert(buf.clone()) {
                assert!(seen.insert(content_id(&buf)));
            }
        }
    }

    #[test]
    fn tags_separate_domains() {
        let leaf = tagged_hash(tag::MERKLE_LEAF, &[b"x"]);
        let node = tagged_hash(tag::MERKLE_NODE, &[b"x"]);
        assert_ne!(leaf, node);
        assert_ne!(leaf, content_id(b"x"));
        // tag ‖ parts is a plain concatenation
        assert_eq!(tagged_hash(tag::CHALLENGE, &[b"ab", b"c"]), tagged_hash(tag::CHALLENGE, &[b"abc"]));
    }

    #[test]
    fn hex_round_trip() {
        let c = content_id(b"hex");
        assert_eq!(Cid::from_hex(&c.to_hex()).unwrap(), c);
        assert!(Cid::from_hex("zz").is_err());
        let _: Vec<u8> = c.as_bytes().to_vec();
    }
}
