use super::*;
use crate::payload::{apply_transform, TransformKind};
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

fn spec(ratio: u32, block: u32) -> TransformSpec {
    TransformSpec::new(TransformKind::ContourExtract, ratio, block).unwrap()
}

fn random_payload(len: usize, seed: u64) -> SemanticPayload {
    let mut bytes = vec![0u8; len];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut bytes);
    SemanticPayload::raw(bytes)
}

fn honest(crs: &Crs, s: &SemanticPayload, seed: u64) -> (SemanticPayload, Opening, Proof) {
    let t = apply_transform(&crs.transform, s).unwrap();
    let (_, opening) = commit_source(crs, s, seed).unwrap();
    let proof = prove(crs, s, &t, &opening).unwrap();
    (t, opening, proof)
}

/// A cheat that publishes `t` with the first `m` segments flipped.
fn corrupt(t: &SemanticPayload, seg: usize, m: usize) -> SemanticPayload {
    let mut bytes = t.bytes().to_vec();
    for i in 0..m {
        bytes[i * seg] ^= 0x01;
    }
    SemanticPayload::new(bytes, t.task_type())
}

#[test]
fn setup_checks_params() {
    assert!(setup(128, spec(1024, 1024), 16).is_ok());
    assert_eq!(setup(128, spec(4, 16), 0), Err(FairshareError::BadParams));
    assert_eq!(setup(64, spec(4, 16), 1), Err(FairshareError::BadParams));
    assert_eq!(setup(256, spec(3, 16), 1), Err(FairshareError::BadParams));
    assert_eq!(setup(256, spec(4, 16), 3), setup(256, spec(4, 16), 3));
    assert_eq!(setup(256, spec(4, 16), 3).unwrap().n_blocks, None);
}

#[test]
fn commitment_shape() {
    let crs = setup(128, spec(4, 16), 4).unwrap();
    let s = random_payload(16 * 16, 1);
    let (c, opening) = commit_source(&crs, &s, 7).unwrap();
    assert_eq!((c.n_blocks, c.block_size), (16, 16));
    assert_eq!(merkle_depth(16), 4);
    assert_eq!(opening.root(), c.merkle_root);
    let (c2, _) = commit_source(&crs, &s, 8).unwrap();
    assert_ne!(c.merkle_root, c2.merkle_root);
    let (c3, _) = commit_source(&crs, &s, 7).unwrap();
    assert_eq!(c.merkle_root, c3.merkle_root);
}

#[test]
fn commit_rejects_small_or_ragged_payloads() {
    let crs = setup(128, spec(4, 16), 4).unwrap();
    assert_eq!(
        commit_source(&crs, &random_payload(48, 0), 0).unwrap_err(),
        FairshareError::TooFewBlocks { n_blocks: 3, k: 4 }
    );
    assert!(matches!(commit_source(&crs, &random_payload(70, 0), 0), Err(FairshareError::UnalignedPayload { .. })));
}

#[test]
fn prove_rejects_foreign_opening() {
    let crs = setup(128, spec(4, 16), 2).unwrap();
    let s = random_payload(64, 1);
    let other = random_payload(64, 2);
    let (_, opening) = commit_source(&crs, &other, 0).unwrap();
    let t = apply_transform(&crs.transform, &s).unwrap();
    assert_eq!(prove(&crs, &s, &t, &opening), Err(FairshareError::OpeningMismatch));
}

#[test]
fn honest_proof_verifies_and_round_trips() {
    let crs = setup(128, spec(4, 16), 4).unwrap();
    let s = random_payload(256, 3);
    let (t, _, proof) = honest(&crs, &s, 11);
    assert!(verify(&crs, &t, &proof));
    let bytes = proof.to_bytes();
    assert_eq!(Proof::from_bytes(&bytes).unwrap(), proof);
    assert!(Proof::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(Proof::from_bytes(&longer).is_err());
}

#[test]
fn verifier_accepts_bound_crs_too() {
    let crs = setup(128, spec(4, 16), 4).unwrap();
    let s = random_payload(256, 3);
    let (t, _, proof) = honest(&crs, &s, 11);
    assert!(verify(&crs.bind(16).unwrap(), &t, &proof));
    assert!(!verify(&crs.bind(32).unwrap(), &t, &proof));
}

#[test]
fn full_challenge_equals_recomputation() {
    let crs = setup(128, spec(4, 16), 16).unwrap();
    let s = random_payload(256, 4);
    let (t, _, proof) = honest(&crs, &s, 0);
    let idx: Vec<u32> = proof.opened.iter().map(|o| o.index).collect();
    assert_eq!(idx, (0..16).collect::<Vec<_>>());
    let (_, opening) = commit_source(&crs, &s, 0).unwrap();
    let bad_t = corrupt(&t, 4, 1);
    let cheat = prove(&crs, &s, &bad_t, &opening).unwrap();
    assert_eq!(check(&crs, &bad_t, &cheat), Err(Rejection::Segment(0)));
}

#[test]
fn tampered_proofs_reject() {
    let crs = setup(128, spec(4, 16), 4).unwrap();
    let s = random_payload(256, 5);
    let (t, _, proof) = honest(&crs, &s, 1);

    let mut p = proof.clone();
    p.opened[0].block[0] ^= 1;
    assert_eq!(check(&crs, &t, &p), Err(Rejection::Path(p.opened[0].index)));

    let mut p = proof.clone();
    p.opened[1].path[0] = Cid::ZERO;
    assert!(matches!(check(&crs, &t, &p), Err(Rejection::Path(_))));

    let mut p = proof.clone();
    p.opened.pop();
    assert_eq!(check(&crs, &t, &p), Err(Rejection::Challenges));

    let mut p = proof.clone();
    p.version = 9;
    assert_eq!(check(&crs, &t, &p), Err(Rejection::Version));

    let other_t = SemanticPayload::raw(vec![0; t.size_bytes()]);
    assert_eq!(check(&crs, &other_t, &proof), Err(Rejection::TransformedDigest));
}

#[test]
fn all_blocks_corrupted_always_rejects() {
    let crs = setup(128, spec(4, 16), 1).unwrap();
    let s = random_payload(256, 6);
    let t = apply_transform(&crs.transform, &s).unwrap();
    let bad = corrupt(&t, 4, 16);
    for seed in 0..200 {
        let (_, opening) = commit_source(&crs, &s, seed).unwrap();
        let proof = prove(&crs, &s, &bad, &opening).unwrap();
        assert!(!verify(&crs, &bad, &proof));
    }
}

#[test]
fn one_bad_block_acceptance_rate() {
    let crs = setup(128, spec(4, 16), 4).unwrap();
    let s = random_payload(256, 7);
    let t = apply_transform(&crs.transform, &s).unwrap();
    let bad = corrupt(&t, 4, 1);
    let trials = 2000;
    let accepted = (0..trials)
        .filter(|seed| {
            let (_, opening) = commit_source(&crs, &s, *seed).unwrap();
            verify(&crs, &bad, &prove(&crs, &s, &bad, &opening).unwrap())
        })
        .count();
    let rate = accepted as f64 / trials as f64;
    assert!((rate - miss_probability(16, 1, 4)).abs() < 0.04, "rate {rate}");
}

#[test]
fn hypergeometric_oracle() {
    assert!((miss_probability(16, 1, 4) - 0.75).abs() < 1e-12);
    assert!((miss_probability(16, 2, 4) - 1001.0 / 1820.0).abs() < 1e-12);
    assert_eq!(miss_probability(16, 16, 1), 0.0);
    assert_eq!(miss_probability(16, 0, 16), 1.0);
}

#[test]
fn transcript_leaks_only_opened_blocks() {
    let crs = setup(128, spec(4, 16), 4).unwrap();
    let s = random_payload(256, 8);
    let (_, opening, proof) = honest(&crs, &s, 3);
    let bytes = proof.to_bytes();
    let contains = |needle: &[u8]| bytes.windows(needle.len()).any(|w| w == needle);
    let opened: Vec<u32> = proof.opened.iter().map(|o| o.index).collect();
    let mut leaked = 0;
    for (i, (block, salt)) in opening.blocks().iter().zip(opening.salts()).enumerate() {
        let present = contains(block);
        assert_eq!(present, contains(salt));
        assert_eq!(present, opened.contains(&(i as u32)));
        leaked += present as usize;
    }
    assert_eq!(leaked, 4);
}

#[test]
fn challenges_are_distinct_sorted_and_input_sensitive() {
    let crs = setup(128, spec(4, 16), 8).unwrap().bind(64).unwrap();
    let root = content_id(b"root");
    let base = derive_challenges(&root, &content_id(b"t"), &crs);
    assert_eq!(base.len(), 8);
    assert!(base.windows(2).all(|w| w[0] < w[1]));
    assert!(base.iter().all(|i| *i < 64));
    assert_eq!(base, derive_challenges(&root, &content_id(b"t"), &crs));
    let mut seen = std::collections::BTreeSet::new();
    seen.insert(base.clone());
    for bit in 0..256 {
        let mut d = *content_id(b"t").as_bytes();
        d[bit / 8] ^= 1 << (bit % 8);
        seen.insert(derive_challenges(&root, &Cid::from_bytes(d), &crs));
    }
    assert_eq!(seen.len(), 257);
    let mut seen = std::collections::BTreeSet::new();
    for i in 0..1000u32 {
        seen.insert(derive_challenges(&root, &content_id(&i.to_le_bytes()), &crs));
    }
    assert_eq!(seen.len(), 1000);
}

#[test]
fn challenges_pinned() {
    let crs = setup(128, spec(4, 16), 4).unwrap().bind(16).unwrap();
    let idx = derive_challenges(&Cid::ZERO, &content_id(b""), &crs);
    assert_eq!(idx, derive_challenges(&Cid::ZERO, &content_id(b""), &crs));
    assert_eq!(idx.len(), 4);
}

#[test]
fn reveal_checks_root_and_transform() {
    let crs = setup(128, spec(4, 16), 4).unwrap();
    let s = random_payload(256, 9);
    let (t, opening, proof) = honest(&crs, &s, 5);
    assert_eq!(reveal_source(&crs, &t, &proof, &opening).unwrap().bytes(), s.bytes());

    let (_, other) = commit_source(&crs, &random_payload(256, 10), 5).unwrap();
    match reveal_source(&crs, &t, &proof, &other) {
        Err(FairshareError::RootMismatch(r)) => {
            assert_eq!(r.proof_id, proof.id());
            assert_eq!(r.committed_root, proof.source_root);
            assert_eq!(r.observed, other.root());
        }
        e => panic!("unexpected {e:?}"),
    }

    // One wrong segment, missed by the sampled challenges, is caught at reveal.
    let crs2 = setup(128, spec(4, 16), 1).unwrap();
    let t_full = apply_transform(&crs2.transform, &s).unwrap();
    let (bad, cheat, opening) = (0..)
        .find_map(|seed| {
            let (_, opening) = commit_source(&crs2, &s, seed).unwrap();
            let bad = corrupt(&t_full, 4, 1);
            let proof = prove(&crs2, &s, &bad, &opening).unwrap();
            verify(&crs2, &bad, &proof).then_some((bad, proof, opening))
        })
        .unwrap();
    assert!(matches!(reveal_source(&crs2, &bad, &cheat, &opening), Err(FairshareError::TransformMismatch(_))));
}

#[test]
fn second_preimage_attempts_fail() {
    let crs = setup(128, spec(4, 16), 4).unwrap();
    let s = random_payload(256, 12);
    let (c, opening) = commit_source(&crs, &s, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..2000 {
        let mut blocks = opening.blocks().to_vec();
        let mut salts = opening.salts().to_vec();
        let i = (rng.next_u32() % 16) as usize;
        if rng.next_u32() % 2 == 0 {
            blocks[i][(rng.next_u32() % 16) as usize] ^= 1 + (rng.next_u32() % 255) as u8;
        } else {
            salts[i][(rng.next_u32() % 16) as usize] ^= 1 + (rng.next_u32() % 255) as u8;
        }
        assert_ne!(Opening::new(blocks, salts).root(), c.merkle_root);
    }
}

#[test]
fn downsample_identity_ratio() {
    let tspec = TransformSpec::new(TransformKind::Downsample, 1, 8).unwrap();
    let crs = setup(256, tspec, 2).unwrap();
    let s = random_payload(64, 13);
    let (t, _, proof) = honest(&crs, &s, 0);
    assert_eq!(t.bytes(), s.bytes());
    assert!(verify(&crs, &t, &proof));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn completeness(n in 1usize..40, k_frac in 0.0f64..1.0, seed in any::<u64>(), data_seed in any::<u64>()) {
        let k = 1 + ((n - 1) as f64 * k_frac) as u32;
        let crs = setup(128, spec(8, 32), k).unwrap();
        let s = random_payload(n * 32, data_seed);
        let (t, _, proof) = honest(&crs, &s, seed);
        prop_assert!(verify(&crs, &t, &proof));
        prop_assert_eq!(Proof::from_bytes(&proof.to_bytes()).unwrap(), proof);
    }
}
