//! Semantic payloads and the deterministic blockwise transforms that stand in
//! for semantic extraction.
//!
//! A transform with ratio `r` maps source block `j` (bytes `j*r .. (j+1)*r`) to
//! output byte `j`, so the output of any aligned source range depends only on
//! that range. The commit-and-challenge proofs rely on this locality.

use alloc::vec::Vec;
use core::num::NonZeroUsize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskType {
    ContourMap,
    Snapshot,
    Raw,
}

impl TaskType {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskType::ContourMap => "ContourMap",
            TaskType::Snapshot => "Snapshot",
            TaskType::Raw => "Raw",
        }
    }
}

/// Byte content plus the semantic task it serves.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticPayload {
    bytes: Vec<u8>,
    task_type: TaskType,
}

impl SemanticPayload {
    pub fn new(bytes: Vec<u8>, task_type: TaskType) -> Self {
        SemanticPayload { bytes, task_type }
    }

    pub fn raw(bytes: Vec<u8>) -> Self {
        Self::new(bytes, TaskType::Raw)
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn task_type(&self) -> TaskType {
        self.task_type
    }

    pub fn size_bytes(&self) -> usize {
        self.bytes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformKind {
    ContourExtract,
    Downsample,
}

impl TransformKind {
    pub fn output_task(&self) -> TaskType {
        match self {
            TransformKind::ContourExtract => TaskType::ContourMap,
            TransformKind::Downsample => TaskType::Snapshot,
        }
    }

    fn mix_constant(&self) -> u8 {
        match self {
            TransformKind::ContourExtract => 0x3c,
            TransformKind::Downsample => 0xa5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("transform ratio and block size must be at least 1")]
    InvalidSpec,
    #[error("payload of {size} bytes is smaller than the transform ratio {ratio}")]
    InputTooSmall { size: usize, ratio: u32 },
}

/// Transform parameters: output size divisor and proof chunking granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransformSpec {
    kind: TransformKind,
    ratio: u32,
    block_size_bytes: u32,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, ratio: u32, block_size_bytes: u32) -> Result<Self, PayloadError> {
        if ratio == 0 || block_size_bytes == 0 {
            return Err(PayloadError::InvalidSpec);
        }
        Ok(TransformSpec { kind, ratio, block_size_bytes })
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn ratio(&self) -> u32 {
        self.ratio
    }

    pub fn block_size_bytes(&self) -> u32 {
        self.block_size_bytes
    }

    /// Output bytes produced by one full proof block.
    pub fn output_per_block(&self) -> usize {
        (self.block_size_bytes / self.ratio) as usize
    }
}

/// Folds one source block into one output byte: XOR-accumulate, then an
/// invertible byte mix keyed by the transform kind.
pub fn fold_block(kind: TransformKind, block: &[u8]) -> u8 {
    let acc = block.iter().fold(0u8, |acc, &b| acc ^ b);
    let y = (acc ^ kind.mix_constant()).wrapping_mul(0x9d);
    y ^ (y >> 4)
}

/// Applies the fold to every complete `ratio`-sized block of `bytes`; a
/// trailing partial block produces no output. Ratio 1 is the identity.
pub fn transform_bytes(kind: TransformKind, ratio: u32, bytes: &[u8]) -> Vec<u8> {
    if ratio == 1 {
        return bytes.to_vec();
    }
    bytes
        .chunks_exact(ratio as usize)
        .map(|block| fold_block(kind, block))
        .collect()
}

pub fn apply_transform(spec: &TransformSpec, s: &SemanticPayload) -> Result<SemanticPayload, PayloadError> {
    if s.size_bytes() < spec.ratio as usize {
        return Err(PayloadError::InputTooSmall { size: s.size_bytes(), ratio: spec.ratio });
    }
    let out = transform_bytes(spec.kind, spec.ratio, &s.bytes);
    Ok(SemanticPayload::new(out, spec.kind.output_task()))
}

/// Splits the payload into `block_size` blocks; only the last may be short.
pub fn chunk(s: &SemanticPayload, block_size: NonZeroUsize) -> Vec<&[u8]> {
    s.bytes.chunks(block_size.get()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec;

    // Independent restatement of the fold, written out step by step.
    fn reference_fold(kind: TransformKind, block: &[u8]) -> u8 {
        let mut x: u32 = 0;
        for b in block {
            x ^= *b as u32;
        }
        let key = if kind == TransformKind::ContourExtract { 0x3c } else { 0xa5 };
        let y = ((x ^ key) * 157) % 256;
        (y ^ (y / 16)) as u8
    }

    #[test]
    fn ratio_four_on_eight_bytes() {
        let spec = TransformSpec::new(TransformKind::ContourExtract, 4, 4).unwrap();
        let s = SemanticPayload::raw(vec![1, 2, 3, 4, 5, 6, 7, 8]);
        let t = apply_transform(&spec, &s).unwrap();
        assert_eq!(t.size_bytes(), 2);
        assert_eq!(t.task_type(), TaskType::ContourMap);
        assert_eq!(t.bytes(), &[reference_fold(spec.kind(), &[1, 2, 3, 4]), reference_fold(spec.kind(), &[5, 6, 7, 8])]);
        // 1^2^3^4 = 4, 5^6^7^8 = 12, then the mix
        assert_eq!(t.bytes(), &[0x5d, 0x77]);
    }

    #[test]
    fn megabyte_to_kilobyte() {
        let spec = TransformSpec::new(TransformKind::ContourExtract, 1024, 4096).unwrap();
        let s = SemanticPayload::raw((0..1_048_576u32).map(|i| (i * 31 % 251) as u8).collect());
        assert_eq!(apply_transform(&spec, &s).unwrap().size_bytes(), 1024);
    }

    #[test]
    fn identity_ratio_keeps_bytes() {
        let spec = TransformSpec::new(TransformKind::Downsample, 1, 1).unwrap();
        let s = SemanticPayload::raw(vec![9, 8, 7]);
        let t = apply_transform(&spec, &s).unwrap();
        assert_eq!(t.bytes(), s.bytes());
        assert_eq!(t.task_type(), TaskType::Snapshot);
    }

    #[test]
    fn too_small_input_rejected() {
        let spec = TransformSpec::new(TransformKind::ContourExtract, 16, 16).unwrap();
        let err = apply_transform(&spec, &SemanticPayload::raw(vec![0; 15])).unwrap_err();
        assert_eq!(err, PayloadError::InputTooSmall { size: 15, ratio: 16 });
    }

    #[test]
    fn zero_parameters_rejected() {
        assert_eq!(TransformSpec::new(TransformKind::Downsample, 0, 1), Err(PayloadError::InvalidSpec));
        assert_eq!(TransformSpec::new(TransformKind::Downsample, 1, 0), Err(PayloadError::InvalidSpec));
    }

    #[test]
    fn chunk_lengths() {
        let s = SemanticPayload::raw(vec![0; 10]);
        let lens: Vec<usize> = chunk(&s, NonZeroUsize::new(4).unwrap()).iter().map(|b| b.len()).collect();
        assert_eq!(lens, vec![4, 4, 2]);
        let s = SemanticPayload::raw(vec![0; 8]);
        assert_eq!(chunk(&s, NonZeroUsize::new(8).unwrap()).len(), 1);
    }

    proptest! {
        #[test]
        fn chunks_concatenate_back(bytes in proptest::collection::vec(any::<u8>(), 0..512), k in 1usize..64) {
            let s = SemanticPayload::raw(bytes.clone());
            let blocks = chunk(&s, NonZeroUsize::new(k).unwrap());
            prop_assert_eq!(blocks.concat(), bytes);
            if let Some((_, init)) = blocks.split_last() {
                prop_assert!(init.iter().all(|b| b.len() == k));
            }
        }

        #[test]
        fn size_law_and_determinism(bytes in proptest::collection::vec(any::<u8>(), 1..2048), ratio in 1u32..64) {
            prop_assume!(bytes.len() >= ratio as usize);
            let spec = TransformSpec::new(TransformKind::ContourExtract, ratio, ratio).unwrap();
            let s = SemanticPayload::raw(bytes.clone());
            let a = apply_transform(&spec, &s).unwrap();
            let b = apply_transform(&spec, &s).unwrap();
            prop_assert_eq!(a.size_bytes(), bytes.len() / ratio as usize);
            prop_assert_ne!(a.task_type(), TaskType::Raw);
            prop_assert_eq!(&a, &b);
            if ratio > 1 {
                for (j, out) in a.bytes().iter().enumerate() {
                    let block = &bytes[j * ratio as usize..(j + 1) * ratio as usize];
                    prop_assert_eq!(*out, reference_fold(spec.kind(), block));
                }
            }
        }
    }
}
