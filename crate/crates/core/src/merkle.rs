//! Binary Merkle trees committing to ordered payload lists, plus the per-root
//! commitment set blocks embed.
//!
//! Leaves and interior nodes are domain-separated (`0x00` and `0x01` prefixes)
//! so a leaf payload can never be confused with a concatenated node pair. An
//! odd node at any level pairs with itself. A single-leaf tree's root is that
//! leaf hash; an empty tree commits to the all-zero digest.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::config::{digest_with, ChainConfig, Hash, HashAlg};
use crate::encoding::{Encodable, EncodingError, Reader};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MerkleError {
    #[error("root `{0}` is not declared by the chain")]
    UnknownRoot(String),
    #[error("leaf index {index} out of range for {leaves} leaves")]
    IndexOutOfRange { index: usize, leaves: usize },
}

pub fn leaf_hash(alg: HashAlg, payload: &[u8]) -> Hash {
    let mut buf = Vec::with_capacity(payload.len() + 1);
    buf.push(0x00);
    buf.extend_from_slice(payload);
    digest_with(alg, &buf)
}

pub fn interior_hash(alg: HashAlg, left: &Hash, right: &Hash) -> Hash {
    let mut buf = Vec::with_capacity(65);
    buf.push(0x01);
    buf.extend_from_slice(left.as_bytes());
    buf.extend_from_slice(right.as_bytes());
    digest_with(alg, &buf)
}

/// Which side of the pair the recorded sibling occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofStep {
    pub sibling: Hash,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InclusionProof {
    pub leaf: Hash,
    pub path: Vec<ProofStep>,
    pub expected_root: Hash,
}

impl Encodable for InclusionProof {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.leaf.encode_into(out);
        (self.path.len() as u64).encode_into(out);
        for step in &self.path {
            step.sibling.encode_into(out);
            out.push(match step.side {
                Side::Left => 0,
                Side::Right => 1,
            });
        }
        self.expected_root.encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let leaf = Hash::decode_from(r)?;
        let n = r.u64_be()?;
        let mut path = Vec::new();
        for _ in 0..n {
            let sibling = Hash::decode_from(r)?;
            let offset = r.offset();
            let side = match r.byte()? {
                0 => Side::Left,
                1 => Side::Right,
                tag => {
                    return Err(EncodingError::InvalidTag { what: "proof side", tag, offset })
                }
            };
            path.push(ProofStep { sibling, side });
        }
        let expected_root = Hash::decode_from(r)?;
        Ok(InclusionProof { leaf, path, expected_root })
    }
}

/// Fold a proof from its leaf to a root and compare with the expectation.
pub fn verify_proof(alg: HashAlg, proof: &InclusionProof) -> bool {
    let mut acc = proof.leaf;
    for step in &proof.path {
        acc = match step.side {
            Side::Left => interior_hash(alg, &step.sibling, &acc),
            Side::Right => interior_hash(alg, &acc, &step.sibling),
        };
    }
    acc == proof.expected_root
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    alg: HashAlg,
    /// `levels[0]` holds the leaf hashes; the last level holds the root.
    levels: Vec<Vec<Hash>>,
}

impl MerkleTree {
    pub fn from_payloads<P: AsRef<[u8]>>(alg: HashAlg, payloads: &[P]) -> MerkleTree {
        let leaves: Vec<Hash> = payloads
            .iter()
            .map(|p| leaf_hash(alg, p.as_ref()))
            .collect();
        Self::from_leaves(alg, leaves)
    }

    pub fn from_leaves(alg: HashAlg, leaves: Vec<Hash>) -> MerkleTree {
        let mut levels = vec![leaves];
        while levels.last().unwrap().len() > 1 {
            let prev = levels.last().unwrap();
            let mut next = Vec::with_capacity(prev.len().div_ceil(2));
            for pair in prev.chunks(2) {
                let left = &pair[0];
                let right = pair.get(1).unwrap_or(left);
                next.push(interior_hash(alg, left, right));
            }
            levels.push(next);
        }
        MerkleTree { alg, levels }
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn root(&self) -> Hash {
        match self.levels.last().unwrap().first() {
            Some(h) => *h,
            None => Hash::zero(),
        }
    }

    pub fn prove(&self, index: usize) -> Result<InclusionProof, MerkleError> {
        let leaves = self.leaf_count();
        if index >= leaves {
            return Err(MerkleError::IndexOutOfRange { index, leaves });
        }
        let mut path = Vec::new();
        let mut pos = index;
        for level in &self.levels[..self.levels.len() - 1] {
            let sibling_pos = pos ^ 1;
            // last node of an odd level pairs with itself
            let sibling = *level.get(sibling_pos).unwrap_or(&level[pos]);
            let side = if pos.is_multiple_of(2) { Side::Right } else { Side::Left };
            path.push(ProofStep { sibling, side });
            pos /= 2;
        }
        Ok(InclusionProof {
            leaf: self.levels[0][index],
            path,
            expected_root: self.root(),
        })
    }
}

/// Per-root commitments in declaration order: one `(root name, merkle root)`
/// entry per declared root, with the zero digest standing in for roots that
/// currently have no instances. Entries for undeclared roots are rejected.
pub fn compute_root_set(
    config: &ChainConfig,
    instances: &BTreeMap<String, Vec<Vec<u8>>>,
) -> Result<Vec<(String, Hash)>, MerkleError> {
    for name in instances.keys() {
        if config.find_root(name).is_none() {
            return Err(MerkleError::UnknownRoot(name.clone()));
        }
    }
    let mut out = Vec::with_capacity(config.roots.len());
    for root in &config.roots {
        let commitment = match instances.get(&root.name) {
            Some(payloads) if !payloads.is_empty() => {
                MerkleTree::from_payloads(config.hash_alg, payloads).root()
            }
            _ => Hash::zero(),
        };
        out.push((root.name.clone(), commitment));
    }
    Ok(out)
}
