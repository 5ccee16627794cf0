//! Binary Merkle tree over transaction ids.
//!
//! leaf = H(0x10 || tx_id), node = H(0x11 || left || right). A level with an
//! odd number of nodes pairs its last node with itself. One leaf is its own
//! root; the empty tree's root is 32 zero bytes.

use serde::{Deserialize, Serialize};

use super::encoding::{TAG_MERKLE_LEAF, TAG_MERKLE_NODE};
use crate::digest::Digest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("leaf index {index} out of range for {len} leaves")]
pub struct IndexOutOfRange {
    pub index: usize,
    pub len: usize,
}

/// Sibling hashes from the leaf level upward. Left/right placement is
/// implied by the leaf index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub siblings: Vec<Digest>,
}

pub fn leaf_hash(tx_id: &Digest) -> Digest {
    Digest::of_parts(&[&[TAG_MERKLE_LEAF], tx_id.as_bytes()])
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    Digest::of_parts(&[&[TAG_MERKLE_NODE], left.as_bytes(), right.as_bytes()])
}

fn next_level(level: &[Digest]) -> Vec<Digest> {
    level
        .chunks(2)
        .map(|pair| node_hash(&pair[0], pair.get(1).unwrap_or(&pair[0])))
        .collect()
}

pub fn merkle_root_of(ids: &[Digest]) -> Digest {
    if ids.is_empty() {
        return Digest::ZERO;
    }
    let mut level: Vec<Digest> = ids.iter().map(leaf_hash).collect();
    while level.len() > 1 {
        level = next_level(&level);
    }
    level[0]
}

pub fn merkle_proof_of(ids: &[Digest], index: usize) -> Result<MerkleProof, IndexOutOfRange> {
    if index >= ids.len() {
        return Err(IndexOutOfRange { index, len: ids.len() });
    }
    let mut siblings = Vec::new();
    let mut level: Vec<Digest> = ids.iter().map(leaf_hash).collect();
    let mut pos = index;
    while level.len() > 1 {
        let sibling = pos ^ 1;
        siblings.push(*level.get(sibling).unwrap_or(&level[pos]));
        level = next_level(&level);
        pos /= 2;
    }
    Ok(MerkleProof { siblings })
}

pub fn verify_proof(root: &Digest, tx_id: &Digest, index: usize, proof: &MerkleProof) -> bool {
    let mut acc = leaf_hash(tx_id);
    let mut pos = index;
    for sibling in &proof.siblings {
        acc = if pos.is_multiple_of(2) { node_hash(&acc, sibling) } else { node_hash(sibling, &acc) };
        pos /= 2;
    }
    pos == 0 && acc == *root
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<Digest> {
        (0..n).map(|i| Digest::of(&(i as u64).to_be_bytes())).collect()
    }

    #[test]
    fn empty_tree_is_zero() {
        assert_eq!(merkle_root_of(&[]), Digest::ZERO);
        assert!(merkle_proof_of(&[], 0).is_err());
    }

    #[test]
    fn single_leaf_is_root() {
        let id = ids(1);
        assert_eq!(merkle_root_of(&id), leaf_hash(&id[0]));
        let proof = merkle_proof_of(&id, 0).unwrap();
        assert!(proof.siblings.is_empty());
        assert!(verify_proof(&merkle_root_of(&id), &id[0], 0, &proof));
    }

    #[test]
    fn three_leaves_duplicate_last() {
        let id = ids(3);
        let l: Vec<_> = id.iter().map(leaf_hash).collect();
        let expected = node_hash(&node_hash(&l[0], &l[1]), &node_hash(&l[2], &l[2]));
        assert_eq!(merkle_root_of(&id), expected);
    }

    #[test]
    fn proofs_complete_for_eight() {
        let id = ids(8);
        let root = merkle_root_of(&id);
        for (i, leaf) in id.iter().enumerate() {
            let proof = merkle_proof_of(&id, i).unwrap();
            assert_eq!(proof.siblings.len(), 3);
            assert!(verify_proof(&root, leaf, i, &proof));
            assert!(!verify_proof(&root, leaf, i ^ 1, &proof));
        }
        assert_eq!(merkle_proof_of(&id, 8), Err(IndexOutOfRange { index: 8, len: 8 }));
    }

    #[test]
    fn order_sensitive() {
        let mut id = ids(4);
        let root = merkle_root_of(&id);
        id.swap(1, 2);
        assert_ne!(merkle_root_of(&id), root);
    }
}
