//! Merkle root, proofs and verification against a top-down recursive
//! reference written directly on SHA-256.

use revledger_core::ledger::merkle::{merkle_proof_of, merkle_root_of, verify_proof, MerkleProof};
use revledger_core::Digest;
use sha2::{Digest as _, Sha256};

fn sha(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Number of nodes at `level` (0 = leaves) for `n` leaves.
fn width(n: usize, level: u32) -> usize {
    n.div_ceil(1 << level)
}

fn height(n: usize) -> u32 {
    let mut h = 0;
    while width(n, h) > 1 {
        h += 1;
    }
    h
}

/// Node `i` at `level`; indices past the end of a level stand for its last node.
fn node(ids: &[[u8; 32]], level: u32, i: usize) -> [u8; 32] {
    let i = i.min(width(ids.len(), level) - 1);
    if level == 0 {
        return sha(&[&[0x10], &ids[i]]);
    }
    let left = node(ids, level - 1, 2 * i);
    let right = node(ids, level - 1, 2 * i + 1);
    sha(&[&[0x11], &left, &right])
}

fn oracle_root(ids: &[[u8; 32]]) -> [u8; 32] {
    if ids.is_empty() {
        return [0; 32];
    }
    node(ids, height(ids.len()), 0)
}

fn oracle_proof(ids: &[[u8; 32]], index: usize) -> Vec<[u8; 32]> {
    (0..height(ids.len())).map(|l| node(ids, l, (index >> l) ^ 1)).collect()
}

fn ids(n: usize) -> Vec<[u8; 32]> {
    (0..n).map(|i| sha(&[b"tx", &(i as u64).to_be_bytes()])).collect()
}

fn digests(raw: &[[u8; 32]]) -> Vec<Digest> {
    raw.iter().map(|b| Digest(*b)).collect()
}

#[test]
fn roots_and_proofs_match_for_1_to_16_leaves() {
    assert_eq!(merkle_root_of(&[]), Digest::ZERO);
    for n in 1..=16 {
        let raw = ids(n);
        let ds = digests(&raw);
        let root = merkle_root_of(&ds);
        assert_eq!(root.0, oracle_root(&raw), "root for {n} leaves");
        for i in 0..n {
            let proof = merkle_proof_of(&ds, i).unwrap();
            let expected: Vec<Digest> = oracle_proof(&raw, i).into_iter().map(Digest).collect();
            assert_eq!(proof.siblings, expected, "proof {i} of {n}");
            assert!(verify_proof(&root, &ds[i], i, &proof));
        }
        assert!(merkle_proof_of(&ds, n).is_err());
    }
}

#[test]
fn single_byte_perturbations_fail_at_8_leaves() {
    let ds = digests(&ids(8));
    let root = merkle_root_of(&ds);
    for i in 0..8 {
        let proof = merkle_proof_of(&ds, i).unwrap();
        for byte in 0..32 {
            for bit in 0..8 {
                let mut tx = ds[i];
                tx.0[byte] ^= 1 << bit;
                assert!(!verify_proof(&root, &tx, i, &proof));
                for level in 0..proof.siblings.len() {
                    let mut bad = proof.clone();
                    bad.siblings[level].0[byte] ^= 1 << bit;
                    assert!(!verify_proof(&root, &ds[i], i, &bad), "leaf {i} level {level} byte {byte}");
                }
            }
        }
        for j in (0..8).filter(|&j| j != i) {
            assert!(!verify_proof(&root, &ds[i], j, &proof), "proof for {i} used at {j}");
        }
        let short = MerkleProof { siblings: proof.siblings[..2].to_vec() };
        assert!(!verify_proof(&root, &ds[i], i, &short));
    }
}
