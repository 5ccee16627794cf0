use std::fmt;

use serde::{Deserialize, Serialize};

use super::Block;
use crate::content_store::{BlobStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefectKind {
    UnparseableRecord,
    NonCanonicalRecord,
    HeightMismatch,
    GenesisMismatch,
    PrevHashMismatch,
    BlockHashMismatch,
    TxCountMismatch,
    EmptyBlock,
    TxIdMismatch,
    MalformedRecord,
    MerkleRootMismatch,
    ContentMissing,
    ContentHashMismatch,
    EndorsementInvalid,
    EndorsementPolicyUnmet,
    MissingReplica,
}

impl fmt::Display for DefectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Same spelling as the serialized form.
        let s = serde_json::to_string(self).map_err(|_| fmt::Error)?;
        f.write_str(s.trim_matches('"'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainDefect {
    pub height: u64,
    pub kind: DefectKind,
    pub detail: String,
}

impl fmt::Display for ChainDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "height={} kind={} {}", self.height, self.kind, self.detail)
    }
}

/// Defects ordered by height (lowest first). Empty means the chain is intact.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub defects: Vec<ChainDefect>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.defects.is_empty()
    }

    pub fn earliest_height(&self) -> Option<u64> {
        self.defects.first().map(|d| d.height)
    }

    pub fn push(&mut self, height: u64, kind: DefectKind, detail: impl Into<String>) {
        self.defects.push(ChainDefect { height, kind, detail: detail.into() });
    }

    pub fn merge(&mut self, other: VerifyReport) {
        self.defects.extend(other.defects);
        self.sort();
    }

    pub fn sort(&mut self) {
        self.defects.sort_by_key(|d| d.height);
    }
}

/// Verify every block of a chain; trusts no stored digest.
pub fn verify_chain(blocks: &[Block], store: &dyn BlobStore) -> VerifyReport {
    let slots: Vec<Option<&Block>> = blocks.iter().map(Some).collect();
    verify_slots(&slots, store)
}

/// `None` slots are blocks that could not be decoded; their own defect is
/// reported by the caller and linkage checks around them are skipped.
pub(crate) fn verify_slots(slots: &[Option<&Block>], store: &dyn BlobStore) -> VerifyReport {
    let mut report = VerifyReport::default();
    if slots.is_empty() {
        report.push(0, DefectKind::GenesisMismatch, "chain is empty");
    }
    for (index, slot) in slots.iter().enumerate() {
        let height = index as u64;
        let Some(block) = slot else { continue };
        if block.header.height != height {
            report.push(height, DefectKind::HeightMismatch, format!("record claims height {}", block.header.height));
        }
        if index > 0 {
            if let Some(prev) = slots[index - 1] {
                if prev.recompute_hash() != Some(block.header.prev_hash) {
                    report.push(height, DefectKind::PrevHashMismatch, "does not link to the preceding block");
                }
            }
        }
        for (kind, detail) in block.integrity_defects() {
            report.push(height, kind, detail);
        }
        for (i, tx) in block.transactions.iter().enumerate() {
            let hash = &tx.record.content_hash;
            match store.get(hash) {
                Ok(_) => {}
                Err(StoreError::Integrity { .. }) => {
                    report.push(height, DefectKind::ContentHashMismatch, format!("transaction {i} blob {hash}"))
                }
                Err(e) => report.push(height, DefectKind::ContentMissing, format!("transaction {i}: {e}")),
            }
        }
    }
    report.sort();
    report
}
