//! A replicated, tamper-evident revision ledger for creative works.
//!
//! Authors commit revisions of a work (a novel chapter, a cartoon page).
//! Each revision's bytes go into a content-addressed [`content_store`]; a
//! small [`revision::RevisionRecord`] naming the work, revision number and
//! content hash is wrapped in a [`revision::Transaction`], endorsed, ordered
//! by PBFT replicas ([`consensus`]), and appended to a hash-chained,
//! Merkle-committed [`ledger`]. After ordering, every node validates the
//! block against its head state (multi-version concurrency control), so
//! concurrent edits of the same work resolve identically everywhere.
//!
//! [`pipeline`] wires one node together; [`sim`] hosts N nodes on a
//! deterministic simulated network with fault injection and reports
//! throughput and latency.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod consensus;
pub mod content_store;
pub mod digest;
pub mod ledger;
pub mod pipeline;
pub mod revision;
pub mod sim;

pub use content_store::{BlobStore, ContentHash, FsStore, MediaKind, MemStore, Payload};
pub use digest::Digest;
pub use ledger::{Block, BlockHeader, Chain};
pub use revision::{RevisionRecord, Transaction, ValidityFlag, WorkId};

/// Simulated time. All delays, timeouts and latencies are in ticks.
pub type Tick = u64;

/// Transaction id: SHA-256 of the transaction's canonical encoding.
pub type TxId = Digest;

/// Block hash: SHA-256 of the canonical block header.
pub type BlockHash = Digest;

/// Replica index in `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node-{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> NodeId {
        NodeId(i as u64)
    }
}
