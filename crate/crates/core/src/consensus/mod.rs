//! PBFT replication of blocks.
//!
//! One block per consensus instance; the sequence number is the block
//! height. Normal case: the primary of the view broadcasts a PrePrepare,
//! every replica (the primary included) answers with a Prepare, and
//! 2f+1 matching Prepares make the block prepared; 2f+1 matching Commits
//! then commit it. Commits are released strictly in height order.
//!
//! A replica whose timer expires broadcasts a ViewChange for the next view
//! carrying its prepared-but-uncommitted certificates. The primary of the
//! new view collects 2f+1 of them and broadcasts a NewView that
//! re-proposes, per height, the certificate with the highest view.
//!
//! There are no signatures: the transport envelope names the sender.
//! Checkpoints and log truncation are not implemented; logs live for the
//! whole run.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::content_store::Payload;
use crate::ledger::Block;
use crate::{BlockHash, NodeId, Tick};

mod message;
mod replica;

pub use message::{MessageBody, MessageKind, PbftMessage, PreparedCert};
pub use replica::{Evidence, NewViewPlan, ProposeError, Replica, Step};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("n = {n} is too small for f = {f}: PBFT needs n >= 3f+1 = {}", 3 * f + 1)]
    TooFewNodes { n: usize, f: usize },
    #[error("node {node} is outside 0..{n}")]
    NodeOutOfRange { node: NodeId, n: usize },
    #[error("timeout must be at least one tick")]
    ZeroTimeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: NodeId,
    pub n: usize,
    pub f: usize,
    pub timeout_ticks: Tick,
}

impl NodeConfig {
    pub fn new(node_id: NodeId, n: usize, f: usize, timeout_ticks: Tick) -> Result<NodeConfig, ConfigError> {
        quorum_size(n, f)?;
        if node_id.index() >= n {
            return Err(ConfigError::NodeOutOfRange { node: node_id, n });
        }
        if timeout_ticks == 0 {
            return Err(ConfigError::ZeroTimeout);
        }
        Ok(NodeConfig { node_id, n, f, timeout_ticks })
    }

    pub fn quorum(&self) -> usize {
        2 * self.f + 1
    }
}

/// Matching messages needed to prepare or commit: 2f+1.
pub fn quorum_size(n: usize, f: usize) -> Result<usize, ConfigError> {
    if n == 0 || n < 3 * f + 1 {
        return Err(ConfigError::TooFewNodes { n, f });
    }
    Ok(2 * f + 1)
}

pub fn primary_of(view: u64, n: usize) -> NodeId {
    NodeId(view % n as u64)
}

/// A block in transit together with the payload bytes its transactions
/// reference, so every replica can keep its own copy of the content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub block: Block,
    pub payloads: Vec<Payload>,
}

impl Proposal {
    pub fn digest(&self) -> BlockHash {
        self.block.block_hash
    }

    pub fn height(&self) -> u64 {
        self.block.header.height
    }
}

/// Application-level acceptance test applied to every proposal before a
/// replica prepares it.
pub trait ProposalCheck: Send + Sync {
    fn accept(&self, proposal: &Proposal) -> bool;
}

/// Accepts any proposal whose block is internally consistent.
#[derive(Debug, Clone, Copy, Default)]
pub struct StructuralCheck;

impl ProposalCheck for StructuralCheck {
    fn accept(&self, proposal: &Proposal) -> bool {
        proposal.block.header.height > 0 && proposal.block.is_intact()
    }
}

pub type SharedCheck = Arc<dyn ProposalCheck>;
