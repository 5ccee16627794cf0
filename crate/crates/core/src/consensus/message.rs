use serde::{Deserialize, Serialize};

use super::Proposal;
use crate::digest::Digest;
use crate::ledger::encoding::Encoder;
use crate::{BlockHash, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    PrePrepare,
    Prepare,
    Commit,
    ViewChange,
    NewView,
}

impl MessageKind {
    pub fn tag(self) -> u8 {
        match self {
            MessageKind::PrePrepare => 0x20,
            MessageKind::Prepare => 0x21,
            MessageKind::Commit => 0x22,
            MessageKind::ViewChange => 0x23,
            MessageKind::NewView => 0x24,
        }
    }
}

/// Claim that `digest` was prepared at `seq` in `view`, with the block
/// itself so a new primary can re-propose it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedCert {
    pub seq: u64,
    pub digest: BlockHash,
    pub view: u64,
    pub proposal: Proposal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageBody {
    PrePrepare(Proposal),
    Prepare,
    Commit,
    /// `view` is the view being moved to, `seq` the sender's last committed height.
    ViewChange { prepared: Vec<PreparedCert> },
    NewView { view_changes: Vec<PbftMessage>, reproposals: Vec<Proposal> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PbftMessage {
    pub view: u64,
    pub seq: u64,
    pub digest: BlockHash,
    pub sender: NodeId,
    pub body: MessageBody,
}

impl PbftMessage {
    pub fn kind(&self) -> MessageKind {
        match self.body {
            MessageBody::PrePrepare(_) => MessageKind::PrePrepare,
            MessageBody::Prepare => MessageKind::Prepare,
            MessageBody::Commit => MessageKind::Commit,
            MessageBody::ViewChange { .. } => MessageKind::ViewChange,
            MessageBody::NewView { .. } => MessageKind::NewView,
        }
    }

    pub fn vote(kind: MessageKind, view: u64, seq: u64, digest: BlockHash, sender: NodeId) -> PbftMessage {
        let body = match kind {
            MessageKind::Prepare => MessageBody::Prepare,
            MessageKind::Commit => MessageBody::Commit,
            other => panic!("{other:?} is not a vote"),
        };
        PbftMessage { view, seq, digest, sender, body }
    }

    /// Wire form used for digesting and logging: kind tag, view, seq, digest,
    /// sender, then kind-specific fields. Blocks are referenced by digest.
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new(self.kind().tag());
        enc.u64(self.view).u64(self.seq).digest(&self.digest).u64(self.sender.0);
        match &self.body {
            MessageBody::PrePrepare(_) | MessageBody::Prepare | MessageBody::Commit => {}
            MessageBody::ViewChange { prepared } => {
                enc.count(prepared.len());
                for cert in prepared {
                    enc.u64(cert.seq).digest(&cert.digest).u64(cert.view);
                }
            }
            MessageBody::NewView { view_changes, reproposals } => {
                enc.count(view_changes.len());
                for vc in view_changes {
                    let bytes = vc.encode();
                    enc.count(bytes.len()).nested(&bytes);
                }
                enc.count(reproposals.len());
                for p in reproposals {
                    enc.digest(&p.digest());
                }
            }
        }
        enc.finish()
    }

    pub fn wire_digest(&self) -> Digest {
        Digest::of(&self.encode())
    }
}
