use super::config::ByzantineBehavior;
use crate::consensus::{MessageBody, PbftMessage, Proposal};
use crate::ledger::build_block;
use crate::pipeline::NetMessage;
use crate::{NodeId, Tick};

/// One message on one link, before the network decides its fate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub dst: NodeId,
    pub msg: NetMessage,
    pub extra_delay: Tick,
}

/// The block a PrePrepare carries, re-stamped one tick later so its hash differs.
pub fn conflicting_variant(msg: &PbftMessage) -> Option<PbftMessage> {
    let MessageBody::PrePrepare(p) = &msg.body else { return None };
    let h = &p.block.header;
    let block = build_block(h.height, h.prev_hash, p.block.transactions.clone(), &h.proposer_id, h.view, h.tick + 1).ok()?;
    let digest = block.block_hash;
    Some(PbftMessage {
        digest,
        body: MessageBody::PrePrepare(Proposal { block, payloads: p.payloads.clone() }),
        ..msg.clone()
    })
}

/// Fan a broadcast from `src` out to every other node, as `behavior` dictates.
pub fn apply_behavior(behavior: Option<ByzantineBehavior>, src: NodeId, n: usize, msg: &NetMessage, now: Tick) -> Vec<Outbound> {
    let receivers: Vec<NodeId> = (0..n).map(NodeId::from).filter(|&d| d != src).collect();
    let plain = |extra_delay| {
        receivers.iter().map(|&dst| Outbound { dst, msg: msg.clone(), extra_delay }).collect::<Vec<_>>()
    };
    match behavior {
        None => plain(0),
        Some(ByzantineBehavior::Crash { at }) if now >= at => Vec::new(),
        Some(ByzantineBehavior::Crash { .. }) => plain(0),
        Some(ByzantineBehavior::Silent) => Vec::new(),
        Some(ByzantineBehavior::DelayAll { extra }) => plain(extra),
        Some(ByzantineBehavior::EquivocatePrePrepare) => {
            let NetMessage::Consensus(m) = msg else { return plain(0) };
            let Some(other) = conflicting_variant(m) else { return plain(0) };
            let half = receivers.len() / 2;
            receivers
                .iter()
                .enumerate()
                .map(|(i, &dst)| {
                    let msg = if i < half { msg.clone() } else { NetMessage::Consensus(other.clone()) };
                    Outbound { dst, msg, extra_delay: 0 }
                })
                .collect()
        }
        Some(ByzantineBehavior::CorruptDigest) => {
            let NetMessage::Consensus(m) = msg else { return plain(0) };
            let mut bad = m.clone();
            bad.digest.0[0] ^= 0xff;
            let bad = NetMessage::Consensus(bad);
            receivers.iter().map(|&dst| Outbound { dst, msg: bad.clone(), extra_delay: 0 }).collect()
        }
    }
}
