//! One node: endorse on submit, order through the replica, validate on commit.
//!
//! A node that receives a client submission stores the payload, builds a
//! transaction against its committed heads, endorses it and gossips it
//! (with the payload) to every peer. Whoever is primary batches pending
//! transactions in arrival order. Payload bytes travel inside proposals and
//! are written to each node's store when the block commits; blocks only
//! carry hashes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::consensus::{NodeConfig, PbftMessage, ProposalCheck, Proposal, Replica, StructuralCheck};
use crate::content_store::{AuditDefect, BlobStore, ContentHash, Payload, StoreError};
use crate::ledger::chain_file::{verify_chain_file, ChainFileError};
use crate::ledger::{build_block, verify_chain, Block, Chain, DefectKind, VerifyReport};
use crate::revision::{
    check_endorsement_policy, endorse, history, propose_revision, verify_endorsement, EndorsementPolicy,
    HeadState, HistoryEntry, KeyRing, Replay, RevisionError, Transaction, ValidityFlag, WorkId,
};
use crate::{NodeId, Tick, TxId};

#[derive(Debug, Clone)]
pub struct NodeParams {
    pub config: NodeConfig,
    pub max_batch: usize,
    pub policy: EndorsementPolicy,
    pub keys: Arc<KeyRing>,
}

impl NodeParams {
    /// Policy: `endorsements` distinct valid tokens from any node.
    pub fn new(config: NodeConfig, max_batch: usize, endorsements: usize, network_seed: u64) -> NodeParams {
        NodeParams {
            config,
            max_batch: max_batch.max(1),
            policy: EndorsementPolicy::any_of(config.n, endorsements),
            keys: Arc::new(KeyRing::derive(network_seed, config.n)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReceiptStatus {
    Pending,
    CommittedValid,
    CommittedInvalid(ValidityFlag),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientReceipt {
    pub tx_id: TxId,
    pub work_id: WorkId,
    pub revision_number: u64,
    pub status: ReceiptStatus,
    pub submit_tick: Tick,
    pub commit_tick: Option<Tick>,
    pub block_height: Option<u64>,
}

impl ClientReceipt {
    pub fn is_committed(&self) -> bool {
        self.status != ReceiptStatus::Pending
    }

    pub fn latency(&self) -> Option<Tick> {
        self.commit_tick.map(|c| c - self.submit_tick)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Revision(#[from] RevisionError),
    #[error("endorsement policy needs {required} endorsers, network has {available}")]
    Policy { required: usize, available: usize },
}

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("no valid revision {revision} of {work}")]
    NotFound { work: String, revision: u64 },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// What nodes send each other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetMessage {
    Consensus(PbftMessage),
    Tx { tx: Transaction, payload: Payload },
}

struct NodeCheck {
    policy: EndorsementPolicy,
    keys: Arc<KeyRing>,
}

fn endorsements_ok(tx: &Transaction, policy: &EndorsementPolicy, keys: &KeyRing) -> bool {
    tx.endorsements.iter().all(|e| verify_endorsement(&tx.tx_id, e, keys)) && check_endorsement_policy(tx, policy, keys)
}

impl ProposalCheck for NodeCheck {
    fn accept(&self, proposal: &Proposal) -> bool {
        if !StructuralCheck.accept(proposal) {
            return false;
        }
        let txs = &proposal.block.transactions;
        if !txs.iter().all(|tx| endorsements_ok(tx, &self.policy, &self.keys)) {
            return false;
        }
        let referenced: BTreeSet<ContentHash> = txs.iter().map(|tx| tx.record.content_hash).collect();
        proposal.payloads.iter().all(|p| referenced.contains(&p.hash()))
    }
}

/// Chain, heads and validity bitmaps of one node plus its replica.
pub struct NodeRuntime {
    params: NodeParams,
    replica: Replica,
    chain: Chain,
    replay: Replay,
    store: Arc<dyn BlobStore>,
    mempool: BTreeMap<(Tick, TxId), Transaction>,
    arrivals: BTreeMap<TxId, Tick>,
    staged: BTreeMap<ContentHash, Payload>,
    receipts: BTreeMap<TxId, ClientReceipt>,
    committed_txs: BTreeSet<TxId>,
}

impl std::fmt::Debug for NodeRuntime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NodeRuntime")
            .field("node", &self.id())
            .field("height", &self.chain.height())
            .field("mempool", &self.mempool.len())
            .finish()
    }
}

impl NodeRuntime {
    pub fn new(params: NodeParams, store: Arc<dyn BlobStore>) -> NodeRuntime {
        NodeRuntime::resume(params, store, Chain::new())
    }

    /// Continue from a chain already on disk. The view resumes from the tip's header.
    pub fn resume(params: NodeParams, store: Arc<dyn BlobStore>, chain: Chain) -> NodeRuntime {
        let check = Arc::new(NodeCheck { policy: params.policy.clone(), keys: params.keys.clone() });
        let committed = chain.blocks()[1..].iter().map(|b| b.block_hash).collect();
        let replica = Replica::restore(params.config, check, committed, chain.tip().header.view);
        let replay = Replay::of_chain(chain.blocks(), store.as_ref());
        NodeRuntime {
            params,
            replica,
            chain,
            replay,
            store,
            mempool: BTreeMap::new(),
            arrivals: BTreeMap::new(),
            staged: BTreeMap::new(),
            receipts: BTreeMap::new(),
            committed_txs: BTreeSet::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.params.config.node_id
    }

    pub fn params(&self) -> &NodeParams {
        &self.params
    }

    pub fn replica(&self) -> &Replica {
        &self.replica
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn heads(&self) -> &HeadState {
        &self.replay.heads
    }

    pub fn bitmaps(&self) -> &[Vec<ValidityFlag>] {
        &self.replay.bitmaps
    }

    pub fn store(&self) -> &Arc<dyn BlobStore> {
        &self.store
    }

    pub fn receipts(&self) -> impl Iterator<Item = &ClientReceipt> {
        self.receipts.values()
    }

    pub fn receipt(&self, tx_id: &TxId) -> Option<&ClientReceipt> {
        self.receipts.get(tx_id)
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    /// Transactions waiting to be ordered.
    pub fn has_pending_work(&self) -> bool {
        !self.mempool.is_empty()
    }

    /// Store the payload, build and endorse the next revision against the
    /// committed heads, queue it locally and gossip it.
    pub fn submit(
        &mut self,
        work_id: &str,
        author_id: &str,
        payload: Payload,
        now: Tick,
    ) -> Result<(ClientReceipt, Vec<NetMessage>), SubmitError> {
        let n = self.params.config.n;
        let required = self.params.policy.required;
        if required > n {
            return Err(SubmitError::Policy { required, available: n });
        }
        let mut tx = propose_revision(work_id, author_id, &payload, &self.replay.heads, self.store.as_ref(), now)?;
        let me = self.id().index();
        for k in 0..required.max(1) {
            let node = NodeId::from((me + k) % n);
            let secret = self.params.keys.secret(node).expect("key ring covers every node");
            endorse(&mut tx, node, secret);
        }
        let receipt = ClientReceipt {
            tx_id: tx.tx_id,
            work_id: tx.record.work_id.clone(),
            revision_number: tx.record.revision_number,
            status: ReceiptStatus::Pending,
            submit_tick: now,
            commit_tick: None,
            block_height: None,
        };
        self.receipts.insert(tx.tx_id, receipt.clone());
        self.enqueue(tx.clone(), payload.clone(), now);
        Ok((receipt, vec![NetMessage::Tx { tx, payload }]))
    }

    fn enqueue(&mut self, tx: Transaction, payload: Payload, now: Tick) -> bool {
        if self.committed_txs.contains(&tx.tx_id) || self.arrivals.contains_key(&tx.tx_id) {
            return false;
        }
        if payload.hash() != tx.record.content_hash || !endorsements_ok(&tx, &self.params.policy, &self.params.keys) {
            return false;
        }
        self.staged.insert(payload.hash(), payload);
        self.arrivals.insert(tx.tx_id, now);
        self.mempool.insert((now, tx.tx_id), tx);
        true
    }

    /// Handle one message from a peer; returns what to broadcast.
    pub fn receive(&mut self, msg: NetMessage, now: Tick) -> Vec<NetMessage> {
        match msg {
            NetMessage::Tx { tx, payload } => {
                self.enqueue(tx, payload, now);
                Vec::new()
            }
            NetMessage::Consensus(m) => self.drive(vec![m], now, false),
        }
    }

    /// Feed messages to the local replica, delivering our own broadcasts to
    /// ourselves immediately. Returns the broadcasts for the peers.
    fn drive(&mut self, initial: Vec<PbftMessage>, now: Tick, own: bool) -> Vec<NetMessage> {
        let mut out = Vec::new();
        let mut queue: std::collections::VecDeque<(PbftMessage, bool)> = initial.into_iter().map(|m| (m, own)).collect();
        while let Some((msg, mine)) = queue.pop_front() {
            if mine {
                out.push(NetMessage::Consensus(msg.clone()));
            }
            let step = self.replica.handle_message(msg, now);
            queue.extend(step.outbound.into_iter().map(|m| (m, true)));
            for proposal in step.committed {
                self.on_commit(proposal, now);
            }
        }
        out
    }

    /// Up to `max_batch` pending transactions, oldest first, as the next
    /// block. None unless this node may propose now.
    pub fn form_batch(&self, now: Tick) -> Option<Proposal> {
        if !self.replica.ready_to_propose() || self.mempool.is_empty() {
            return None;
        }
        let txs: Vec<Transaction> = self.mempool.values().take(self.params.max_batch).cloned().collect();
        let mut payloads: BTreeMap<ContentHash, Payload> = BTreeMap::new();
        for tx in &txs {
            let hash = tx.record.content_hash;
            if let Some(p) = self.staged.get(&hash) {
                payloads.insert(hash, p.clone());
            }
        }
        let tip = self.chain.tip();
        let block = build_block(
            tip.header.height + 1,
            tip.block_hash,
            txs,
            &self.id().0.to_string(),
            self.replica.view(),
            now,
        )
        .ok()?;
        Some(Proposal { block, payloads: payloads.into_values().collect() })
    }

    /// Timers, then batching if this node is the primary.
    pub fn tick(&mut self, now: Tick) -> Vec<NetMessage> {
        let mut out = Vec::new();
        let view_change = self.replica.on_timeout(now);
        if !view_change.is_empty() {
            out.extend(self.drive(view_change, now, true));
        }
        self.replica.set_pending(self.has_pending_work(), now);
        if let Some(proposal) = self.form_batch(now) {
            if let Ok(msgs) = self.replica.propose(proposal) {
                out.extend(self.drive(msgs, now, true));
            }
        }
        out
    }

    /// Validate and append a committed block. Panics unless the block is the
    /// next height: consensus never releases out of order.
    pub fn on_commit(&mut self, proposal: Proposal, now: Tick) -> Vec<ClientReceipt> {
        let Proposal { block, payloads } = proposal;
        let expected = self.chain.height() + 1;
        assert_eq!(block.header.height, expected, "{}: commit out of order", self.id());
        let referenced: BTreeSet<ContentHash> = block.transactions.iter().map(|tx| tx.record.content_hash).collect();
        for payload in &payloads {
            if referenced.contains(&payload.hash()) && !self.store.contains(&payload.hash()) {
                // A failed write shows up as missing content in validation.
                let _ = self.store.put(payload);
            }
        }
        let height = block.header.height;
        self.chain.append(block).expect("consensus only commits blocks that extend the tip");
        let block = self.chain.tip();
        let flags = self.replay.push(block, self.store.as_ref()).to_vec();
        let mut updates = Vec::new();
        for (tx, flag) in block.transactions.iter().zip(flags) {
            self.committed_txs.insert(tx.tx_id);
            if let Some(arrival) = self.arrivals.remove(&tx.tx_id) {
                self.mempool.remove(&(arrival, tx.tx_id));
            }
            if let Some(receipt) = self.receipts.get_mut(&tx.tx_id) {
                if receipt.is_committed() {
                    continue;
                }
                receipt.status = match flag {
                    ValidityFlag::Valid => ReceiptStatus::CommittedValid,
                    other => ReceiptStatus::CommittedInvalid(other),
                };
                receipt.commit_tick = Some(now);
                receipt.block_height = Some(height);
                updates.push(receipt.clone());
            }
        }
        let still_needed: BTreeSet<ContentHash> = self.mempool.values().map(|tx| tx.record.content_hash).collect();
        self.staged.retain(|h, _| still_needed.contains(h));
        updates
    }

    pub fn history(&self, work_id: &str) -> Vec<HistoryEntry> {
        match WorkId::new(work_id) {
            Ok(work) => history(self.chain.blocks(), &self.replay.bitmaps, &work),
            Err(_) => Vec::new(),
        }
    }

    /// Payload of a valid revision, rehashed on the way out.
    pub fn show(&self, work_id: &str, revision: u64) -> Result<Payload, QueryError> {
        show(self.chain.blocks(), &self.replay.bitmaps, self.store.as_ref(), work_id, revision)
    }

    pub fn verify(&self) -> NodeVerify {
        let mut report = verify_chain(self.chain.blocks(), self.store.as_ref());
        let slots: Vec<Option<Block>> = self.chain.blocks().iter().cloned().map(Some).collect();
        report.merge(endorsement_defects(&slots, &self.params.policy, &self.params.keys));
        NodeVerify { report, audit: self.store.audit() }
    }
}

pub fn show(
    blocks: &[Block],
    bitmaps: &[Vec<ValidityFlag>],
    store: &dyn BlobStore,
    work_id: &str,
    revision: u64,
) -> Result<Payload, QueryError> {
    let not_found = || QueryError::NotFound { work: work_id.to_string(), revision };
    let work = WorkId::new(work_id).map_err(|_| not_found())?;
    let entry = history(blocks, bitmaps, &work)
        .into_iter()
        .find(|e| e.revision_number == revision)
        .ok_or_else(not_found)?;
    Ok(store.get(&entry.content_hash)?)
}

/// Chain defects plus store audit for one node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeVerify {
    pub report: VerifyReport,
    pub audit: Vec<AuditDefect>,
}

impl NodeVerify {
    pub fn is_ok(&self) -> bool {
        self.report.is_ok() && self.audit.is_empty()
    }
}

/// Endorsements are outside the block hash, so they are checked on their own.
pub fn endorsement_defects(blocks: &[Option<Block>], policy: &EndorsementPolicy, keys: &KeyRing) -> VerifyReport {
    let mut report = VerifyReport::default();
    for (height, block) in blocks.iter().enumerate().skip(1) {
        let Some(block) = block else { continue };
        for (i, tx) in block.transactions.iter().enumerate() {
            if !tx.endorsements.iter().all(|e| verify_endorsement(&tx.tx_id, e, keys)) {
                report.push(height as u64, DefectKind::EndorsementInvalid, format!("transaction {i}"));
            } else if !check_endorsement_policy(tx, policy, keys) {
                report.push(height as u64, DefectKind::EndorsementPolicyUnmet, format!("transaction {i}"));
            }
        }
    }
    report
}

/// Verify a node's persisted chain file against its store.
pub fn verify_stored(
    chain_path: &Path,
    store: &dyn BlobStore,
    policy: &EndorsementPolicy,
    keys: &KeyRing,
) -> Result<NodeVerify, ChainFileError> {
    let (mut report, blocks) = verify_chain_file(chain_path, store)?;
    report.merge(endorsement_defects(&blocks, policy, keys));
    Ok(NodeVerify { report, audit: store.audit() })
}
