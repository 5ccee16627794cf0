use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::message::{MessageBody, MessageKind, PbftMessage, PreparedCert};
use super::{primary_of, NodeConfig, Proposal, SharedCheck};
use crate::digest::Digest;
use crate::ledger::Block;
use crate::{BlockHash, NodeId, Tick};

/// Two messages from the same sender for the same slot with different
/// digests, or a vote that contradicts the accepted PrePrepare.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Evidence {
    pub observer: NodeId,
    pub view: u64,
    pub seq: u64,
    pub kind: MessageKind,
    pub sender: NodeId,
    pub first: BlockHash,
    pub second: BlockHash,
}

/// Result of feeding a replica one input.
#[derive(Debug, Default)]
pub struct Step {
    /// Messages to broadcast to every replica, the sender included.
    pub outbound: Vec<PbftMessage>,
    /// Blocks committed by this input, in height order.
    pub committed: Vec<Proposal>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProposeError {
    #[error("{node} is not the primary of view {view}")]
    NotPrimary { node: NodeId, view: u64 },
    #[error("view change in progress")]
    ViewChanging,
    #[error("proposal height {got}, next height is {expected}")]
    WrongHeight { expected: u64, got: u64 },
    #[error("proposal does not extend the committed tip")]
    WrongParent,
    #[error("an earlier proposal is still in flight")]
    Busy,
}

/// What a NewView for a given set of ViewChanges must contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewViewPlan {
    /// Highest-view certificate per height, ascending.
    pub reproposals: Vec<Proposal>,
    /// Fresh proposals in the new view must be above this height.
    pub floor: u64,
}

#[derive(Debug, Clone, Copy)]
struct ViewChanging {
    target: u64,
    attempts: u32,
}

#[derive(Debug, Clone)]
struct Deferred {
    msg: PbftMessage,
    /// Re-proposal carried by a validated NewView.
    sanctioned: bool,
}

type LogKey = (u64, u64, MessageKind, NodeId);

/// One replica's PBFT state machine. Single-threaded; all transitions go
/// through [`Replica::handle_message`], [`Replica::on_timeout`] and
/// [`Replica::propose`].
pub struct Replica {
    config: NodeConfig,
    check: SharedCheck,
    view: u64,
    view_change: Option<ViewChanging>,
    committed: Vec<BlockHash>,
    tip: BlockHash,
    log: BTreeMap<LogKey, BlockHash>,
    accepted: BTreeMap<(u64, u64), BlockHash>,
    proposals: BTreeMap<BlockHash, Proposal>,
    prepared: BTreeMap<u64, (u64, BlockHash)>,
    commit_sent: BTreeSet<(u64, u64)>,
    ready: BTreeMap<u64, BlockHash>,
    deferred: Vec<Deferred>,
    view_changes: BTreeMap<u64, BTreeMap<NodeId, PbftMessage>>,
    new_view_sent: BTreeSet<u64>,
    floor: u64,
    timer: Option<Tick>,
    evidence: Vec<Evidence>,
    evidence_seen: BTreeSet<(u64, u64, MessageKind, NodeId)>,
}

impl std::fmt::Debug for Replica {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Replica")
            .field("node", &self.config.node_id)
            .field("view", &self.view)
            .field("last_committed", &self.last_committed())
            .field("view_change", &self.view_change.map(|v| v.target))
            .finish()
    }
}

impl Replica {
    pub fn new(config: NodeConfig, check: SharedCheck) -> Replica {
        Replica::restore(config, check, Vec::new(), 0)
    }

    /// Resume from already committed block hashes (heights 1..).
    pub fn restore(config: NodeConfig, check: SharedCheck, committed: Vec<BlockHash>, view: u64) -> Replica {
        let tip = committed.last().copied().unwrap_or_else(|| Block::genesis().block_hash);
        Replica {
            config,
            check,
            view,
            view_change: None,
            committed,
            tip,
            log: BTreeMap::new(),
            accepted: BTreeMap::new(),
            proposals: BTreeMap::new(),
            prepared: BTreeMap::new(),
            commit_sent: BTreeSet::new(),
            ready: BTreeMap::new(),
            deferred: Vec::new(),
            view_changes: BTreeMap::new(),
            new_view_sent: BTreeSet::new(),
            floor: 0,
            timer: None,
            evidence: Vec::new(),
            evidence_seen: BTreeSet::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.config.node_id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn last_committed(&self) -> u64 {
        self.committed.len() as u64
    }

    pub fn committed_digests(&self) -> &[BlockHash] {
        &self.committed
    }

    pub fn tip(&self) -> BlockHash {
        self.tip
    }

    pub fn is_primary(&self) -> bool {
        primary_of(self.view, self.config.n) == self.config.node_id
    }

    /// Target view while a view change is in progress.
    pub fn view_change_target(&self) -> Option<u64> {
        self.view_change.map(|v| v.target)
    }

    pub fn timer(&self) -> Option<Tick> {
        self.timer
    }

    pub fn evidence(&self) -> &[Evidence] {
        &self.evidence
    }

    pub fn is_prepared(&self, view: u64, seq: u64, digest: &BlockHash) -> bool {
        self.commit_sent.contains(&(view, seq)) && self.accepted.get(&(view, seq)) == Some(digest)
    }

    fn has_outstanding(&self) -> bool {
        let last = self.last_committed();
        self.accepted.range((self.view, last + 1)..(self.view + 1, 0)).next().is_some()
    }

    /// The primary may propose the next block.
    pub fn ready_to_propose(&self) -> bool {
        self.is_primary() && self.view_change.is_none() && self.last_committed() >= self.floor && !self.has_outstanding()
    }

    /// Tell the replica whether the node has work waiting to be ordered.
    /// Arms the progress timer when there is work and disarms it when idle.
    pub fn set_pending(&mut self, pending: bool, now: Tick) {
        if self.view_change.is_some() {
            return;
        }
        if pending || self.has_outstanding() {
            self.timer.get_or_insert(now + self.config.timeout_ticks);
        } else {
            self.timer = None;
        }
    }

    pub fn propose(&mut self, proposal: Proposal) -> Result<Vec<PbftMessage>, ProposeError> {
        if !self.is_primary() {
            return Err(ProposeError::NotPrimary { node: self.config.node_id, view: self.view });
        }
        if self.view_change.is_some() {
            return Err(ProposeError::ViewChanging);
        }
        let expected = self.last_committed() + 1;
        if proposal.height() != expected {
            return Err(ProposeError::WrongHeight { expected, got: proposal.height() });
        }
        if proposal.block.header.prev_hash != self.tip {
            return Err(ProposeError::WrongParent);
        }
        if self.has_outstanding() || self.last_committed() < self.floor {
            return Err(ProposeError::Busy);
        }
        Ok(vec![PbftMessage {
            view: self.view,
            seq: expected,
            digest: proposal.digest(),
            sender: self.config.node_id,
            body: MessageBody::PrePrepare(proposal),
        }])
    }

    pub fn handle_message(&mut self, msg: PbftMessage, now: Tick) -> Step {
        let mut step = Step::default();
        match msg.body {
            MessageBody::PrePrepare(_) => self.on_pre_prepare(msg, false, &mut step),
            MessageBody::Prepare | MessageBody::Commit => self.on_vote(msg, &mut step),
            MessageBody::ViewChange { .. } => self.on_view_change(msg, now, &mut step),
            MessageBody::NewView { .. } => self.on_new_view(msg, &mut step),
        }
        step
    }

    /// Start (or escalate) a view change once the progress timer expires.
    pub fn on_timeout(&mut self, now: Tick) -> Vec<PbftMessage> {
        match self.timer {
            Some(deadline) if now >= deadline => {}
            _ => return Vec::new(),
        }
        let target = match self.view_change {
            Some(vc) => vc.target + 1,
            None => self.view + 1,
        };
        vec![self.start_view_change(target, now)]
    }

    fn start_view_change(&mut self, target: u64, now: Tick) -> PbftMessage {
        let attempts = self.view_change.map(|v| v.attempts + 1).unwrap_or(1);
        self.view_change = Some(ViewChanging { target, attempts });
        self.timer = Some(now + self.config.timeout_ticks * (1 << (attempts - 1).min(3)));
        let prepared = self
            .prepared
            .range(self.last_committed() + 1..)
            .map(|(&seq, &(view, digest))| PreparedCert {
                seq,
                digest,
                view,
                proposal: self.proposals[&digest].clone(),
            })
            .collect();
        PbftMessage {
            view: target,
            seq: self.last_committed(),
            digest: Digest::ZERO,
            sender: self.config.node_id,
            body: MessageBody::ViewChange { prepared },
        }
    }

    fn record_evidence(&mut self, view: u64, seq: u64, kind: MessageKind, sender: NodeId, first: BlockHash, second: BlockHash) {
        if self.evidence_seen.insert((view, seq, kind, sender)) {
            self.evidence.push(Evidence { observer: self.config.node_id, view, seq, kind, sender, first, second });
        }
    }

    fn on_pre_prepare(&mut self, msg: PbftMessage, sanctioned: bool, step: &mut Step) {
        let (v, s, d) = (msg.view, msg.seq, msg.digest);
        if !sanctioned && msg.sender != primary_of(v, self.config.n) {
            return;
        }
        if v < self.view {
            return;
        }
        if v > self.view {
            self.deferred.push(Deferred { msg, sanctioned });
            return;
        }
        if self.view_change.is_some() {
            return;
        }
        let MessageBody::PrePrepare(proposal) = &msg.body else { return };
        if proposal.digest() != d || proposal.height() != s || s == 0 {
            return;
        }
        if !sanctioned && s <= self.floor {
            return;
        }
        if let Some(&existing) = self.accepted.get(&(v, s)) {
            if existing != d {
                self.record_evidence(v, s, MessageKind::PrePrepare, msg.sender, existing, d);
            }
            return;
        }
        let last = self.last_committed();
        if s <= last {
            // Only a re-proposal of what we already committed is acceptable.
            if self.committed[(s - 1) as usize] != d {
                return;
            }
        } else if s == last + 1 {
            if proposal.block.header.prev_hash != self.tip {
                return;
            }
        } else {
            self.deferred.push(Deferred { msg, sanctioned });
            return;
        }
        if !self.check.accept(proposal) {
            return;
        }
        let MessageBody::PrePrepare(proposal) = msg.body else { unreachable!() };
        self.accepted.insert((v, s), d);
        self.proposals.insert(d, proposal);
        self.log.insert((v, s, MessageKind::PrePrepare, msg.sender), d);

        let conflicting: Vec<(MessageKind, NodeId, BlockHash)> = self
            .log
            .range((v, s, MessageKind::Prepare, NodeId(0))..=(v, s, MessageKind::Commit, NodeId(u64::MAX)))
            .filter(|(_, digest)| **digest != d)
            .map(|(key, digest)| (key.2, key.3, *digest))
            .collect();
        for (kind, sender, other) in conflicting {
            self.record_evidence(v, s, kind, sender, d, other);
        }

        step.outbound.push(PbftMessage::vote(MessageKind::Prepare, v, s, d, self.config.node_id));
        self.try_progress(v, s, step);
    }

    fn on_vote(&mut self, msg: PbftMessage, step: &mut Step) {
        let (v, s, d, kind) = (msg.view, msg.seq, msg.digest, msg.kind());
        if v < self.view || (self.view_change.is_some() && v == self.view) {
            return;
        }
        let key = (v, s, kind, msg.sender);
        if let Some(&existing) = self.log.get(&key) {
            if existing != d {
                self.record_evidence(v, s, kind, msg.sender, existing, d);
            }
            return;
        }
        self.log.insert(key, d);
        if let Some(&accepted) = self.accepted.get(&(v, s)) {
            if accepted != d {
                self.record_evidence(v, s, kind, msg.sender, accepted, d);
            }
        }
        if v == self.view && self.view_change.is_none() {
            self.try_progress(v, s, step);
        }
    }

    fn count_votes(&self, v: u64, s: u64, kind: MessageKind, d: &BlockHash) -> usize {
        self.log
            .range((v, s, kind, NodeId(0))..=(v, s, kind, NodeId(u64::MAX)))
            .filter(|(_, digest)| *digest == d)
            .count()
    }

    fn try_progress(&mut self, v: u64, s: u64, step: &mut Step) {
        let Some(&d) = self.accepted.get(&(v, s)) else { return };
        let quorum = self.config.quorum();
        if !self.commit_sent.contains(&(v, s)) {
            if self.count_votes(v, s, MessageKind::Prepare, &d) < quorum {
                return;
            }
            self.commit_sent.insert((v, s));
            let entry = self.prepared.entry(s).or_insert((v, d));
            if entry.0 <= v {
                *entry = (v, d);
            }
            step.outbound.push(PbftMessage::vote(MessageKind::Commit, v, s, d, self.config.node_id));
        }
        if s > self.last_committed() && self.count_votes(v, s, MessageKind::Commit, &d) >= quorum {
            self.ready.insert(s, d);
            self.release(step);
        }
    }

    fn release(&mut self, step: &mut Step) {
        let mut progressed = false;
        while let Some(d) = self.ready.remove(&(self.last_committed() + 1)) {
            self.committed.push(d);
            self.tip = d;
            step.committed.push(self.proposals[&d].clone());
            progressed = true;
        }
        let last = self.last_committed();
        self.ready.retain(|&s, _| s > last);
        if progressed {
            self.timer = None;
            self.replay_deferred(step);
        }
    }

    fn replay_deferred(&mut self, step: &mut Step) {
        let pending = std::mem::take(&mut self.deferred);
        let view = self.view;
        for item in pending {
            if item.msg.view < view {
                continue;
            }
            self.on_pre_prepare(item.msg, item.sanctioned, step);
        }
    }

    fn cert_is_valid(&self, cert: &PreparedCert, new_view: u64) -> bool {
        cert.seq >= 1
            && cert.view < new_view
            && cert.proposal.digest() == cert.digest
            && cert.proposal.height() == cert.seq
            && self.check.accept(&cert.proposal)
    }

    fn view_change_is_valid(&self, msg: &PbftMessage, new_view: u64) -> bool {
        match &msg.body {
            MessageBody::ViewChange { prepared } => {
                msg.view == new_view
                    && msg.sender.index() < self.config.n
                    && prepared.iter().all(|c| self.cert_is_valid(c, new_view))
            }
            _ => false,
        }
    }

    /// Re-proposals and floor implied by a set of ViewChanges. Two
    /// certificates for one height with the same view but different digests
    /// cannot both be honest; the set is rejected.
    pub fn new_view_plan(view_changes: &[PbftMessage]) -> Option<NewViewPlan> {
        let mut best: BTreeMap<u64, (u64, &Proposal)> = BTreeMap::new();
        let mut max_committed = 0;
        for vc in view_changes {
            let MessageBody::ViewChange { prepared } = &vc.body else { return None };
            max_committed = max_committed.max(vc.seq);
            for cert in prepared {
                match best.get(&cert.seq) {
                    Some((view, p)) if *view == cert.view && p.digest() != cert.digest => return None,
                    Some((view, _)) if *view >= cert.view => {}
                    _ => {
                        best.insert(cert.seq, (cert.view, &cert.proposal));
                    }
                }
            }
        }
        let floor = best.keys().next_back().copied().unwrap_or(0).max(max_committed);
        Some(NewViewPlan { reproposals: best.into_values().map(|(_, p)| p.clone()).collect(), floor })
    }

    fn on_view_change(&mut self, msg: PbftMessage, now: Tick, step: &mut Step) {
        let target = msg.view;
        if target <= self.view || !self.view_change_is_valid(&msg, target) {
            return;
        }
        let sender = msg.sender;
        self.view_changes.entry(target).or_default().entry(sender).or_insert(msg);

        // Join a view change that f+1 other replicas already asked for.
        let level = self.view_change.map(|v| v.target).unwrap_or(self.view);
        let mut lowest_by_sender: BTreeMap<NodeId, u64> = BTreeMap::new();
        for (&w, senders) in self.view_changes.range(level + 1..) {
            for &s in senders.keys().filter(|&&s| s != self.config.node_id) {
                lowest_by_sender.entry(s).or_insert(w);
            }
        }
        if lowest_by_sender.len() > self.config.f {
            let join = *lowest_by_sender.values().min().expect("non-empty");
            step.outbound.push(self.start_view_change(join, now));
        }

        if primary_of(target, self.config.n) != self.config.node_id || self.new_view_sent.contains(&target) {
            return;
        }
        let collected = &self.view_changes[&target];
        if collected.len() < self.config.quorum() {
            return;
        }
        let view_changes: Vec<PbftMessage> = collected.values().take(self.config.quorum()).cloned().collect();
        let Some(plan) = Replica::new_view_plan(&view_changes) else { return };
        self.new_view_sent.insert(target);
        step.outbound.push(PbftMessage {
            view: target,
            seq: 0,
            digest: Digest::ZERO,
            sender: self.config.node_id,
            body: MessageBody::NewView { view_changes, reproposals: plan.reproposals },
        });
    }

    fn on_new_view(&mut self, msg: PbftMessage, step: &mut Step) {
        let w = msg.view;
        if w <= self.view || msg.sender != primary_of(w, self.config.n) {
            return;
        }
        let MessageBody::NewView { view_changes, reproposals } = msg.body else { return };
        let senders: BTreeSet<NodeId> = view_changes.iter().map(|vc| vc.sender).collect();
        if senders.len() != view_changes.len()
            || senders.len() < self.config.quorum()
            || !view_changes.iter().all(|vc| self.view_change_is_valid(vc, w))
        {
            return;
        }
        let Some(plan) = Replica::new_view_plan(&view_changes) else { return };
        if plan.reproposals != reproposals {
            return;
        }

        self.view = w;
        self.view_change = None;
        self.timer = None;
        self.floor = plan.floor;
        let primary = msg.sender;
        for proposal in plan.reproposals {
            let pre_prepare = PbftMessage {
                view: w,
                seq: proposal.height(),
                digest: proposal.digest(),
                sender: primary,
                body: MessageBody::PrePrepare(proposal),
            };
            self.on_pre_prepare(pre_prepare, true, step);
        }
        // Votes for the new view may have arrived before the NewView did.
        let slots: Vec<u64> = self.accepted.range((w, 0)..(w + 1, 0)).map(|(&(_, s), _)| s).collect();
        for s in slots {
            self.try_progress(w, s, step);
        }
        self.replay_deferred(step);
    }
}
