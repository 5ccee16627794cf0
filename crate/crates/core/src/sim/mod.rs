//! Deterministic discrete-event host for N nodes.
//!
//! Time is integer ticks. Each tick first delivers every event due at that
//! tick in insertion order, then lets each live node run its timers and
//! batching in id order. Every random draw comes from one [`SimRng`]
//! seeded with the config seed; each (source, destination, message) hop
//! draws drop then delay, always both, in that order.

use std::sync::Arc;

use crate::content_store::MemStore;
use crate::consensus::NodeConfig;
use crate::pipeline::{NetMessage, NodeParams, NodeRuntime};
use crate::{NodeId, Tick, TxId};

mod behavior;
mod config;
mod queue;
mod report;
mod rng;

pub use behavior::{apply_behavior, conflicting_variant, Outbound};
pub use config::{
    ByzantineBehavior, ByzantineNode, ConfigError, Partition, PayloadSpec, Scenario, SimConfig, Submission, Workload,
};
pub use queue::{EventQueue, PastEvent};
pub use report::{
    metrics, percentile, prefix_consistent, MetricsSummary, NodeReport, PhaseBound, ReceiptReport, Rejected, SimReport,
    Throughput,
};
pub use rng::SimRng;

#[derive(Debug, Clone)]
enum Event {
    Submit(usize),
    Deliver { dst: NodeId, msg: Box<NetMessage> },
}

pub struct Simulation {
    config: SimConfig,
    nodes: Vec<NodeRuntime>,
    queue: EventQueue<Event>,
    rng: SimRng,
    start: Tick,
}

impl Simulation {
    /// Fresh in-memory nodes at genesis.
    pub fn new(config: SimConfig) -> Result<Simulation, ConfigError> {
        config.validate()?;
        let nodes = (0..config.n)
            .map(|i| {
                let node = NodeConfig::new(NodeId::from(i), config.n, config.f, config.timeout_ticks)?;
                let params = NodeParams::new(node, config.max_batch, config.endorsements, config.seed);
                Ok(NodeRuntime::new(params, Arc::new(MemStore::new())))
            })
            .collect::<Result<Vec<_>, crate::consensus::ConfigError>>()?;
        Simulation::with_nodes(config, nodes, 0)
    }

    /// Host existing nodes, starting the clock at `start`.
    pub fn with_nodes(config: SimConfig, nodes: Vec<NodeRuntime>, start: Tick) -> Result<Simulation, ConfigError> {
        config.validate()?;
        if nodes.len() != config.n || nodes.iter().enumerate().any(|(i, n)| n.id().index() != i) {
            return Err(ConfigError::Invalid(format!("expected nodes 0..{} in order", config.n)));
        }
        let rng = SimRng::new(config.seed);
        Ok(Simulation { config, nodes, queue: EventQueue::new(start), rng, start })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[NodeRuntime] {
        &self.nodes
    }

    pub fn into_nodes(self) -> Vec<NodeRuntime> {
        self.nodes
    }

    fn is_down(&self, node: NodeId, now: Tick) -> bool {
        matches!(self.config.behavior(node), Some(ByzantineBehavior::Crash { at }) if now >= at)
    }

    fn send(&mut self, src: NodeId, msgs: Vec<NetMessage>, now: Tick) {
        let behavior = self.config.behavior(src);
        for msg in msgs {
            for out in apply_behavior(behavior, src, self.config.n, &msg, now) {
                let dropped = self.rng.chance(self.config.drop_prob);
                let delay = self.rng.uniform(self.config.delay_min, self.config.delay_max);
                if dropped || self.config.partitions.iter().any(|p| p.separates(src, out.dst, now)) {
                    continue;
                }
                let at = now + delay + out.extra_delay;
                self.queue.schedule(Event::Deliver { dst: out.dst, msg: Box::new(out.msg) }, at).expect("delays are positive");
            }
        }
    }

    fn honest_pending(&self) -> bool {
        self.nodes.iter().any(|n| self.config.is_honest(n.id()) && n.has_pending_work())
    }

    /// Run the workload to quiescence or until `max_ticks` have elapsed.
    pub fn run(&mut self, workload: &Workload) -> Result<SimReport, ConfigError> {
        workload.validate(self.config.n)?;
        let payloads = workload.payloads(self.config.seed);
        for (i, item) in workload.items.iter().enumerate() {
            self.queue
                .schedule(Event::Submit(i), item.tick)
                .map_err(|e| ConfigError::Workload(format!("submission {i}: {e}")))?;
        }
        let mut submitted: Vec<Option<(NodeId, TxId)>> = vec![None; workload.items.len()];
        let mut rejected = Vec::new();
        let end = self.start + self.config.max_ticks;
        let mut now = self.start;
        let mut stalled = true;
        while now < end {
            while let Some((_, event)) = self.queue.pop_until(now) {
                match event {
                    Event::Submit(i) => {
                        let item = &workload.items[i];
                        if self.is_down(item.node, now) {
                            rejected.push(Rejected { index: i, node: item.node, reason: "node is down".into() });
                            continue;
                        }
                        let node = &mut self.nodes[item.node.index()];
                        match node.submit(&item.work_id, &item.author_id, payloads[i].clone(), now) {
                            Ok((receipt, out)) => {
                                submitted[i] = Some((item.node, receipt.tx_id));
                                self.send(item.node, out, now);
                            }
                            Err(e) => rejected.push(Rejected { index: i, node: item.node, reason: e.to_string() }),
                        }
                    }
                    Event::Deliver { dst, msg } => {
                        if self.is_down(dst, now) {
                            continue;
                        }
                        let out = self.nodes[dst.index()].receive(*msg, now);
                        self.send(dst, out, now);
                    }
                }
            }
            for i in 0..self.nodes.len() {
                let id = NodeId::from(i);
                if self.is_down(id, now) {
                    continue;
                }
                let out = self.nodes[i].tick(now);
                self.send(id, out, now);
            }
            now += 1;
            self.queue.advance_to(now);
            if self.queue.is_empty() && !self.honest_pending() {
                stalled = false;
                break;
            }
        }
        Ok(self.report(workload, &submitted, rejected, now - self.start, stalled))
    }

    fn report(
        &self,
        workload: &Workload,
        submitted: &[Option<(NodeId, TxId)>],
        rejected: Vec<Rejected>,
        total_ticks: Tick,
        stalled: bool,
    ) -> SimReport {
        let nodes: Vec<NodeReport> = self
            .nodes
            .iter()
            .map(|n| {
                let verify = n.verify();
                NodeReport {
                    node: n.id(),
                    honest: self.config.is_honest(n.id()),
                    view: n.replica().view(),
                    committed_height: n.chain().height(),
                    digests: n.chain().blocks()[1..].iter().map(|b| b.block_hash).collect(),
                    verify_ok: verify.is_ok(),
                    defects: verify.report.defects,
                    audit: verify.audit,
                }
            })
            .collect();
        let honest: Vec<&[crate::BlockHash]> = nodes.iter().filter(|n| n.honest).map(|n| n.digests.as_slice()).collect();
        let safety_ok = prefix_consistent(&honest);

        let receipts: Vec<ReceiptReport> = submitted
            .iter()
            .enumerate()
            .filter_map(|(index, s)| {
                let (node, tx_id) = (*s)?;
                let r = self.nodes[node.index()].receipt(&tx_id)?;
                Some(ReceiptReport {
                    index,
                    node,
                    tx_id,
                    work_id: r.work_id.clone(),
                    revision_number: r.revision_number,
                    status: r.status,
                    submit_tick: r.submit_tick,
                    commit_tick: r.commit_tick,
                    latency: r.latency(),
                    block_height: r.block_height,
                })
            })
            .collect();
        debug_assert_eq!(receipts.len() + rejected.len(), workload.items.len());

        let reference = self.nodes.iter().find(|n| self.config.is_honest(n.id())).unwrap_or(&self.nodes[0]);
        let mut validity = std::collections::BTreeMap::new();
        for flag in reference.bitmaps().iter().flatten() {
            *validity.entry(*flag).or_insert(0) += 1;
        }
        let valid = receipts.iter().filter(|r| r.status == crate::pipeline::ReceiptStatus::CommittedValid).count();
        let evidence = self
            .nodes
            .iter()
            .filter(|n| self.config.is_honest(n.id()))
            .flat_map(|n| n.replica().evidence().iter().cloned())
            .collect();

        let mut report = SimReport {
            seed: self.config.seed,
            start_tick: self.start,
            total_ticks,
            stalled,
            safety_ok,
            fault_free: self.config.is_fault_free(),
            delay_min: self.config.delay_min,
            nodes,
            receipts,
            rejected,
            validity,
            throughput: Throughput::new(valid as u64, total_ticks),
            evidence,
            metrics: MetricsSummary {
                throughput_per_tick: 0.0,
                latency_count: 0,
                latency_mean: None,
                latency_p50: None,
                latency_p99: None,
                latency_max: None,
                stalled,
                phase_bound: None,
            },
        };
        report.metrics = metrics(&report);
        report
    }
}

/// Run a scenario on fresh in-memory nodes.
pub fn run(config: SimConfig, workload: &Workload) -> Result<SimReport, ConfigError> {
    Simulation::new(config)?.run(workload)
}
