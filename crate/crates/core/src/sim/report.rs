use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::consensus::Evidence;
use crate::content_store::AuditDefect;
use crate::ledger::ChainDefect;
use crate::pipeline::ReceiptStatus;
use crate::revision::{ValidityFlag, WorkId};
use crate::{BlockHash, NodeId, Tick, TxId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: NodeId,
    pub honest: bool,
    pub view: u64,
    pub committed_height: u64,
    /// Block hashes at heights 1..=committed_height.
    pub digests: Vec<BlockHash>,
    pub verify_ok: bool,
    pub defects: Vec<ChainDefect>,
    pub audit: Vec<AuditDefect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptReport {
    /// Position in the workload.
    pub index: usize,
    pub node: NodeId,
    pub tx_id: TxId,
    pub work_id: WorkId,
    pub revision_number: u64,
    pub status: ReceiptStatus,
    pub submit_tick: Tick,
    pub commit_tick: Option<Tick>,
    pub latency: Option<Tick>,
    pub block_height: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejected {
    pub index: usize,
    pub node: NodeId,
    pub reason: String,
}

/// Valid commits per tick, kept as an exact fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub committed_valid: u64,
    pub total_ticks: Tick,
    /// Reduced fraction, "num/den".
    pub per_tick: String,
    pub approx: f64,
}

impl Throughput {
    pub fn new(committed_valid: u64, total_ticks: Tick) -> Throughput {
        let r = Ratio::new(committed_valid, total_ticks.max(1));
        Throughput {
            committed_valid,
            total_ticks,
            per_tick: format!("{}/{}", r.numer(), r.denom()),
            approx: *r.numer() as f64 / *r.denom() as f64,
        }
    }

    pub fn ratio(&self) -> Ratio<u64> {
        Ratio::new(self.committed_valid, self.total_ticks.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseBound {
    pub min_latency: Tick,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub throughput_per_tick: f64,
    /// Latencies of valid commits only.
    pub latency_count: usize,
    pub latency_mean: Option<f64>,
    pub latency_p50: Option<Tick>,
    pub latency_p99: Option<Tick>,
    pub latency_max: Option<Tick>,
    pub stalled: bool,
    /// Fault-free runs only: every latency is at least three network hops.
    pub phase_bound: Option<PhaseBound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub start_tick: Tick,
    pub total_ticks: Tick,
    pub stalled: bool,
    /// Honest nodes agree on every height they both committed.
    pub safety_ok: bool,
    pub fault_free: bool,
    pub delay_min: Tick,
    pub nodes: Vec<NodeReport>,
    pub receipts: Vec<ReceiptReport>,
    pub rejected: Vec<Rejected>,
    pub validity: BTreeMap<ValidityFlag, u64>,
    pub throughput: Throughput,
    pub evidence: Vec<Evidence>,
    pub metrics: MetricsSummary,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn final_view(&self) -> u64 {
        self.nodes.iter().filter(|n| n.honest).map(|n| n.view).min().unwrap_or(0)
    }

    pub fn all_committed_valid(&self) -> bool {
        self.rejected.is_empty() && self.receipts.iter().all(|r| r.status == ReceiptStatus::CommittedValid)
    }
}

/// True iff every pair of sequences agrees on their common prefix.
pub fn prefix_consistent(seqs: &[&[BlockHash]]) -> bool {
    seqs.iter().all(|a| seqs.iter().all(|b| a.iter().zip(b.iter()).all(|(x, y)| x == y)))
}

/// Nearest-rank percentile of a sorted slice, `q` in percent.
pub fn percentile(sorted: &[Tick], q: usize) -> Option<Tick> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len()).div_ceil(100).max(1);
    Some(sorted[rank - 1])
}

pub fn metrics(report: &SimReport) -> MetricsSummary {
    let mut latencies: Vec<Tick> = report
        .receipts
        .iter()
        .filter(|r| r.status == ReceiptStatus::CommittedValid)
        .filter_map(|r| r.latency)
        .collect();
    latencies.sort_unstable();
    let count = latencies.len();
    let min_latency = 3 * report.delay_min;
    MetricsSummary {
        throughput_per_tick: report.throughput.approx,
        latency_count: count,
        latency_mean: (count > 0).then(|| latencies.iter().sum::<Tick>() as f64 / count as f64),
        latency_p50: percentile(&latencies, 50),
        latency_p99: percentile(&latencies, 99),
        latency_max: latencies.last().copied(),
        stalled: report.stalled || count == 0,
        phase_bound: report
            .fault_free
            .then(|| PhaseBound { min_latency, holds: latencies.iter().all(|&l| l >= min_latency) }),
    }
}
