use serde::{Deserialize, Serialize};

use super::rng::SimRng;
use crate::consensus::quorum_size;
use crate::content_store::Payload;
use crate::{NodeId, Tick};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Quorum(#[from] crate::consensus::ConfigError),
    #[error("invalid simulation config: {0}")]
    Invalid(String),
    #[error("invalid workload: {0}")]
    Workload(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ByzantineBehavior {
    /// No inbound or outbound traffic at or after this tick.
    Crash { at: Tick },
    /// Runs normally but never sends.
    Silent,
    /// PrePrepares go out as two different blocks to disjoint halves of the peers.
    EquivocatePrePrepare,
    /// Every outbound hop takes this many extra ticks.
    DelayAll { extra: Tick },
    /// One byte of the digest of every consensus message is flipped.
    CorruptDigest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByzantineNode {
    pub node: NodeId,
    pub behavior: ByzantineBehavior,
}

/// While `from <= now < to`, links between `group` and everyone else drop everything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub from: Tick,
    pub to: Tick,
    pub group: Vec<NodeId>,
}

impl Partition {
    pub fn separates(&self, a: NodeId, b: NodeId, now: Tick) -> bool {
        (self.from..self.to).contains(&now) && self.group.contains(&a) != self.group.contains(&b)
    }
}

fn default_timeout() -> Tick {
    20
}

fn default_max_batch() -> usize {
    100
}

fn default_endorsements() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub f: usize,
    pub seed: u64,
    pub delay_min: Tick,
    pub delay_max: Tick,
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub partitions: Vec<Partition>,
    #[serde(default)]
    pub byzantine: Vec<ByzantineNode>,
    pub max_ticks: Tick,
    #[serde(default = "default_timeout")]
    pub timeout_ticks: Tick,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    /// Endorsements required per transaction.
    #[serde(default = "default_endorsements")]
    pub endorsements: usize,
}

impl SimConfig {
    /// Fault-free network with the given size and seed.
    pub fn honest(n: usize, f: usize, seed: u64) -> SimConfig {
        SimConfig {
            n,
            f,
            seed,
            delay_min: 1,
            delay_max: 3,
            drop_prob: 0.0,
            partitions: Vec::new(),
            byzantine: Vec::new(),
            max_ticks: 10_000,
            timeout_ticks: default_timeout(),
            max_batch: default_max_batch(),
            endorsements: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        quorum_size(self.n, self.f)?;
        let bad = |s: String| Err(ConfigError::Invalid(s));
        if self.delay_min < 1 || self.delay_min > self.delay_max {
            return bad(format!("need 1 <= delay_min <= delay_max, got {}..{}", self.delay_min, self.delay_max));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return bad(format!("drop_prob {} outside [0, 1]", self.drop_prob));
        }
        if self.timeout_ticks == 0 || self.max_ticks == 0 {
            return bad("timeout_ticks and max_ticks must be positive".into());
        }
        if self.endorsements == 0 || self.endorsements > self.n {
            return bad(format!("endorsements must be in 1..={}", self.n));
        }
        let nodes = self.byzantine.iter().map(|b| b.node).chain(self.partitions.iter().flat_map(|p| p.group.iter().copied()));
        for node in nodes {
            if node.index() >= self.n {
                return bad(format!("{node} is outside 0..{}", self.n));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        if !self.byzantine.iter().all(|b| seen.insert(b.node)) {
            return bad("a node has more than one behavior".into());
        }
        Ok(())
    }

    pub fn behavior(&self, node: NodeId) -> Option<ByzantineBehavior> {
        self.byzantine.iter().find(|b| b.node == node).map(|b| b.behavior)
    }

    pub fn is_honest(&self, node: NodeId) -> bool {
        self.behavior(node).is_none()
    }

    pub fn is_fault_free(&self) -> bool {
        self.byzantine.is_empty() && self.partitions.is_empty() && self.drop_prob == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadSpec {
    Text(String),
    /// Literal bytes, hex in scenario files.
    Bytes(#[serde(with = "crate::content_store::hex_bytes")] Vec<u8>),
    /// This many bytes from the workload generator.
    Random(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub tick: Tick,
    pub node: NodeId,
    pub work_id: String,
    pub author_id: String,
    pub payload: PayloadSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Workload {
    pub items: Vec<Submission>,
}

/// Seed offset for payload bytes, so payloads do not share the network stream.
const PAYLOAD_STREAM: u64 = 0x7061_796c_6f61_6473;

impl Workload {
    pub fn validate(&self, n: usize) -> Result<(), ConfigError> {
        for (i, pair) in self.items.windows(2).enumerate() {
            if pair[1].tick < pair[0].tick {
                return Err(ConfigError::Workload(format!("submission {} goes back in time", i + 1)));
            }
        }
        if let Some(s) = self.items.iter().find(|s| s.node.index() >= n) {
            return Err(ConfigError::Workload(format!("{} is outside 0..{n}", s.node)));
        }
        Ok(())
    }

    /// `count` submissions, one every `every` ticks from `start`, cycling
    /// through `works` works and the given nodes. Payloads are random.
    pub fn spread(count: usize, works: usize, nodes: &[NodeId], start: Tick, every: Tick) -> Workload {
        let items = (0..count)
            .map(|i| Submission {
                tick: start + i as Tick * every,
                node: nodes[i % nodes.len()],
                work_id: format!("work-{}", i % works.max(1)),
                author_id: format!("author-{}", i % 3),
                payload: PayloadSpec::Random(64),
            })
            .collect();
        Workload { items }
    }

    /// Payload bytes for every submission, drawn in order from a stream
    /// seeded with `seed ^ PAYLOAD_STREAM`.
    pub fn payloads(&self, seed: u64) -> Vec<Payload> {
        let mut rng = SimRng::new(seed ^ PAYLOAD_STREAM);
        self.items
            .iter()
            .map(|s| match &s.payload {
                PayloadSpec::Text(t) => Payload::text(t.clone()),
                PayloadSpec::Bytes(b) => Payload::sniffed(b.clone()),
                PayloadSpec::Random(len) => {
                    let mut bytes = vec![0; *len];
                    rng.fill(&mut bytes);
                    Payload::sniffed(bytes)
                }
            })
            .collect()
    }
}

/// Scenario file: a config and a workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub config: SimConfig,
    pub workload: Workload,
}
