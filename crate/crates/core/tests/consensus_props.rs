use std::collections::BTreeMap;

use proptest::prelude::*;
use revledger_core::consensus::quorum_size;
use revledger_core::pipeline::ReceiptStatus;
use revledger_core::sim::{run, ByzantineBehavior, ByzantineNode, Partition, SimConfig, Workload};
use revledger_core::NodeId;

fn behavior() -> impl Strategy<Value = ByzantineBehavior> {
    prop_oneof![
        (0u64..40).prop_map(|at| ByzantineBehavior::Crash { at }),
        Just(ByzantineBehavior::Silent),
        Just(ByzantineBehavior::EquivocatePrePrepare),
        (1u64..40).prop_map(|extra| ByzantineBehavior::DelayAll { extra }),
        Just(ByzantineBehavior::CorruptDigest),
    ]
}

/// All k-subsets of 0..n as bitmasks.
fn subsets(n: usize, k: usize) -> Vec<u32> {
    (0u32..1 << n).filter(|m| m.count_ones() as usize == k).collect()
}

#[test]
fn quorums_intersect_in_an_honest_majority() {
    for f in 1..=3 {
        let n = 3 * f + 1;
        let q = quorum_size(n, f).unwrap();
        assert_eq!(q, 2 * f + 1);
        assert!(quorum_size(n - 1, f).is_err());
        let all = subsets(n, q);
        let min_overlap = all
            .iter()
            .flat_map(|a| all.iter().map(move |b| (a & b).count_ones()))
            .min()
            .unwrap();
        assert_eq!(min_overlap as usize, f + 1, "f = {f}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    /// One faulty node of any kind, any delays and losses: honest nodes never
    /// commit different blocks at the same height.
    #[test]
    fn honest_nodes_agree(
        seed in any::<u64>(),
        faulty in 0u64..4,
        behavior in behavior(),
        delay_min in 1u64..3,
        spread in 0u64..4,
        drop_pct in 0u32..15,
        txs in 1usize..15,
    ) {
        let mut config = SimConfig::honest(4, 1, seed);
        config.delay_min = delay_min;
        config.delay_max = delay_min + spread;
        config.drop_prob = drop_pct as f64 / 100.0;
        config.max_ticks = 1500;
        config.byzantine = vec![ByzantineNode { node: NodeId(faulty), behavior }];
        let honest: Vec<NodeId> = (0..4).map(NodeId).filter(|n| n.0 != faulty).collect();
        let report = run(config, &Workload::spread(txs, 3, &honest, 1, 1)).unwrap();
        prop_assert!(report.safety_ok);
        let mut by_height: BTreeMap<usize, revledger_core::Digest> = BTreeMap::new();
        for node in report.nodes.iter().filter(|n| n.honest) {
            for (h, d) in node.digests.iter().enumerate() {
                prop_assert_eq!(*by_height.entry(h).or_insert(*d), *d);
            }
        }
    }

    /// Without losses, one faulty node never stops honest submissions from committing.
    #[test]
    fn faulty_node_cannot_block_progress(seed in any::<u64>(), faulty in 0u64..4, behavior in behavior(), txs in 1usize..15) {
        let mut config = SimConfig::honest(4, 1, seed);
        config.max_ticks = 50 * config.timeout_ticks;
        config.byzantine = vec![ByzantineNode { node: NodeId(faulty), behavior }];
        let honest: Vec<NodeId> = (0..4).map(NodeId).filter(|n| n.0 != faulty).collect();
        let report = run(config, &Workload::spread(txs, 3, &honest, 1, 1)).unwrap();
        prop_assert!(!report.stalled);
        prop_assert!(report.receipts.iter().all(|r| r.status != ReceiptStatus::Pending));
        let heights: Vec<u64> = report.nodes.iter().filter(|n| n.honest).map(|n| n.committed_height).collect();
        prop_assert!(heights.windows(2).all(|w| w[0] == w[1]));
    }

    /// Identical inputs give byte-identical reports.
    #[test]
    fn deterministic(seed in any::<u64>(), drop_pct in 0u32..20, txs in 1usize..10) {
        let mut config = SimConfig::honest(4, 1, seed);
        config.drop_prob = drop_pct as f64 / 100.0;
        config.max_ticks = 600;
        config.partitions = vec![Partition { from: 5, to: 40, group: vec![NodeId(3)] }];
        let w = Workload::spread(txs, 2, &[NodeId(0), NodeId(1)], 1, 2);
        prop_assert_eq!(run(config.clone(), &w).unwrap().to_json(), run(config, &w).unwrap().to_json());
    }
}

#[test]
fn more_than_f_crashes_stall_without_forking() {
    let mut config = SimConfig::honest(4, 1, 77);
    config.max_ticks = 400;
    config.byzantine = vec![
        ByzantineNode { node: NodeId(2), behavior: ByzantineBehavior::Crash { at: 0 } },
        ByzantineNode { node: NodeId(3), behavior: ByzantineBehavior::Crash { at: 0 } },
    ];
    let report = run(config, &Workload::spread(3, 1, &[NodeId(0), NodeId(1)], 1, 1)).unwrap();
    assert!(report.stalled);
    assert!(report.safety_ok);
    assert!(report.nodes.iter().all(|n| n.committed_height == 0));
}
