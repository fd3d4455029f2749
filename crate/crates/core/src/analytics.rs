//! Quantitative estimators over one or several chains: block-time statistics
//! and cross-economy membership queries. Everything here is read-only and
//! exact; rendering to decimals is left to callers.

use std::collections::BTreeMap;

use num_rational::Ratio;
use thiserror::Error;

use crate::config::{Hash, Value};
use crate::ledger::Chain;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("block-time average needs at least 2 blocks, chain has {0}")]
    InsufficientBlocks(usize),
}

/// Mean of consecutive timestamp differences, as an exact rational of
/// virtual time units.
pub fn average_block_time(chain: &Chain) -> Result<Ratio<i64>, AnalyticsError> {
    let timestamps: Vec<u64> = chain.blocks.iter().map(|b| b.timestamp).collect();
    average_of_timestamps(&timestamps)
}

pub fn average_of_timestamps(timestamps: &[u64]) -> Result<Ratio<i64>, AnalyticsError> {
    if timestamps.len() < 2 {
        return Err(AnalyticsError::InsufficientBlocks(timestamps.len()));
    }
    let total: i64 = timestamps
        .windows(2)
        .map(|w| w[1] as i64 - w[0] as i64)
        .sum();
    Ok(Ratio::new(total, (timestamps.len() - 1) as i64))
}

/// True iff the hash is stored in at least one included economy and in no
/// excluded one. Membership goes through each chain's graph index.
pub fn inter_economy_contains(t_hash: &Hash, include: &[&Chain], exclude: &[&Chain]) -> bool {
    let in_union = include.iter().any(|c| c.graph.search_contains(t_hash));
    let in_excluded = exclude.iter().any(|c| c.graph.search_contains(t_hash));
    in_union && !in_excluded
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainStats {
    pub block_count: usize,
    /// Undefined until the chain has two blocks.
    pub avg_block_time: Option<Ratio<i64>>,
    /// Listed instances per root across all blocks.
    pub instance_count_per_root: BTreeMap<String, u64>,
    pub total_rewards_issued: Value,
}

/// Full-scan summary of a chain. Pure; calling it twice gives equal values.
pub fn chain_stats(chain: &Chain) -> ChainStats {
    let mut per_root: BTreeMap<String, u64> = BTreeMap::new();
    for block in &chain.blocks {
        for (root, list) in &block.instances {
            *per_root.entry(root.clone()).or_insert(0) += list.len() as u64;
        }
    }
    let rewarded_blocks = chain.blocks.len().saturating_sub(1) as u64;
    ChainStats {
        block_count: chain.blocks.len(),
        avg_block_time: average_block_time(chain).ok(),
        instance_count_per_root: per_root,
        total_rewards_issued: Value(chain.config.block_reward.amount() * rewarded_blocks),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::test_support::minimal_config;
    use crate::config::{AccountId, MechanismRef};
    use crate::graphstore::PRED_CREATED;
    use crate::graphstore::TriplePattern;
    use crate::ledger::{RootInstance, Chain};
    use std::collections::BTreeMap;

    fn chain_with_timestamps(timestamps: &[u64]) -> Chain {
        let mut config = minimal_config();
        config.consensus = MechanismRef::ProofOfWork { difficulty: 0 };
        let mut chain = Chain::create(config, AccountId::new("miner")).unwrap().0;
        assert_eq!(timestamps[0], 0, "genesis is minted at virtual time 0");
        for &t in &timestamps[1..] {
            let block = chain
                .mine_block(AccountId::new("miner"), BTreeMap::new(), t, 1_000)
                .unwrap();
            chain.append_block(block).unwrap();
        }
        chain
    }

    #[test]
    fn constant_spacing_gives_the_spacing() {
        let chain = chain_with_timestamps(&[0, 10, 20]);
        assert_eq!(average_block_time(&chain).unwrap(), Ratio::from_integer(10));
        let two = chain_with_timestamps(&[0, 5]);
        assert_eq!(average_block_time(&two).unwrap(), Ratio::from_integer(5));
    }

    #[test]
    fn uneven_spacing_is_an_exact_rational() {
        // hand sum: (3 + 6 + 1) / 3
        let chain = chain_with_timestamps(&[0, 3, 9, 10]);
        assert_eq!(average_block_time(&chain).unwrap(), Ratio::new(10, 3));
    }

    #[test]
    fn equal_intervals_average_to_the_interval_exactly() {
        for delta in [1u64, 7, 12] {
            let timestamps: Vec<u64> = (0..6).map(|i| i * delta).collect();
            let chain = chain_with_timestamps(&timestamps);
            assert_eq!(
                average_block_time(&chain).unwrap(),
                Ratio::from_integer(delta as i64)
            );
        }
    }

    #[test]
    fn short_chains_have_no_average() {
        let chain = chain_with_timestamps(&[0]);
        assert_eq!(
            average_block_time(&chain),
            Err(AnalyticsError::InsufficientBlocks(1))
        );
    }

    fn store_female(chain: &mut Chain, tag: u64) -> Hash {
        let f = RootInstance::female("asset", "alice", tag);
        let h = f.hash(&chain.config);
        let block = chain
            .mine_block(
                AccountId::new("miner"),
                [(String::from("asset"), vec![f])].into(),
                chain.state.head_height + 1,
                1_000,
            )
            .unwrap();
        chain.append_block(block).unwrap();
        h
    }

    #[test]
    fn membership_truth_table() {
        // try every combination of T's presence across three economies
        for combo in 0u8..8 {
            let mut chains: Vec<Chain> = (0..3)
                .map(|_| chain_with_timestamps(&[0]))
                .collect();
            let probe = RootInstance::female("asset", "alice", 1000 + combo as u64);
            let t_hash = probe.hash(&chains[0].config);
            for (i, chain) in chains.iter_mut().enumerate() {
                if combo & (1 << i) != 0 {
                    let h = store_female(chain, 1000 + combo as u64);
                    assert_eq!(h, t_hash, "identical instances hash identically");
                }
            }
            let in1 = combo & 1 != 0;
            let in2 = combo & 2 != 0;
            let in3 = combo & 4 != 0;
            let expected = (in1 || in2) && !in3;
            assert_eq!(
                inter_economy_contains(&t_hash, &[&chains[0], &chains[1]], &[&chains[2]]),
                expected,
                "combo {combo:03b}"
            );
        }
    }

    #[test]
    fn empty_include_is_always_false() {
        let mut chain = chain_with_timestamps(&[0]);
        let h = store_female(&mut chain, 7);
        assert!(!inter_economy_contains(&h, &[], &[]));
        assert!(!inter_economy_contains(&h, &[], &[&chain]));
    }

    #[test]
    fn union_decomposes_and_exclusion_dominates() {
        let mut b1 = chain_with_timestamps(&[0]);
        let b2 = chain_with_timestamps(&[0]);
        let mut b3 = chain_with_timestamps(&[0]);
        let h = store_female(&mut b1, 3);
        assert_eq!(h, store_female(&mut b3, 3));

        let union = inter_economy_contains(&h, &[&b1, &b2], &[]);
        let either = inter_economy_contains(&h, &[&b1], &[])
            || inter_economy_contains(&h, &[&b2], &[]);
        assert_eq!(union, either);
        assert!(!inter_economy_contains(&h, &[&b1, &b2], &[&b3]));
    }

    #[test]
    fn genesis_only_stats() {
        let chain = chain_with_timestamps(&[0]);
        let stats = chain_stats(&chain);
        assert_eq!(stats.block_count, 1);
        assert_eq!(stats.avg_block_time, None);
        assert!(stats.instance_count_per_root.is_empty());
        assert_eq!(stats.total_rewards_issued, Value(0));
    }

    #[test]
    fn stats_match_hand_enumeration_of_the_block_list() {
        let mut chain = chain_with_timestamps(&[0]);
        store_female(&mut chain, 1);
        store_female(&mut chain, 2);
        let empty = chain
            .mine_block(AccountId::new("miner"), BTreeMap::new(), 99, 1_000)
            .unwrap();
        chain.append_block(empty).unwrap();

        let stats = chain_stats(&chain);
        assert_eq!(stats.block_count, 4);
        assert_eq!(stats.instance_count_per_root.get("asset"), Some(&2));
        assert_eq!(stats.total_rewards_issued, Value(150));
        assert_eq!(stats.total_rewards_issued.amount(), chain.state.cumulative_rewards);
        assert_eq!(chain_stats(&chain), stats);
    }

    #[test]
    fn stats_survive_persistence_and_replay() {
        let mut chain = chain_with_timestamps(&[0, 4, 9]);
        store_female(&mut chain, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.blocks");
        crate::ledger::write_blocks_file(&path, &chain.blocks).unwrap();
        let blocks = crate::ledger::read_blocks_file(&path).unwrap();
        let replayed = Chain::replay(chain.config.clone(), blocks).unwrap();
        assert_eq!(chain_stats(&replayed), chain_stats(&chain));
    }

    #[test]
    fn listed_instances_reconcile_with_created_triples() {
        let mut chain = chain_with_timestamps(&[0]);
        store_female(&mut chain, 1);
        store_female(&mut chain, 2);
        let stats = chain_stats(&chain);
        let listed: u64 = stats.instance_count_per_root.values().sum();
        // every listed instance leaves one Created triple; coinbase rewards
        // add one more per mined block
        let coinbases = (stats.block_count - 1) as u64;
        let created = chain
            .graph
            .query(&TriplePattern::any().with_predicate(PRED_CREATED))
            .len() as u64;
        assert_eq!(created, listed + coinbases);
    }
}
