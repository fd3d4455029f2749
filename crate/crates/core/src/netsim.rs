//! Deterministic multi-node network simulator.
//!
//! A discrete-event loop over virtual time: nodes attempt one mining step per
//! time unit, successful blocks propagate to peers with configurable latency,
//! receivers adopt strictly longer valid chains, and lifecycle hooks
//! (OnNewBlock on the miner, OnBlockReceived on receivers, OnNewPeer at
//! start, OnPeerMessage on deliveries) run along the way. Everything is
//! driven by a seed and processed in (time, insertion-sequence) order, so a
//! run is exactly reproducible: two executions with the same inputs produce
//! byte-identical reports.
//!
//! Only mined blocks travel between nodes; submitted instances stay in the
//! pending pool of the node they were injected into until mined.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::analytics::average_block_time;
use crate::config::{digest_with, AccountId, ChainConfig, Hash, HashAlg, MechanismRef};
use crate::encoding::Encodable;
use crate::ledger::{block_root_set, Block, Chain, PersistError, RootInstance};
use crate::mechanism::pow_mine_step;
use crate::merkle::MerkleTree;
use crate::vm::{self, Program, VmContext, VmValue};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// Per-link delay lookup; distinct nodes are at least one unit apart.
#[derive(Debug, Clone)]
pub struct LatencyModel {
    pub default: u64,
    pub overrides: BTreeMap<(usize, usize), u64>,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel { default: 1, overrides: BTreeMap::new() }
    }
}

impl LatencyModel {
    pub fn delay(&self, from: usize, to: usize) -> u64 {
        *self.overrides.get(&(from, to)).unwrap_or(&self.default)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_nodes: usize,
    pub seed: u64,
    pub latency: LatencyModel,
    /// Virtual time units the event loop runs for.
    pub duration: u64,
    /// Puzzle difficulty applied to the chain's proof-of-work consensus.
    pub z_l: u64,
    /// Mining attempts stop at this time; the remainder of the run is a
    /// quiescence window that lets in-flight blocks settle.
    pub mine_until: u64,
    /// (time, node, instance) submissions into a node's pending pool.
    pub instance_script: Vec<(u64, usize, RootInstance)>,
    /// (time, node, message) deliveries, as if a peer had sent the bytes.
    pub message_script: Vec<(u64, usize, Vec<u8>)>,
}

impl SimConfig {
    pub fn new(n_nodes: usize, seed: u64, duration: u64, z_l: u64) -> SimConfig {
        SimConfig {
            n_nodes,
            seed,
            latency: LatencyModel::default(),
            duration,
            z_l,
            mine_until: duration,
            instance_script: Vec::new(),
            message_script: Vec::new(),
        }
    }

    fn validate(&self, chain_config: &ChainConfig) -> Result<(), SimError> {
        if self.n_nodes == 0 {
            return Err(SimError::InvalidConfig("n_nodes must be at least 1".into()));
        }
        if self.z_l > 64 {
            return Err(SimError::InvalidConfig("difficulty exceeds digest length".into()));
        }
        if self.latency.default == 0 || self.latency.overrides.values().any(|&d| d == 0) {
            return Err(SimError::InvalidConfig("latency must be at least 1 unit".into()));
        }
        for (_, node, _) in &self.instance_script {
            if *node >= self.n_nodes {
                return Err(SimError::InvalidConfig(format!("script targets node {node}")));
            }
        }
        for (_, node, _) in &self.message_script {
            if *node >= self.n_nodes {
                return Err(SimError::InvalidConfig(format!("script targets node {node}")));
            }
        }
        let violations = chain_config.validate();
        if !violations.is_empty() {
            return Err(SimError::InvalidConfig(format!("chain config: {violations:?}")));
        }
        Ok(())
    }
}

pub struct NodeState {
    pub node_id: AccountId,
    pub chain: Chain,
    /// Blocks seen from the network, by hash, for assembling fork suffixes.
    pub seen: BTreeMap<Hash, Block>,
    pub fork_count: u64,
    next_counter: u64,
}

enum Event {
    MineAttempt { node: usize },
    DeliverBlock { node: usize, block: Block },
    DeliverMessage { node: usize, origin: usize, message: Vec<u8> },
    InjectInstance { node: usize, instance: RootInstance },
}

struct Queued {
    time: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // reversed so the binary heap pops the earliest (time, seq) first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Byte-stable simulation output: a plain-text summary, a JSON-lines event
/// log, and the raw per-node endpoints for programmatic checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimReport {
    pub summary: String,
    pub event_log: String,
    pub heads: Vec<(Hash, u64)>,
    pub fork_counts: Vec<u64>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Sim {
    config: ChainConfig,
    nodes: Vec<NodeState>,
    latency: LatencyModel,
    z_l: u64,
    queue: BinaryHeap<Queued>,
    next_seq: u64,
    log: String,
    now: u64,
}

pub fn run_simulation(chain_config: &ChainConfig, sim: &SimConfig) -> Result<SimReport, SimError> {
    run_simulation_traced(chain_config, sim).map(|(report, _)| report)
}

/// [`run_simulation`] plus the final node states, for callers that inspect
/// the simulated chains themselves.
pub fn run_simulation_traced(
    chain_config: &ChainConfig,
    sim: &SimConfig,
) -> Result<(SimReport, Vec<NodeState>), SimError> {
    sim.validate(chain_config)?;

    let mut config = chain_config.clone();
    if let MechanismRef::ProofOfWork { difficulty } = &mut config.consensus {
        *difficulty = sim.z_l;
    }

    let genesis_creator = AccountId::new("genesis");
    let mut nodes = Vec::new();
    for k in 0..sim.n_nodes {
        let (chain, _) = Chain::create(config.clone(), genesis_creator.clone())
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        nodes.push(NodeState {
            node_id: AccountId::new(format!("node{k}")),
            chain,
            seen: BTreeMap::new(),
            fork_count: 0,
            next_counter: splitmix64(sim.seed ^ k as u64),
        });
    }

    let mut s = Sim {
        config,
        nodes,
        latency: sim.latency.clone(),
        z_l: sim.z_l,
        queue: BinaryHeap::new(),
        next_seq: 0,
        log: String::new(),
        now: 0,
    };

    for (time, node, instance) in &sim.instance_script {
        s.schedule(*time, Event::InjectInstance { node: *node, instance: instance.clone() });
    }
    for (time, node, message) in &sim.message_script {
        s.schedule(
            *time,
            Event::DeliverMessage { node: *node, origin: *node, message: message.clone() },
        );
    }
    let mine_end = sim.mine_until.min(sim.duration);
    for time in 0..mine_end {
        for node in 0..sim.n_nodes {
            s.schedule(time, Event::MineAttempt { node });
        }
    }

    // every node greets its peers once at start
    for i in 0..sim.n_nodes {
        for j in 0..sim.n_nodes {
            if i != j {
                let env = BTreeMap::from([
                    ("arg0".to_string(), VmValue::Int(j as i64)),
                    ("arg0.id".to_string(), VmValue::Int(j as i64)),
                ]);
                s.run_hook_with_broadcasts(i, "OnNewPeer", env);
            }
        }
    }

    while let Some(next) = s.queue.pop() {
        if next.time >= sim.duration {
            break;
        }
        s.now = next.time;
        let heights: Vec<u64> = s.nodes.iter().map(|n| n.chain.state.head_height).collect();
        s.process(next.event);
        for (node, before) in s.nodes.iter().zip(&heights) {
            debug_assert!(node.chain.state.head_height >= *before, "head height regressed");
        }
    }

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "nodes {} duration {} difficulty {} seed {}",
        sim.n_nodes, sim.duration, sim.z_l, sim.seed
    );
    let mut heads = Vec::new();
    let mut fork_counts = Vec::new();
    for (k, node) in s.nodes.iter().enumerate() {
        let head = node.chain.head_hash();
        let height = node.chain.state.head_height;
        let avg = match average_block_time(&node.chain) {
            Ok(r) => r.to_string(),
            Err(_) => "none".to_string(),
        };
        let _ = writeln!(
            summary,
            "node {k} height {height} head {} forks {} avg_block_time {avg}",
            head.to_hex(),
            node.fork_count
        );
        heads.push((head, height));
        fork_counts.push(node.fork_count);
    }

    let report = SimReport { summary, event_log: s.log, heads, fork_counts };
    Ok((report, s.nodes))
}

impl Sim {
    fn schedule(&mut self, time: u64, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued { time, seq, event });
    }

    fn log_event(&mut self, kind: &str, node: usize, payload: &[u8]) {
        let digest = digest_with(self.config.hash_alg, payload);
        let _ = writeln!(
            self.log,
            "{{\"time\":{},\"kind\":\"{kind}\",\"node\":{node},\"payload\":\"{}\"}}",
            self.now,
            digest.to_hex()
        );
    }

    fn process(&mut self, event: Event) {
        match event {
            Event::MineAttempt { node } => self.mine_attempt(node),
            Event::DeliverBlock { node, block } => self.deliver_block(node, block),
            Event::DeliverMessage { node, origin, message } => {
                self.deliver_message(node, origin, message)
            }
            Event::InjectInstance { node, instance } => {
                self.log_event("INJECT_INSTANCE", node, &instance.canonical_encode());
                self.nodes[node].chain.submit(instance);
            }
        }
    }

    fn mine_attempt(&mut self, k: usize) {
        let node = &mut self.nodes[k];
        let grouped = group_by_root(&node.chain.pending);
        let root_set = match block_root_set(&node.chain.config, &grouped) {
            Ok(rs) => rs,
            Err(_) => {
                // pending references roots the chain does not declare
                node.chain.pending.clear();
                return;
            }
        };
        let mut block = Block {
            height: node.chain.state.head_height + 1,
            predecessor_hash: node.chain.head_hash(),
            timestamp: self.now,
            root_set,
            instances: grouped,
            nonce: Vec::new(),
            creator: node.node_id.clone(),
            predecessor_version_hash: None,
        };
        match &self.config.consensus {
            MechanismRef::ProofOfWork { .. } => {
                let counter = node.next_counter;
                node.next_counter = node.next_counter.wrapping_add(1);
                match pow_mine_step(&self.config, &block.binder(), self.z_l, counter) {
                    Some(nonce) => block.nonce = nonce,
                    None => return,
                }
            }
            MechanismRef::Custom { .. } => {
                // nothing to order consensus around without payload
                if block.instances.is_empty() {
                    return;
                }
                block.nonce = b"custom".to_vec();
            }
        }
        let hash = block.hash(&self.config);
        if self.nodes[k].chain.append_block(block.clone()).is_err() {
            // a stale or unservable pending set blocks all future candidates
            self.nodes[k].chain.pending.clear();
            return;
        }
        self.nodes[k].seen.insert(hash, block.clone());
        self.log_event("MINE_ATTEMPT", k, &block.canonical_encode());
        let env = block_env(&block, &hash);
        self.run_hook_with_broadcasts(k, "OnNewBlock", env);
        self.broadcast_block(k, &block);
    }

    fn broadcast_block(&mut self, from: usize, block: &Block) {
        for to in 0..self.nodes.len() {
            if to != from {
                let at = self.now + self.latency.delay(from, to);
                self.schedule(at, Event::DeliverBlock { node: to, block: block.clone() });
            }
        }
    }

    /// Schedule one message to every peer of `from`.
    fn broadcast_message(&mut self, from: usize, message: &[u8]) {
        for to in 0..self.nodes.len() {
            if to != from {
                let at = self.now + self.latency.delay(from, to);
                self.schedule(
                    at,
                    Event::DeliverMessage { node: to, origin: from, message: message.to_vec() },
                );
            }
        }
    }

    fn deliver_block(&mut self, k: usize, block: Block) {
        self.log_event("DELIVER_BLOCK", k, &block.canonical_encode());
        let hash = block.hash(&self.config);
        let node = &mut self.nodes[k];
        if node.chain.blocks.iter().any(|b| b.hash(&self.config) == hash) {
            return;
        }
        node.seen.insert(hash, block.clone());

        let accepted = if block.predecessor_hash == node.chain.head_hash()
            && block.height == node.chain.state.head_height + 1
        {
            node.chain.append_block(block.clone()).is_ok()
        } else {
            self.try_adopt_fork(k, &block)
        };
        if accepted {
            let env = block_env(&block, &hash);
            self.run_hook_with_broadcasts(k, "OnBlockReceived", env);
        }
    }

    /// Assemble the suffix ending in `tip` from the seen-block cache and
    /// adopt it if it is strictly longer than the local chain and fully
    /// valid. Returns whether the head moved.
    fn try_adopt_fork(&mut self, k: usize, tip: &Block) -> bool {
        let node = &mut self.nodes[k];
        if tip.height <= node.chain.state.head_height {
            return false;
        }
        let local_hashes: BTreeSet<Hash> =
            node.chain.blocks.iter().map(|b| b.hash(&node.chain.config)).collect();
        let mut suffix = vec![tip.clone()];
        let mut cursor = tip.predecessor_hash;
        while !local_hashes.contains(&cursor) {
            match node.seen.get(&cursor) {
                Some(parent) => {
                    suffix.push(parent.clone());
                    cursor = parent.predecessor_hash;
                }
                // a gap: keep the tip as an orphan until its parent arrives
                None => return false,
            }
        }
        suffix.reverse();

        let old_head = node.chain.head_hash();
        let adopted = match fork_choice(&node.chain, &suffix) {
            Ok(chain) => chain,
            Err(_) => return false,
        };
        if adopted.head_hash() == old_head {
            return false;
        }
        let extends_old_head =
            adopted.blocks.iter().any(|b| b.hash(&adopted.config) == old_head);
        if !extends_old_head {
            node.fork_count += 1;
        }
        let pending = std::mem::take(&mut node.chain.pending);
        node.chain = adopted;
        node.chain.pending = pending
            .into_iter()
            .filter(|i| !node.chain.graph.search_contains(&i.hash(&node.chain.config)))
            .collect();
        true
    }

    fn deliver_message(&mut self, k: usize, origin: usize, message: Vec<u8>) {
        self.log_event("DELIVER_MESSAGE", k, &message);
        let mut env = BTreeMap::from([
            ("arg0".to_string(), VmValue::Int(origin as i64)),
            ("arg0.id".to_string(), VmValue::Int(origin as i64)),
        ]);
        let value = match std::str::from_utf8(&message).ok().and_then(|s| s.parse::<i64>().ok()) {
            Some(n) => VmValue::Int(n),
            None => VmValue::Bytes(message.clone()),
        };
        env.insert("arg0.message".to_string(), value);
        self.run_hook_with_broadcasts(k, "OnPeerMessage", env);
    }

    /// Run a lifecycle hook on a node, then turn any `broadcast:`-prefixed
    /// log entries into peer messages.
    fn run_hook_with_broadcasts(&mut self, k: usize, hook: &str, env: BTreeMap<String, VmValue>) {
        let Some(code) = hook_code(&self.config, hook) else {
            return;
        };
        let program = match Program::decode(code) {
            Ok(p) => p,
            Err(_) => return,
        };
        let mut aspects = self.nodes[k].chain.state.aspects.clone();
        let mut ctx = VmContext {
            config: &self.config,
            current_root: None,
            env,
            aspects: &mut aspects,
            allow_aspect_writes: false,
        };
        let Ok(outcome) = vm::execute(&mut ctx, &program) else {
            return;
        };
        let Ok(values) = outcome.log_values() else {
            return;
        };
        for value in values {
            if let VmValue::Bytes(bytes) = value {
                if let Some(message) = bytes.strip_prefix(b"broadcast:") {
                    self.broadcast_message(k, message);
                }
            }
        }
    }
}

/// The hook table a node runs: chain functions first, then hooks carried by
/// a custom consensus mechanism.
pub fn hook_code<'c>(config: &'c ChainConfig, name: &str) -> Option<&'c Vec<u8>> {
    config.chain_functions.get(name).or(match &config.consensus {
        MechanismRef::Custom { hooks, .. } => hooks.get(name),
        _ => None,
    })
}

fn group_by_root(pending: &[RootInstance]) -> BTreeMap<String, Vec<RootInstance>> {
    let mut grouped: BTreeMap<String, Vec<RootInstance>> = BTreeMap::new();
    for instance in pending {
        grouped.entry(instance.root_name.clone()).or_default().push(instance.clone());
    }
    grouped
}

fn block_env(block: &Block, hash: &Hash) -> BTreeMap<String, VmValue> {
    BTreeMap::from([
        ("arg0.id".to_string(), VmValue::Int(block.height as i64)),
        ("arg0.height".to_string(), VmValue::Int(block.height as i64)),
        ("arg0.nonce".to_string(), VmValue::Bytes(block.nonce.clone())),
        (
            "arg0.creator".to_string(),
            VmValue::Bytes(block.creator.as_str().as_bytes().to_vec()),
        ),
        ("arg0.hash".to_string(), VmValue::Bytes(hash.to_hex().into_bytes())),
        ("arg1".to_string(), VmValue::Bytes(hash.to_hex().into_bytes())),
    ])
}

// --- fork choice ----------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ForkError {
    #[error("candidate does not link to any block of the local chain")]
    UnlinkableCandidate,
}

/// Longest-valid-chain rule. The candidate is a consecutive run of blocks
/// whose first block attaches to some block of the local chain. A strictly
/// longer, fully valid candidate branch wins and is adopted by replay from
/// genesis; anything else (ties, shorter branches, any invalid block)
/// keeps the local chain.
pub fn fork_choice(local: &Chain, candidate: &[Block]) -> Result<Chain, ForkError> {
    let Some(first) = candidate.first() else {
        return Ok(clone_chain(local));
    };
    let fork_idx = local
        .blocks
        .iter()
        .position(|b| b.hash(&local.config) == first.predecessor_hash)
        .ok_or(ForkError::UnlinkableCandidate)?;

    let tip_height = candidate.last().expect("non-empty").height;
    if tip_height <= local.state.head_height {
        return Ok(clone_chain(local));
    }

    let mut blocks: Vec<Block> = local.blocks[..=fork_idx].to_vec();
    blocks.extend(candidate.iter().cloned());
    match Chain::replay(local.config.clone(), blocks) {
        Ok(adopted) => Ok(adopted),
        Err(_) => Ok(clone_chain(local)),
    }
}

fn clone_chain(chain: &Chain) -> Chain {
    Chain {
        config: chain.config.clone(),
        blocks: chain.blocks.clone(),
        state: chain.state.clone(),
        graph: chain.graph.clone(),
        pending: chain.pending.clone(),
    }
}

// --- rollovers ------------------------------------------------------------------

/// Merkle root over the per-block record hashes of a chain's history. This
/// is the version commitment a successor genesis carries.
pub fn chain_version_hash(alg: HashAlg, blocks: &[Block]) -> Hash {
    let leaves: Vec<Hash> =
        blocks.iter().map(|b| digest_with(alg, &b.canonical_encode())).collect();
    MerkleTree::from_leaves(alg, leaves).root()
}

/// Same commitment computed from a persisted block file without decoding the
/// records, so it reflects the bytes actually on disk.
pub fn file_version_hash(alg: HashAlg, path: &Path) -> Result<Hash, PersistError> {
    let bytes = std::fs::read(path)?;
    let mut leaves = Vec::new();
    let mut at = 0usize;
    while at < bytes.len() {
        if at + 8 > bytes.len() {
            return Err(PersistError::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "truncated record length",
            )));
        }
        let mut len_bytes = [0u8; 8];
        len_bytes.copy_from_slice(&bytes[at..at + 8]);
        let len = u64::from_be_bytes(len_bytes) as usize;
        at += 8;
        if at + len > bytes.len() {
            return Err(PersistError::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "truncated record body",
            )));
        }
        leaves.push(digest_with(alg, &bytes[at..at + len]));
        at += len;
    }
    Ok(MerkleTree::from_leaves(alg, leaves).root())
}

/// Start a successor chain whose genesis commits to the full history of the
/// old one. The new chain begins at height 0 with empty state.
pub fn rollover_chain(
    old: &Chain,
    new_config: ChainConfig,
    creator: AccountId,
) -> Result<Chain, crate::ledger::LedgerError> {
    let version = chain_version_hash(old.config.hash_alg, &old.blocks);
    Chain::create_with_predecessor(new_config, creator, Some(version)).map(|(chain, _)| chain)
}
