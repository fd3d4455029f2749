//! Chain state machines: gendered root-instance processing, block application
//! with rewards, the smart-contract template guard, and chain persistence.
//!
//! A root instance is either female (accepts an invocation: a created output
//! or a stored contract) or male (performs one against a female partner).
//! Every state transition is atomic: an erroring instance leaves the world
//! state bit-identical, and a failing instance rejects its whole block.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read as _, Write as _};
use std::path::Path;

use thiserror::Error;

use crate::config::{
    hash_digest, AccountId, Access, ChainConfig, ChainType, ConfigViolation, Gender, Hash,
    MechanismRef, Value,
};
use crate::encoding::{decode_seq, encode_seq, Encodable, EncodingError, Reader};
use crate::graphstore::{
    GraphStore, Triple, PRED_CREATED, PRED_MINED, PRED_STORED_IN, PRED_TARGETED,
};
use crate::mechanism::Puzzle;
use crate::merkle::{self, MerkleTree};
use crate::vm::{self, Program, VmContext, VmError, VmOutcome, VmValue};

/// Reserved root name for reward outputs synthesized by block application.
/// It is not declarable, so a block-listed instance can never forge one.
pub const COINBASE_ROOT: &str = "";

// --- instance and state types ------------------------------------------------

/// Schema for an instance's `params` field, carried in `return_spec`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamsSpec {
    /// No parameters allowed.
    None,
    /// Arbitrary bytes, not interpreted.
    Opaque,
    /// Exactly this many encoded integers.
    IntArgs(u64),
    /// Encoded list of (receiver, value) outputs for a spend.
    UtxoOutputs,
}

impl ParamsSpec {
    pub fn params_conform(&self, params: &[u8]) -> bool {
        match self {
            ParamsSpec::None => params.is_empty(),
            ParamsSpec::Opaque => true,
            ParamsSpec::IntArgs(n) => Vec::<i64>::canonical_decode(params)
                .map(|v| v.len() as u64 == *n)
                .unwrap_or(false),
            ParamsSpec::UtxoOutputs => {
                Vec::<(AccountId, Value)>::canonical_decode(params).is_ok()
            }
        }
    }
}

impl Encodable for ParamsSpec {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            ParamsSpec::None => out.push(0),
            ParamsSpec::Opaque => out.push(1),
            ParamsSpec::IntArgs(n) => {
                out.push(2);
                n.encode_into(out);
            }
            ParamsSpec::UtxoOutputs => out.push(3),
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let offset = r.offset();
        match r.byte()? {
            0 => Ok(ParamsSpec::None),
            1 => Ok(ParamsSpec::Opaque),
            2 => Ok(ParamsSpec::IntArgs(u64::decode_from(r)?)),
            3 => Ok(ParamsSpec::UtxoOutputs),
            tag => Err(EncodingError::InvalidTag { what: "params spec", tag, offset }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootInstance {
    pub root_name: String,
    pub gender: Gender,
    pub access: Access,
    /// Encoded VM program.
    pub code: Vec<u8>,
    /// Encoded `ParamsSpec` describing `params`.
    pub return_spec: Vec<u8>,
    /// Declared aspect updates applied when the instance executes.
    pub aspect_writes: BTreeMap<String, i64>,
    /// Hash of the female partner; required for males, absent for females.
    pub partner_hash: Option<Hash>,
    pub sender: AccountId,
    pub originator: AccountId,
    pub value: Value,
    pub params: Vec<u8>,
    pub signature: Vec<u8>,
}

impl RootInstance {
    /// Minimal valid female of a root.
    pub fn female(root_name: impl Into<String>, sender: impl Into<String>, value: u64) -> Self {
        let sender = AccountId::new(sender);
        RootInstance {
            root_name: root_name.into(),
            gender: Gender::Female,
            access: Access::Public,
            code: Vec::new(),
            return_spec: ParamsSpec::Opaque.canonical_encode(),
            aspect_writes: BTreeMap::new(),
            partner_hash: None,
            sender: sender.clone(),
            originator: sender,
            value: Value(value),
            params: Vec::new(),
            signature: b"sig".to_vec(),
        }
    }

    /// Male spending `partner` into the given (receiver, value) outputs.
    pub fn male_spend(
        root_name: impl Into<String>,
        sender: impl Into<String>,
        partner: Hash,
        outputs: &[(&str, u64)],
    ) -> Self {
        let outs: Vec<(AccountId, Value)> = outputs
            .iter()
            .map(|(who, v)| (AccountId::new(*who), Value(*v)))
            .collect();
        let sender = AccountId::new(sender);
        RootInstance {
            root_name: root_name.into(),
            gender: Gender::Male,
            access: Access::Public,
            code: Vec::new(),
            return_spec: ParamsSpec::UtxoOutputs.canonical_encode(),
            aspect_writes: BTreeMap::new(),
            partner_hash: Some(partner),
            sender: sender.clone(),
            originator: sender,
            value: Value(0),
            params: outs.canonical_encode(),
            signature: b"sig".to_vec(),
        }
    }

    pub fn hash(&self, config: &ChainConfig) -> Hash {
        hash_digest(config, &self.canonical_encode())
    }
}

impl Encodable for RootInstance {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.root_name.encode_into(out);
        self.gender.encode_into(out);
        self.access.encode_into(out);
        self.code.encode_into(out);
        self.return_spec.encode_into(out);
        self.aspect_writes.encode_into(out);
        self.partner_hash.encode_into(out);
        self.sender.encode_into(out);
        self.originator.encode_into(out);
        self.value.encode_into(out);
        self.params.encode_into(out);
        self.signature.encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        Ok(RootInstance {
            root_name: String::decode_from(r)?,
            gender: Gender::decode_from(r)?,
            access: Access::decode_from(r)?,
            code: Vec::<u8>::decode_from(r)?,
            return_spec: Vec::<u8>::decode_from(r)?,
            aspect_writes: BTreeMap::decode_from(r)?,
            partner_hash: Option::<Hash>::decode_from(r)?,
            sender: AccountId::decode_from(r)?,
            originator: AccountId::decode_from(r)?,
            value: Value::decode_from(r)?,
            params: Vec::<u8>::decode_from(r)?,
            signature: Vec::<u8>::decode_from(r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccountState {
    pub balance: Value,
    pub stored_code: Option<Vec<u8>>,
    pub storage_root: Hash,
}

impl AccountState {
    pub fn empty() -> AccountState {
        AccountState { balance: Value(0), stored_code: None, storage_root: Hash::zero() }
    }
}

impl Encodable for AccountState {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.balance.encode_into(out);
        self.stored_code.encode_into(out);
        self.storage_root.encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        Ok(AccountState {
            balance: Value::decode_from(r)?,
            stored_code: Option::<Vec<u8>>::decode_from(r)?,
            storage_root: Hash::decode_from(r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    pub chain_type: ChainType,
    pub accounts: BTreeMap<AccountId, AccountState>,
    pub utxo_set: BTreeMap<Hash, RootInstance>,
    pub aspects: BTreeMap<(String, String), i64>,
    /// Every female hash ever registered on the chain.
    pub registered_females: BTreeSet<Hash>,
    /// Females already invoked; one male per female, ever.
    pub paired: BTreeSet<Hash>,
    /// Controller bound to each private root at first use.
    pub controllers: BTreeMap<String, AccountId>,
    pub head_hash: Hash,
    pub head_height: u64,
    pub cumulative_fees: u64,
    pub cumulative_rewards: u64,
}

impl WorldState {
    pub fn new(chain_type: ChainType) -> WorldState {
        WorldState {
            chain_type,
            accounts: BTreeMap::new(),
            utxo_set: BTreeMap::new(),
            aspects: BTreeMap::new(),
            registered_females: BTreeSet::new(),
            paired: BTreeSet::new(),
            controllers: BTreeMap::new(),
            head_hash: Hash::zero(),
            head_height: 0,
            cumulative_fees: 0,
            cumulative_rewards: 0,
        }
    }

    /// Total unspent value currently held in the UTXO set.
    pub fn utxo_total(&self) -> u64 {
        self.utxo_set.values().map(|f| f.value.amount()).sum()
    }
}

// --- blocks ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootSetEntry {
    pub root_name: String,
    pub commitment: Hash,
}

impl Encodable for RootSetEntry {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.root_name.encode_into(out);
        self.commitment.encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        Ok(RootSetEntry {
            root_name: String::decode_from(r)?,
            commitment: Hash::decode_from(r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub predecessor_hash: Hash,
    /// Virtual time units.
    pub timestamp: u64,
    pub root_set: Vec<RootSetEntry>,
    pub instances: BTreeMap<String, Vec<RootInstance>>,
    pub nonce: Vec<u8>,
    pub creator: AccountId,
    /// Link to the committed previous chain version after a rollover.
    pub predecessor_version_hash: Option<Hash>,
}

impl Block {
    /// Header bytes the mining nonce must bind to: every header field except
    /// the nonce itself.
    pub fn binder(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.height.encode_into(&mut out);
        self.predecessor_hash.encode_into(&mut out);
        self.timestamp.encode_into(&mut out);
        encode_seq(&self.root_set, &mut out);
        self.creator.encode_into(&mut out);
        self.predecessor_version_hash.encode_into(&mut out);
        out
    }

    /// Block identity: digest of binder plus nonce, so a mined block's hash
    /// itself exhibits the difficulty prefix.
    pub fn hash(&self, config: &ChainConfig) -> Hash {
        let mut preimage = self.binder();
        preimage.extend_from_slice(&self.nonce);
        hash_digest(config, &preimage)
    }
}

impl Encodable for Block {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.height.encode_into(out);
        self.predecessor_hash.encode_into(out);
        self.timestamp.encode_into(out);
        encode_seq(&self.root_set, out);
        (self.instances.len() as u64).encode_into(out);
        for (name, list) in &self.instances {
            name.encode_into(out);
            encode_seq(list, out);
        }
        self.nonce.encode_into(out);
        self.creator.encode_into(out);
        self.predecessor_version_hash.encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let height = u64::decode_from(r)?;
        let predecessor_hash = Hash::decode_from(r)?;
        let timestamp = u64::decode_from(r)?;
        let root_set = decode_seq(r)?;
        let n = r.u64_be()?;
        let mut instances = BTreeMap::new();
        for _ in 0..n {
            let name = String::decode_from(r)?;
            instances.insert(name, decode_seq(r)?);
        }
        Ok(Block {
            height,
            predecessor_hash,
            timestamp,
            root_set,
            instances,
            nonce: Vec::<u8>::decode_from(r)?,
            creator: AccountId::decode_from(r)?,
            predecessor_version_hash: Option::<Hash>::decode_from(r)?,
        })
    }
}

/// Root-set commitments for the instances a block carries.
pub fn block_root_set(
    config: &ChainConfig,
    instances: &BTreeMap<String, Vec<RootInstance>>,
) -> Result<Vec<RootSetEntry>, merkle::MerkleError> {
    let mut payloads: BTreeMap<String, Vec<Vec<u8>>> = BTreeMap::new();
    for (name, list) in instances {
        payloads.insert(
            name.clone(),
            list.iter().map(|i| i.canonical_encode()).collect(),
        );
    }
    Ok(merkle::compute_root_set(config, &payloads)?
        .into_iter()
        .map(|(root_name, commitment)| RootSetEntry { root_name, commitment })
        .collect())
}

// --- errors and outcomes ------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InstanceError {
    #[error("instance is malformed (template or signature check failed)")]
    MalformedInstance,
    #[error("no female partner found for hash {0}")]
    PartnerNotFound(Hash),
    #[error("female {0} is already paired")]
    AlreadyPaired(Hash),
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("value conservation violated: created {created} > consumed {consumed}")]
    Conservation { consumed: u64, created: u64 },
    #[error("sender is not the controller of this private root")]
    AccessDenied,
    #[error("an identical instance already exists")]
    DuplicateInstance,
    #[error(transparent)]
    Vm(#[from] VmError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecStatus {
    Ok,
    Error(InstanceError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionOutcome {
    pub new_state: WorldState,
    pub status: ExecStatus,
    pub log: Vec<u8>,
    pub steps_used: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlockError {
    #[error("predecessor hash does not match the current head")]
    BadPredecessor { expected: Hash, got: Hash },
    #[error("block height {got} does not follow head height {head}")]
    BadHeight { head: u64, got: u64 },
    #[error("root-set commitments do not match the block's instances")]
    RootSetMismatch,
    #[error("instance {index} of root `{root}` failed: {error}")]
    InstanceFailed { root: String, index: usize, error: InstanceError },
    #[error("consensus proof is invalid")]
    InvalidConsensusProof,
    #[error("block lists instances of undeclared root `{0}`")]
    UnknownRoot(String),
    #[error("genesis block does not match the chain configuration")]
    GenesisMismatch,
    #[error("reward or fee counter overflow")]
    ValueOverflow,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceReceipt {
    pub root: String,
    pub index: usize,
    pub instance_hash: Hash,
    pub log: Vec<u8>,
    pub steps_used: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockApplied {
    pub state: WorldState,
    pub graph: GraphStore,
    pub block_hash: Hash,
    pub receipts: Vec<InstanceReceipt>,
}

// --- template guard -----------------------------------------------------------

/// Structural admission check. Adding template restrictions can only shrink
/// the accepted set, never enlarge it.
pub fn template_check(config: &ChainConfig, instance: &RootInstance) -> bool {
    let root = match config.find_root(&instance.root_name) {
        Some(r) => r,
        None => return false,
    };
    if !root.instance_type.permits(instance.gender) {
        return false;
    }
    match instance.gender {
        Gender::Male if instance.partner_hash.is_none() => return false,
        Gender::Female if instance.partner_hash.is_some() => return false,
        _ => {}
    }
    let program = match Program::decode(&instance.code) {
        Ok(p) => p,
        Err(_) => return false,
    };
    if program.check_termination().is_err() {
        return false;
    }
    if program.len() as u64 > root.code_template.max_ops {
        return false;
    }
    for ins in &program.0 {
        if !root.code_template.permits_mnemonic(ins.mnemonic()) {
            return false;
        }
    }
    let spec = match ParamsSpec::canonical_decode(&instance.return_spec) {
        Ok(s) => s,
        Err(_) => return false,
    };
    if !spec.params_conform(&instance.params) {
        return false;
    }
    for aspect in instance.aspect_writes.keys() {
        match config.find_aspect(&instance.root_name, aspect) {
            Some(def) if def.mutable => {}
            _ => return false,
        }
    }
    true
}

/// Default structural signature rule; a real verifier can be swapped in via
/// `process_root_instance_with`.
pub fn default_signature_verifier(instance: &RootInstance) -> bool {
    !instance.signature.is_empty()
}

pub type SignatureVerifier = fn(&RootInstance) -> bool;

// --- instance processing ------------------------------------------------------

struct ProcessResult {
    outcome: ExecutionOutcome,
    /// Hashes and owners of synthesized output females (spends, rewards).
    created_outputs: Vec<(Hash, AccountId)>,
}

fn error_outcome(state: &WorldState, error: InstanceError) -> ProcessResult {
    ProcessResult {
        outcome: ExecutionOutcome {
            new_state: state.clone(),
            status: ExecStatus::Error(error),
            log: Vec::new(),
            steps_used: 0,
        },
        created_outputs: Vec::new(),
    }
}

/// Dispatch on gender: females register, males pair against the graph and
/// the unspent set. Never panics; errors are carried in the outcome status.
pub fn process_root_instance(
    config: &ChainConfig,
    state: &WorldState,
    graph: &GraphStore,
    instance: &RootInstance,
) -> ExecutionOutcome {
    process_root_instance_with(config, state, graph, instance, default_signature_verifier)
}

pub fn process_root_instance_with(
    config: &ChainConfig,
    state: &WorldState,
    graph: &GraphStore,
    instance: &RootInstance,
    verify_signature: SignatureVerifier,
) -> ExecutionOutcome {
    process_internal(config, state, graph, instance, verify_signature).outcome
}

fn process_internal(
    config: &ChainConfig,
    state: &WorldState,
    graph: &GraphStore,
    instance: &RootInstance,
    verify_signature: SignatureVerifier,
) -> ProcessResult {
    if !verify_signature(instance) || !template_check(config, instance) {
        return error_outcome(state, InstanceError::MalformedInstance);
    }
    if let Err(e) = check_private_access(config, state, instance) {
        return error_outcome(state, e);
    }
    match instance.gender {
        Gender::Female => execute_female_internal(config, state, instance),
        Gender::Male => {
            let partner = instance.partner_hash.expect("template guarantees presence");
            if !graph.search_contains(&partner) {
                return error_outcome(state, InstanceError::PartnerNotFound(partner));
            }
            if state.paired.contains(&partner) {
                return error_outcome(state, InstanceError::AlreadyPaired(partner));
            }
            invoke_male_internal(config, state, instance, partner)
        }
    }
}

fn check_private_access(
    config: &ChainConfig,
    state: &WorldState,
    instance: &RootInstance,
) -> Result<(), InstanceError> {
    let root = config.find_root(&instance.root_name).expect("checked by template");
    if root.access != Access::Private {
        return Ok(());
    }
    match state.controllers.get(&instance.root_name) {
        // first use binds the controller; the creating sender must speak
        // for themselves
        None if instance.sender == instance.originator => Ok(()),
        None => Err(InstanceError::AccessDenied),
        Some(controller) if *controller == instance.sender => Ok(()),
        Some(_) => Err(InstanceError::AccessDenied),
    }
}

fn record_controller(config: &ChainConfig, state: &mut WorldState, instance: &RootInstance) {
    let root = config.find_root(&instance.root_name).expect("checked by template");
    if root.access == Access::Private {
        state
            .controllers
            .entry(instance.root_name.clone())
            .or_insert_with(|| instance.sender.clone());
    }
}

/// Creation path. UTXO mode stores the female as an unspent output; account
/// mode runs its creation code once and stores the returned body.
pub fn execute_female(
    config: &ChainConfig,
    state: &WorldState,
    female: &RootInstance,
) -> ExecutionOutcome {
    if female.gender != Gender::Female || !template_check(config, female) {
        return error_outcome(state, InstanceError::MalformedInstance).outcome;
    }
    execute_female_internal(config, state, female).outcome
}

fn execute_female_internal(
    config: &ChainConfig,
    state: &WorldState,
    female: &RootInstance,
) -> ProcessResult {
    let fhash = female.hash(config);
    if state.registered_females.contains(&fhash) {
        return error_outcome(state, InstanceError::DuplicateInstance);
    }
    let mut next = state.clone();
    let mut log = Vec::new();
    let mut steps = 0;

    match state.chain_type {
        ChainType::Utxo => {
            next.utxo_set.insert(fhash, female.clone());
        }
        ChainType::Account => {
            // creation code runs exactly once; its final stack top is the
            // stored invocation body
            let program = Program::decode(&female.code).expect("template checked");
            let mut aspects = next.aspects.clone();
            let mut ctx = VmContext {
                config,
                current_root: Some(&female.root_name),
                env: instance_env(female),
                aspects: &mut aspects,
                allow_aspect_writes: true,
            };
            let run = match vm::execute(&mut ctx, &program) {
                Ok(r) => r,
                Err(e) => return error_outcome(state, InstanceError::Vm(e)),
            };
            steps = run.steps_used;
            log = run.log.clone();
            let body = match run.stack.last() {
                Some(VmValue::Bytes(b)) => b.clone(),
                _ => {
                    return error_outcome(
                        state,
                        InstanceError::Vm(VmError::TypeMismatch(program.len(), "body bytes")),
                    )
                }
            };
            next.aspects = aspects;
            let account = contract_account_id(&fhash);
            let entry = next.accounts.entry(account).or_insert_with(AccountState::empty);
            entry.stored_code = Some(body.clone());
            entry.storage_root = hash_digest(config, &body);
        }
    }
    next.registered_females.insert(fhash);
    record_controller(config, &mut next, female);
    apply_aspect_writes(&mut next, female);

    ProcessResult {
        outcome: ExecutionOutcome {
            new_state: next,
            status: ExecStatus::Ok,
            log,
            steps_used: steps,
        },
        created_outputs: Vec::new(),
    }
}

/// Account identity a stored contract lives under.
pub fn contract_account_id(female_hash: &Hash) -> AccountId {
    AccountId::new(female_hash.to_hex())
}

/// Invocation path, pairing an already-validated male with its female.
pub fn invoke_male(
    config: &ChainConfig,
    state: &WorldState,
    male: &RootInstance,
    female: &RootInstance,
) -> ExecutionOutcome {
    invoke_male_internal(config, state, male, female.hash(config)).outcome
}

fn invoke_male_internal(
    config: &ChainConfig,
    state: &WorldState,
    male: &RootInstance,
    partner: Hash,
) -> ProcessResult {
    match state.chain_type {
        ChainType::Utxo => utxo_spend(config, state, male, partner),
        ChainType::Account => account_invoke(config, state, male, partner),
    }
}

fn utxo_spend(
    config: &ChainConfig,
    state: &WorldState,
    male: &RootInstance,
    partner: Hash,
) -> ProcessResult {
    let female = match state.utxo_set.get(&partner) {
        Some(f) => f.clone(),
        None => return error_outcome(state, InstanceError::AlreadyPaired(partner)),
    };
    let outputs = match Vec::<(AccountId, Value)>::canonical_decode(&male.params) {
        Ok(o) => o,
        Err(e) => {
            return error_outcome(state, InstanceError::InvalidParams(e.to_string()))
        }
    };
    let consumed = female.value.amount();
    let created: u64 = outputs.iter().map(|(_, v)| v.amount()).sum();
    if !validate_utxo_spend(&[female.value], &outputs.iter().map(|(_, v)| *v).collect::<Vec<_>>())
    {
        return error_outcome(state, InstanceError::Conservation { consumed, created });
    }

    let mut next = state.clone();
    next.utxo_set.remove(&partner);
    next.paired.insert(partner);
    let male_hash = male.hash(config);
    let mut created_outputs = Vec::new();
    for (idx, (receiver, value)) in outputs.iter().enumerate() {
        let out = synthesized_output(male, male_hash, idx as u64, receiver, *value);
        let ohash = out.hash(config);
        next.registered_females.insert(ohash);
        next.utxo_set.insert(ohash, out);
        created_outputs.push((ohash, receiver.clone()));
    }
    next.cumulative_fees += consumed - created;
    record_controller(config, &mut next, male);
    apply_aspect_writes(&mut next, male);

    ProcessResult {
        outcome: ExecutionOutcome {
            new_state: next,
            status: ExecStatus::Ok,
            log: Vec::new(),
            steps_used: 0,
        },
        created_outputs,
    }
}

/// Output female synthesized by a spend; params embed the spender hash and
/// output index so every output hashes uniquely.
fn synthesized_output(
    male: &RootInstance,
    male_hash: Hash,
    index: u64,
    receiver: &AccountId,
    value: Value,
) -> RootInstance {
    let mut params = Vec::new();
    male_hash.encode_into(&mut params);
    index.encode_into(&mut params);
    RootInstance {
        root_name: male.root_name.clone(),
        gender: Gender::Female,
        access: Access::Public,
        code: Vec::new(),
        return_spec: ParamsSpec::Opaque.canonical_encode(),
        aspect_writes: BTreeMap::new(),
        partner_hash: None,
        sender: receiver.clone(),
        originator: male.sender.clone(),
        value,
        params,
        signature: b"output".to_vec(),
    }
}

fn account_invoke(
    config: &ChainConfig,
    state: &WorldState,
    male: &RootInstance,
    partner: Hash,
) -> ProcessResult {
    let account = contract_account_id(&partner);
    let body_bytes = match state.accounts.get(&account).and_then(|a| a.stored_code.clone()) {
        Some(b) => b,
        None => return error_outcome(state, InstanceError::PartnerNotFound(partner)),
    };
    let body = match Program::decode(&body_bytes) {
        Ok(p) => p,
        Err(e) => return error_outcome(state, InstanceError::Vm(e)),
    };
    let args = match ParamsSpec::canonical_decode(&male.return_spec) {
        Ok(ParamsSpec::IntArgs(_)) => match Vec::<i64>::canonical_decode(&male.params) {
            Ok(v) => v,
            Err(e) => return error_outcome(state, InstanceError::InvalidParams(e.to_string())),
        },
        Ok(_) => Vec::new(),
        Err(e) => return error_outcome(state, InstanceError::InvalidParams(e.to_string())),
    };

    let mut next = state.clone();
    let mut aspects = next.aspects.clone();
    let mut ctx = VmContext {
        config,
        current_root: Some(&male.root_name),
        env: instance_env(male),
        aspects: &mut aspects,
        allow_aspect_writes: true,
    };
    // arguments are pre-pushed so the body finds them on its stack
    let mut program = Program(
        args.iter()
            .map(|&a| vm::Instruction::Push(vm::Operand::Int(a)))
            .collect(),
    );
    program.0.extend(body.0.iter().cloned());
    let run = match vm::execute(&mut ctx, &program) {
        Ok(r) => r,
        Err(e) => return error_outcome(state, InstanceError::Vm(e)),
    };
    next.aspects = aspects;

    // receipt: whatever the body logged, then its final stack value
    let mut log = run.log.clone();
    if let Some(top) = run.stack.last() {
        top.encode_into(&mut log);
    }
    next.paired.insert(partner);
    record_controller(config, &mut next, male);
    apply_aspect_writes(&mut next, male);

    ProcessResult {
        outcome: ExecutionOutcome {
            new_state: next,
            status: ExecStatus::Ok,
            log,
            steps_used: run.steps_used,
        },
        created_outputs: Vec::new(),
    }
}

fn apply_aspect_writes(state: &mut WorldState, instance: &RootInstance) {
    for (aspect, value) in &instance.aspect_writes {
        state
            .aspects
            .insert((instance.root_name.clone(), aspect.clone()), *value);
    }
}

fn instance_env(instance: &RootInstance) -> BTreeMap<String, VmValue> {
    let mut env = BTreeMap::new();
    env.insert(
        "sender".to_string(),
        VmValue::Bytes(instance.sender.as_str().as_bytes().to_vec()),
    );
    env.insert(
        "origin".to_string(),
        VmValue::Bytes(instance.originator.as_str().as_bytes().to_vec()),
    );
    env.insert(
        "value".to_string(),
        VmValue::Int(i64::try_from(instance.value.amount()).unwrap_or(i64::MAX)),
    );
    env
}

/// Spend feasibility: outputs may never exceed inputs; any surplus is the
/// implicit fee.
pub fn validate_utxo_spend(consumed: &[Value], created: &[Value]) -> bool {
    let total_in: u64 = consumed.iter().map(|v| v.amount()).sum();
    let total_out: u64 = created.iter().map(|v| v.amount()).sum();
    total_out <= total_in
}

// --- block application --------------------------------------------------------

/// Apply a block: verify linkage, commitments and the consensus proof, fold
/// every instance in root declaration order, then credit the reward. Returns
/// the post-state and post-graph; the inputs are untouched on error.
pub fn apply_block(
    config: &ChainConfig,
    state: &WorldState,
    graph: &GraphStore,
    block: &Block,
) -> Result<BlockApplied, BlockError> {
    apply_block_inner(config, state, graph, block, true)
}

fn apply_block_inner(
    config: &ChainConfig,
    state: &WorldState,
    graph: &GraphStore,
    block: &Block,
    verify_consensus: bool,
) -> Result<BlockApplied, BlockError> {
    if block.predecessor_hash != state.head_hash {
        return Err(BlockError::BadPredecessor {
            expected: state.head_hash,
            got: block.predecessor_hash,
        });
    }
    if block.height != state.head_height + 1 {
        return Err(BlockError::BadHeight { head: state.head_height, got: block.height });
    }
    let expected_root_set = block_root_set(config, &block.instances).map_err(|e| match e {
        merkle::MerkleError::UnknownRoot(name) => BlockError::UnknownRoot(name),
        _ => BlockError::RootSetMismatch,
    })?;
    if expected_root_set != block.root_set {
        return Err(BlockError::RootSetMismatch);
    }
    if verify_consensus {
        check_consensus(config, block)?;
    }

    let mut working = state.clone();
    let mut wgraph = graph.clone();
    let mut receipts = Vec::new();
    let height_text = block.height.to_string().into_bytes();

    for root in &config.roots {
        let Some(list) = block.instances.get(&root.name) else { continue };
        for (index, instance) in list.iter().enumerate() {
            let result = process_internal(
                config,
                &working,
                &wgraph,
                instance,
                default_signature_verifier,
            );
            match result.outcome.status {
                ExecStatus::Ok => {
                    working = result.outcome.new_state;
                    let ihash = instance.hash(config);
                    insert_instance_triples(
                        &mut wgraph,
                        &instance.sender,
                        ihash,
                        instance.partner_hash,
                        &height_text,
                    );
                    for (ohash, _) in &result.created_outputs {
                        insert_instance_triples(
                            &mut wgraph,
                            &instance.sender,
                            *ohash,
                            None,
                            &height_text,
                        );
                    }
                    receipts.push(InstanceReceipt {
                        root: root.name.clone(),
                        index,
                        instance_hash: ihash,
                        log: result.outcome.log,
                        steps_used: result.outcome.steps_used,
                    });
                }
                ExecStatus::Error(error) => {
                    return Err(BlockError::InstanceFailed {
                        root: root.name.clone(),
                        index,
                        error,
                    });
                }
            }
        }
    }

    credit_reward(config, &mut working, block, &mut wgraph, &height_text)?;
    wgraph
        .insert(&Triple::new(
            block.creator.as_str().as_bytes().to_vec(),
            PRED_MINED,
            height_text.clone(),
        ))
        .expect("components non-empty");

    let block_hash = block.hash(config);
    working.head_hash = block_hash;
    working.head_height = block.height;

    Ok(BlockApplied { state: working, graph: wgraph, block_hash, receipts })
}

fn insert_instance_triples(
    graph: &mut GraphStore,
    sender: &AccountId,
    instance_hash: Hash,
    partner: Option<Hash>,
    height_text: &[u8],
) {
    let sender_bytes = sender.as_str().as_bytes().to_vec();
    graph
        .insert(&Triple::new(
            sender_bytes.clone(),
            PRED_CREATED,
            instance_hash.as_bytes().to_vec(),
        ))
        .expect("components non-empty");
    if let Some(p) = partner {
        graph
            .insert(&Triple::new(
                sender_bytes,
                PRED_TARGETED,
                p.as_bytes().to_vec(),
            ))
            .expect("components non-empty");
    }
    graph
        .insert(&Triple::new(
            instance_hash.as_bytes().to_vec(),
            PRED_STORED_IN,
            height_text.to_vec(),
        ))
        .expect("components non-empty");
}

/// Reward rule: a positive block reward mints a spendable coinbase output
/// (UTXO) or credits the creator's balance (accounts); a zero reward instead
/// increments the creator's privilege aspect.
fn credit_reward(
    config: &ChainConfig,
    state: &mut WorldState,
    block: &Block,
    graph: &mut GraphStore,
    height_text: &[u8],
) -> Result<(), BlockError> {
    let reward = config.block_reward;
    if reward.is_zero() {
        let key = (COINBASE_ROOT.to_string(), format!("privilege:{}", block.creator));
        *state.aspects.entry(key).or_insert(0) += 1;
        return Ok(());
    }
    state.cumulative_rewards = state
        .cumulative_rewards
        .checked_add(reward.amount())
        .ok_or(BlockError::ValueOverflow)?;
    match state.chain_type {
        ChainType::Utxo => {
            let coinbase = coinbase_instance(block.height, &block.creator, reward);
            let chash = coinbase.hash(config);
            state.registered_females.insert(chash);
            state.utxo_set.insert(chash, coinbase);
            insert_instance_triples(graph, &block.creator, chash, None, height_text);
        }
        ChainType::Account => {
            let entry = state
                .accounts
                .entry(block.creator.clone())
                .or_insert_with(AccountState::empty);
            entry.balance = entry
                .balance
                .checked_add(reward)
                .ok_or(BlockError::ValueOverflow)?;
        }
    }
    Ok(())
}

fn coinbase_instance(height: u64, creator: &AccountId, reward: Value) -> RootInstance {
    let mut params = Vec::new();
    height.encode_into(&mut params);
    creator.encode_into(&mut params);
    RootInstance {
        root_name: COINBASE_ROOT.to_string(),
        gender: Gender::Female,
        access: Access::Public,
        code: Vec::new(),
        return_spec: ParamsSpec::Opaque.canonical_encode(),
        aspect_writes: BTreeMap::new(),
        partner_hash: None,
        sender: creator.clone(),
        originator: creator.clone(),
        value: reward,
        params,
        signature: b"coinbase".to_vec(),
    }
}

fn check_consensus(config: &ChainConfig, block: &Block) -> Result<(), BlockError> {
    match &config.consensus {
        MechanismRef::ProofOfWork { difficulty } => {
            let puzzle = Puzzle::new(*difficulty, block.binder())
                .map_err(|_| BlockError::InvalidConsensusProof)?;
            if puzzle.check(config.hash_alg, &block.nonce) {
                Ok(())
            } else {
                Err(BlockError::InvalidConsensusProof)
            }
        }
        MechanismRef::Custom { hooks, .. } => {
            // a custom mechanism accepts a block when its Execute hook runs
            // cleanly (or when it defines no Execute hook at all)
            if let Some(code) = hooks.get("Execute") {
                let program =
                    Program::decode(code).map_err(|_| BlockError::InvalidConsensusProof)?;
                let mut aspects = BTreeMap::new();
                let mut ctx = VmContext {
                    config,
                    current_root: None,
                    env: BTreeMap::new(),
                    aspects: &mut aspects,
                    allow_aspect_writes: false,
                };
                vm::execute(&mut ctx, &program)
                    .map_err(|_| BlockError::InvalidConsensusProof)?;
            }
            Ok(())
        }
    }
}

/// Triples for a block's listed instances plus its miner record, without
/// executing anything. Block application inserts the same triples (and those
/// of synthesized outputs) incrementally as instances succeed.
pub fn ingest_block(
    graph: &mut GraphStore,
    config: &ChainConfig,
    block: &Block,
    miner: &AccountId,
) {
    let height_text = block.height.to_string().into_bytes();
    for root in &config.roots {
        let Some(list) = block.instances.get(&root.name) else { continue };
        for instance in list {
            insert_instance_triples(
                graph,
                &instance.sender,
                instance.hash(config),
                instance.partner_hash,
                &height_text,
            );
        }
    }
    graph
        .insert(&Triple::new(
            miner.as_str().as_bytes().to_vec(),
            PRED_MINED,
            height_text,
        ))
        .expect("components non-empty");
}

// --- account commitment -------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("operation requires an account-based chain")]
    WrongChainType,
    #[error("configuration is invalid")]
    InvalidConfig(Vec<ConfigViolation>),
}

/// Merkle commitment over the account map: leaves are
/// `hash(account id) ∥ encode(account state)` ordered by hashed key.
pub fn account_commitment(config: &ChainConfig, state: &WorldState) -> Result<Hash, LedgerError> {
    if state.chain_type != ChainType::Account {
        return Err(LedgerError::WrongChainType);
    }
    let mut leaves: Vec<(Hash, Vec<u8>)> = state
        .accounts
        .iter()
        .map(|(id, acct)| {
            let key = hash_digest(config, id.as_str().as_bytes());
            let mut payload = key.as_bytes().to_vec();
            payload.extend_from_slice(&acct.canonical_encode());
            (key, payload)
        })
        .collect();
    leaves.sort_by_key(|(key, _)| *key);
    let payloads: Vec<Vec<u8>> = leaves.into_iter().map(|(_, p)| p).collect();
    Ok(MerkleTree::from_payloads(config.hash_alg, &payloads).root())
}

// --- chain -------------------------------------------------------------------

/// A chain bundles its configuration, block list, world state and graph
/// index. All four evolve together under `append_block`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    pub config: ChainConfig,
    pub blocks: Vec<Block>,
    pub state: WorldState,
    pub graph: GraphStore,
    /// Instances submitted but not yet mined into a block.
    pub pending: Vec<RootInstance>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MineError {
    #[error("candidate block is invalid: {0}")]
    Apply(#[from] BlockError),
    #[error("no nonce found within {tried} attempts")]
    NoNonceFound { tried: u64 },
    #[error("difficulty out of range")]
    BadDifficulty,
}

impl Chain {
    /// Validate the config, build the genesis block (whose nonce carries the
    /// canonical config so the file format is self-describing), and run the
    /// OnCreate hook once.
    pub fn create(
        config: ChainConfig,
        creator: AccountId,
    ) -> Result<(Chain, Option<VmOutcome>), LedgerError> {
        Chain::create_with_predecessor(config, creator, None)
    }

    /// Like [`Chain::create`], but the genesis additionally commits to a
    /// predecessor version of the chain (see rollovers).
    pub fn create_with_predecessor(
        config: ChainConfig,
        creator: AccountId,
        predecessor_version_hash: Option<Hash>,
    ) -> Result<(Chain, Option<VmOutcome>), LedgerError> {
        let violations = config.validate();
        if !violations.is_empty() {
            return Err(LedgerError::InvalidConfig(violations));
        }
        let root_set = block_root_set(&config, &BTreeMap::new()).expect("no undeclared roots");
        let genesis = Block {
            height: 0,
            predecessor_hash: Hash::zero(),
            timestamp: 0,
            root_set,
            instances: BTreeMap::new(),
            nonce: config.canonical_encode(),
            creator: creator.clone(),
            predecessor_version_hash,
        };
        let mut state = WorldState::new(config.chain_type);
        state.head_hash = genesis.hash(&config);
        state.head_height = 0;
        let mut graph = GraphStore::new();
        graph
            .insert(&Triple::new(
                creator.as_str().as_bytes().to_vec(),
                PRED_MINED,
                b"0".to_vec(),
            ))
            .expect("components non-empty");

        let chain = Chain { config, blocks: vec![genesis], state, graph, pending: Vec::new() };
        let hook = chain.run_chain_hook("OnCreate", BTreeMap::new()).map(|r| match r {
            Ok(out) => out,
            Err(_) => VmOutcome { stack: Vec::new(), log: Vec::new(), steps_used: 0 },
        });
        Ok((chain, hook))
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("a chain always has genesis")
    }

    pub fn head_hash(&self) -> Hash {
        self.state.head_hash
    }

    /// Run a lifecycle hook in an effects-only sandbox (no aspect writes).
    /// `None` when the chain does not define the hook.
    pub fn run_chain_hook(
        &self,
        hook: &str,
        env: BTreeMap<String, VmValue>,
    ) -> Option<Result<VmOutcome, VmError>> {
        let code = self.config.chain_functions.get(hook)?;
        let program = match Program::decode(code) {
            Ok(p) => p,
            Err(e) => return Some(Err(e)),
        };
        let mut aspects = self.state.aspects.clone();
        let mut ctx = VmContext {
            config: &self.config,
            current_root: None,
            env,
            aspects: &mut aspects,
            allow_aspect_writes: false,
        };
        Some(vm::execute(&mut ctx, &program))
    }

    pub fn append_block(&mut self, block: Block) -> Result<BlockApplied, BlockError> {
        let applied = apply_block(&self.config, &self.state, &self.graph, &block)?;
        self.state = applied.state.clone();
        self.graph = applied.graph.clone();
        if !self.pending.is_empty() {
            let mined: BTreeSet<Hash> = block
                .instances
                .values()
                .flatten()
                .map(|i| i.hash(&self.config))
                .collect();
            self.pending.retain(|i| !mined.contains(&i.hash(&self.config)));
        }
        self.blocks.push(block);
        Ok(applied)
    }

    /// Add an instance to the pending pool and return its hash.
    pub fn submit(&mut self, instance: RootInstance) -> Hash {
        let h = instance.hash(&self.config);
        self.pending.push(instance);
        h
    }

    /// Drain the pending pool, grouped by root name for block assembly.
    pub fn take_pending(&mut self) -> BTreeMap<String, Vec<RootInstance>> {
        let mut grouped: BTreeMap<String, Vec<RootInstance>> = BTreeMap::new();
        for instance in self.pending.drain(..) {
            grouped.entry(instance.root_name.clone()).or_default().push(instance);
        }
        grouped
    }

    /// Build, validate and mine the next block over the given instances.
    pub fn mine_block(
        &self,
        creator: AccountId,
        instances: BTreeMap<String, Vec<RootInstance>>,
        timestamp: u64,
        max_tries: u64,
    ) -> Result<Block, MineError> {
        let root_set = block_root_set(&self.config, &instances).map_err(|e| match e {
            merkle::MerkleError::UnknownRoot(name) => BlockError::UnknownRoot(name),
            _ => BlockError::RootSetMismatch,
        })?;
        let mut block = Block {
            height: self.state.head_height + 1,
            predecessor_hash: self.state.head_hash,
            timestamp,
            root_set,
            instances,
            nonce: Vec::new(),
            creator,
            predecessor_version_hash: None,
        };
        // reject doomed candidates before burning hash work
        apply_block_inner(&self.config, &self.state, &self.graph, &block, false)?;

        match &self.config.consensus {
            MechanismRef::ProofOfWork { difficulty } => {
                let puzzle = Puzzle::new(*difficulty, block.binder())
                    .map_err(|_| MineError::BadDifficulty)?;
                let (_, nonce, _) = puzzle
                    .mine(self.config.hash_alg, 0, max_tries)
                    .ok_or(MineError::NoNonceFound { tried: max_tries })?;
                block.nonce = nonce;
            }
            MechanismRef::Custom { .. } => {
                block.nonce = b"custom".to_vec();
            }
        }
        Ok(block)
    }

    /// Rebuild a chain from its configuration and block records, verifying
    /// every block. The result is bit-identical to the original evolution.
    pub fn replay(config: ChainConfig, blocks: Vec<Block>) -> Result<Chain, BlockError> {
        let mut iter = blocks.into_iter();
        let genesis = iter.next().ok_or(BlockError::GenesisMismatch)?;
        if genesis.height != 0
            || !genesis.predecessor_hash.is_zero()
            || !genesis.instances.is_empty()
            || genesis.nonce != config.canonical_encode()
        {
            return Err(BlockError::GenesisMismatch);
        }
        let expected_root_set =
            block_root_set(&config, &BTreeMap::new()).expect("no undeclared roots");
        if genesis.root_set != expected_root_set {
            return Err(BlockError::GenesisMismatch);
        }
        let mut state = WorldState::new(config.chain_type);
        state.head_hash = genesis.hash(&config);
        let mut graph = GraphStore::new();
        graph
            .insert(&Triple::new(
                genesis.creator.as_str().as_bytes().to_vec(),
                PRED_MINED,
                b"0".to_vec(),
            ))
            .expect("components non-empty");
        let mut chain = Chain { config, blocks: vec![genesis], state, graph, pending: Vec::new() };
        for block in iter {
            chain.append_block(block)?;
        }
        Ok(chain)
    }
}

// --- persistence --------------------------------------------------------------

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt block record: {0}")]
    Encoding(#[from] EncodingError),
}

/// Write the append-only block file: each record is a length-prefixed
/// canonical block encoding.
pub fn write_blocks_file(path: &Path, blocks: &[Block]) -> Result<(), PersistError> {
    let mut file = std::fs::File::create(path)?;
    for block in blocks {
        let bytes = block.canonical_encode();
        file.write_all(&(bytes.len() as u64).to_be_bytes())?;
        file.write_all(&bytes)?;
    }
    Ok(())
}

pub fn append_block_record(path: &Path, block: &Block) -> Result<(), PersistError> {
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let bytes = block.canonical_encode();
    file.write_all(&(bytes.len() as u64).to_be_bytes())?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_blocks_file(path: &Path) -> Result<Vec<Block>, PersistError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut blocks = Vec::new();
    let mut rest = &buf[..];
    while !rest.is_empty() {
        if rest.len() < 8 {
            return Err(EncodingError::Truncated(buf.len() - rest.len()).into());
        }
        let (len_bytes, tail) = rest.split_at(8);
        let len = u64::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        if tail.len() < len {
            return Err(EncodingError::BadLength(len as u64).into());
        }
        let (record, tail) = tail.split_at(len);
        blocks.push(Block::canonical_decode(record)?);
        rest = tail;
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::test_support::minimal_config;
    use crate::config::{HashAlg, InstanceKind, RootDef};
    use crate::vm::{Instruction, Operand};

    fn utxo_chain() -> Chain {
        let mut config = minimal_config();
        config.consensus = MechanismRef::ProofOfWork { difficulty: 0 };
        Chain::create(config, AccountId::new("miner")).unwrap().0
    }

    fn account_chain() -> Chain {
        let mut config = minimal_config();
        config.chain_type = ChainType::Account;
        config.consensus = MechanismRef::ProofOfWork { difficulty: 0 };
        Chain::create(config, AccountId::new("miner")).unwrap().0
    }

    fn mine_and_append(
        chain: &mut Chain,
        instances: BTreeMap<String, Vec<RootInstance>>,
    ) -> BlockApplied {
        let block = chain
            .mine_block(
                AccountId::new("miner"),
                instances,
                chain.state.head_height + 1,
                1_000_000,
            )
            .unwrap();
        chain.append_block(block).unwrap()
    }

    fn single(root: &str, instance: RootInstance) -> BTreeMap<String, Vec<RootInstance>> {
        [(root.to_string(), vec![instance])].into()
    }

    #[test]
    fn undeclared_root_fails_template_check() {
        let config = minimal_config();
        let rogue = RootInstance::female("rogue", "alice", 1);
        assert!(!template_check(&config, &rogue));
    }

    #[test]
    fn template_respects_gender_permissions() {
        let mut config = minimal_config();
        config.roots[0].instance_type = InstanceKind::FemaleOnly;
        let f = RootInstance::female("asset", "alice", 1);
        assert!(template_check(&config, &f));
        let m = RootInstance::male_spend("asset", "alice", Hash::zero(), &[]);
        assert!(!template_check(&config, &m));
    }

    #[test]
    fn template_enforces_code_allow_list() {
        let mut config = minimal_config();
        config.roots[0].code_template.allowed = vec!["PUSH".into(), "LOG".into()];
        let mut f = RootInstance::female("asset", "alice", 1);
        f.code = Program(vec![
            Instruction::Push(Operand::Int(1)),
            Instruction::Log,
        ])
        .encode();
        assert!(template_check(&config, &f));
        f.code = Program(vec![
            Instruction::Push(Operand::Int(1)),
            Instruction::Pop,
        ])
        .encode();
        assert!(!template_check(&config, &f));
    }

    #[test]
    fn restricting_templates_never_admits_more() {
        // corpus of instances with varied opcodes and params
        let mut corpus = Vec::new();
        for i in 0..60u64 {
            let mut f = RootInstance::female("asset", "alice", i);
            let mut ops = Vec::new();
            if i % 2 == 0 {
                ops.push(Instruction::Push(Operand::Int(i as i64)));
            }
            if i % 3 == 0 {
                ops.push(Instruction::Log);
            }
            if i % 5 == 0 {
                ops.push(Instruction::Pop);
            }
            f.code = Program(ops).encode();
            corpus.push(f);
        }
        let unrestricted = minimal_config();
        let mut narrow = minimal_config();
        narrow.roots[0].code_template.allowed = vec!["PUSH".into(), "LOG".into()];
        let mut narrower = minimal_config();
        narrower.roots[0].code_template.allowed = vec!["PUSH".into()];

        let count = |cfg: &ChainConfig| {
            corpus.iter().filter(|i| template_check(cfg, i)).count()
        };
        assert!(count(&narrower) <= count(&narrow));
        assert!(count(&narrow) <= count(&unrestricted));
    }

    #[test]
    fn female_creation_registers_utxo() {
        let chain = utxo_chain();
        let f = RootInstance::female("asset", "alice", 10);
        let fh = f.hash(&chain.config);
        let out = process_root_instance(&chain.config, &chain.state, &chain.graph, &f);
        assert_eq!(out.status, ExecStatus::Ok);
        assert_eq!(out.new_state.utxo_set.get(&fh).unwrap().value, Value(10));
    }

    #[test]
    fn male_without_known_partner_errors_and_preserves_state() {
        let chain = utxo_chain();
        let ghost = hash_digest(&chain.config, b"nothing");
        let m = RootInstance::male_spend("asset", "bob", ghost, &[("bob", 1)]);
        let out = process_root_instance(&chain.config, &chain.state, &chain.graph, &m);
        assert_eq!(out.status, ExecStatus::Error(InstanceError::PartnerNotFound(ghost)));
        assert_eq!(out.new_state, chain.state);
    }

    #[test]
    fn second_male_on_same_female_is_rejected() {
        let mut chain = utxo_chain();
        let f = RootInstance::female("asset", "alice", 10);
        let fh = f.hash(&chain.config);
        mine_and_append(&mut chain, single("asset", f));

        let m1 = RootInstance::male_spend("asset", "alice", fh, &[("bob", 10)]);
        let out1 = process_root_instance(&chain.config, &chain.state, &chain.graph, &m1);
        assert_eq!(out1.status, ExecStatus::Ok);

        let m2 = RootInstance::male_spend("asset", "carol", fh, &[("carol", 5)]);
        let out2 = process_root_instance(&chain.config, &out1.new_state, &chain.graph, &m2);
        assert_eq!(out2.status, ExecStatus::Error(InstanceError::AlreadyPaired(fh)));
        assert_eq!(out2.new_state, out1.new_state);
    }

    #[test]
    fn utxo_spend_conserves_value() {
        let mut chain = utxo_chain();
        let f = RootInstance::female("asset", "alice", 10);
        let fh = f.hash(&chain.config);
        mine_and_append(&mut chain, single("asset", f));
        let before = chain.state.utxo_set.len();

        let ok = RootInstance::male_spend("asset", "alice", fh, &[("bob", 6), ("carol", 4)]);
        let out = process_root_instance(&chain.config, &chain.state, &chain.graph, &ok);
        assert_eq!(out.status, ExecStatus::Ok);
        assert_eq!(out.new_state.utxo_set.len(), before - 1 + 2);

        let bad = RootInstance::male_spend("asset", "alice", fh, &[("bob", 6), ("carol", 5)]);
        let out = process_root_instance(&chain.config, &chain.state, &chain.graph, &bad);
        assert_eq!(
            out.status,
            ExecStatus::Error(InstanceError::Conservation { consumed: 10, created: 11 })
        );
    }

    #[test]
    fn spend_surplus_is_accounted_as_fee() {
        let mut chain = utxo_chain();
        let f = RootInstance::female("asset", "alice", 10);
        let fh = f.hash(&chain.config);
        mine_and_append(&mut chain, single("asset", f));
        let m = RootInstance::male_spend("asset", "alice", fh, &[("bob", 7), ("carol", 2)]);
        let out = process_root_instance(&chain.config, &chain.state, &chain.graph, &m);
        assert_eq!(out.status, ExecStatus::Ok);
        assert_eq!(out.new_state.cumulative_fees, chain.state.cumulative_fees + 1);
    }

    #[test]
    fn validate_utxo_spend_cases() {
        assert!(validate_utxo_spend(&[Value(10)], &[Value(10)]));
        assert!(validate_utxo_spend(&[Value(10)], &[Value(7), Value(2)]));
        assert!(!validate_utxo_spend(&[Value(5), Value(5)], &[Value(11)]));
    }

    #[test]
    fn account_female_stores_returned_body() {
        let chain = account_chain();
        let body = Program(vec![Instruction::Push(Operand::Int(1)), Instruction::Add]).encode();
        let mut f = RootInstance::female("asset", "alice", 0);
        f.code = Program(vec![Instruction::Push(Operand::Bytes(body.clone()))]).encode();
        let fh = f.hash(&chain.config);
        let out = process_root_instance(&chain.config, &chain.state, &chain.graph, &f);
        assert_eq!(out.status, ExecStatus::Ok);
        let acct = out.new_state.accounts.get(&contract_account_id(&fh)).unwrap();
        assert_eq!(acct.stored_code.as_deref(), Some(&body[..]));
        assert_eq!(acct.storage_root, hash_digest(&chain.config, &body));
    }

    #[test]
    fn creation_code_over_budget_rolls_back() {
        let mut chain = account_chain();
        chain.config.compute_budget = 2;
        let mut f = RootInstance::female("asset", "alice", 0);
        f.code = Program(vec![
            Instruction::Push(Operand::Int(1)),
            Instruction::Push(Operand::Int(2)),
            Instruction::Push(Operand::Bytes(Vec::new())),
        ])
        .encode();
        let out = process_root_instance(&chain.config, &chain.state, &chain.graph, &f);
        assert_eq!(
            out.status,
            ExecStatus::Error(InstanceError::Vm(VmError::BudgetExhausted(2)))
        );
        assert_eq!(out.new_state, chain.state);
    }

    #[test]
    fn account_invocation_runs_stored_body_with_params() {
        let mut chain = account_chain();
        let body = Program(vec![Instruction::Push(Operand::Int(1)), Instruction::Add]).encode();
        let mut f = RootInstance::female("asset", "alice", 0);
        f.code = Program(vec![Instruction::Push(Operand::Bytes(body))]).encode();
        let fh = f.hash(&chain.config);
        mine_and_append(&mut chain, single("asset", f));

        let mut m = RootInstance::male_spend("asset", "bob", fh, &[]);
        m.return_spec = ParamsSpec::IntArgs(1).canonical_encode();
        m.params = vec![41i64].canonical_encode();
        let out = process_root_instance(&chain.config, &chain.state, &chain.graph, &m);
        assert_eq!(out.status, ExecStatus::Ok);
        let mut expected = Vec::new();
        VmValue::Int(42).encode_into(&mut expected);
        assert_eq!(out.log, expected);
    }

    #[test]
    fn empty_block_changes_state_by_reward_only() {
        let mut chain = utxo_chain();
        let before = chain.state.clone();
        mine_and_append(&mut chain, BTreeMap::new());
        let after = &chain.state;
        assert_eq!(after.utxo_total(), before.utxo_total() + 50);
        assert_eq!(after.cumulative_rewards, before.cumulative_rewards + 50);
        assert_eq!(after.cumulative_fees, before.cumulative_fees);
        assert_eq!(after.head_height, before.head_height + 1);
    }

    #[test]
    fn tampered_root_set_is_rejected() {
        let chain = utxo_chain();
        let mut block = chain
            .mine_block(
                AccountId::new("miner"),
                single("asset", RootInstance::female("asset", "alice", 3)),
                1,
                1_000_000,
            )
            .unwrap();
        block.root_set[0].commitment.0[0] ^= 1;
        assert_eq!(
            apply_block(&chain.config, &chain.state, &chain.graph, &block),
            Err(BlockError::RootSetMismatch)
        );
    }

    #[test]
    fn same_block_pair_matches_sequential_fold() {
        let mut chain = utxo_chain();
        let f = RootInstance::female("asset", "alice", 10);
        let fh = f.hash(&chain.config);
        let m = RootInstance::male_spend("asset", "alice", fh, &[("bob", 6), ("carol", 4)]);

        // oracle: fold the two instances by hand over a scratch state
        let out_f = process_root_instance(&chain.config, &chain.state, &chain.graph, &f);
        assert_eq!(out_f.status, ExecStatus::Ok);
        let mut scratch_graph = chain.graph.clone();
        insert_instance_triples(
            &mut scratch_graph,
            &f.sender,
            fh,
            None,
            b"1",
        );
        let out_m =
            process_root_instance(&chain.config, &out_f.new_state, &scratch_graph, &m);
        assert_eq!(out_m.status, ExecStatus::Ok);
        let mut expected_utxos = out_m.new_state.utxo_set.clone();

        let applied = mine_and_append(
            &mut chain,
            [(String::from("asset"), vec![f, m])].into(),
        );
        // the reward coinbase is the only difference from the hand fold
        let coinbase_hash = applied
            .state
            .utxo_set
            .keys()
            .find(|k| !expected_utxos.contains_key(k))
            .copied()
            .unwrap();
        expected_utxos.insert(
            coinbase_hash,
            applied.state.utxo_set.get(&coinbase_hash).unwrap().clone(),
        );
        assert_eq!(applied.state.utxo_set, expected_utxos);
    }

    #[test]
    fn failing_instance_rejects_the_whole_block() {
        let chain = utxo_chain();
        let ghost = hash_digest(&chain.config, b"ghost");
        let f = RootInstance::female("asset", "alice", 5);
        let bad = RootInstance::male_spend("asset", "bob", ghost, &[("bob", 1)]);
        let instances: BTreeMap<String, Vec<RootInstance>> =
            [(String::from("asset"), vec![f, bad])].into();
        let root_set = block_root_set(&chain.config, &instances).unwrap();
        let block = Block {
            height: 1,
            predecessor_hash: chain.state.head_hash,
            timestamp: 1,
            root_set,
            instances,
            nonce: 0u64.canonical_encode(),
            creator: AccountId::new("miner"),
            predecessor_version_hash: None,
        };
        let err = apply_block(&chain.config, &chain.state, &chain.graph, &block).unwrap_err();
        assert!(matches!(
            err,
            BlockError::InstanceFailed { index: 1, error: InstanceError::PartnerNotFound(_), .. }
        ));
    }

    #[test]
    fn zero_reward_increments_privilege_aspect() {
        let mut config = minimal_config();
        config.consensus = MechanismRef::ProofOfWork { difficulty: 0 };
        config.block_reward = Value(0);
        let mut chain = Chain::create(config, AccountId::new("miner")).unwrap().0;
        mine_and_append(&mut chain, BTreeMap::new());
        mine_and_append(&mut chain, BTreeMap::new());
        let key = (COINBASE_ROOT.to_string(), "privilege:miner".to_string());
        assert_eq!(chain.state.aspects.get(&key), Some(&2));
        assert_eq!(chain.state.cumulative_rewards, 0);
        assert_eq!(chain.state.utxo_total(), 0);
    }

    #[test]
    fn private_root_binds_and_enforces_controller() {
        let mut config = minimal_config();
        config.consensus = MechanismRef::ProofOfWork { difficulty: 0 };
        config.roots.push(RootDef {
            name: "vault".into(),
            instance_type: InstanceKind::Both,
            access: Access::Private,
            aspects: Vec::new(),
            code_template: crate::config::CodeTemplate::permissive(100),
        });
        let chain = Chain::create(config, AccountId::new("miner")).unwrap().0;

        // impostor creating on someone else's behalf is refused outright
        let mut forged = RootInstance::female("vault", "mallory", 1);
        forged.originator = AccountId::new("alice");
        let out = process_root_instance(&chain.config, &chain.state, &chain.graph, &forged);
        assert_eq!(out.status, ExecStatus::Error(InstanceError::AccessDenied));

        let first = RootInstance::female("vault", "alice", 1);
        let out = process_root_instance(&chain.config, &chain.state, &chain.graph, &first);
        assert_eq!(out.status, ExecStatus::Ok);
        let bound = out.new_state;
        assert_eq!(bound.controllers.get("vault"), Some(&AccountId::new("alice")));

        let intruder = RootInstance::female("vault", "mallory", 2);
        let out = process_root_instance(&chain.config, &bound, &chain.graph, &intruder);
        assert_eq!(out.status, ExecStatus::Error(InstanceError::AccessDenied));

        let again = RootInstance::female("vault", "alice", 2);
        let out = process_root_instance(&chain.config, &bound, &chain.graph, &again);
        assert_eq!(out.status, ExecStatus::Ok);
    }

    #[test]
    fn aspect_writes_update_declared_mutable_aspects_only() {
        let chain = utxo_chain();
        let mut f = RootInstance::female("asset", "alice", 1);
        f.aspect_writes.insert("counter".into(), 7);
        let out = process_root_instance(&chain.config, &chain.state, &chain.graph, &f);
        assert_eq!(out.status, ExecStatus::Ok);
        assert_eq!(
            out.new_state.aspects.get(&("asset".into(), "counter".into())),
            Some(&7)
        );

        let mut frozen = RootInstance::female("asset", "alice", 2);
        frozen.aspect_writes.insert("fixed_rate".into(), 9);
        let out = process_root_instance(&chain.config, &chain.state, &chain.graph, &frozen);
        assert_eq!(out.status, ExecStatus::Error(InstanceError::MalformedInstance));
    }

    #[test]
    fn block_triples_cover_instances_outputs_and_miner() {
        let mut chain = utxo_chain();
        let f = RootInstance::female("asset", "alice", 10);
        let fh = f.hash(&chain.config);
        let m = RootInstance::male_spend("asset", "alice", fh, &[("bob", 10)]);
        mine_and_append(&mut chain, [(String::from("asset"), vec![f, m])].into());

        // hand enumeration: genesis Mined + female (Created, StoredIn)
        // + male (Created, Targeted, StoredIn) + its 1 output (Created,
        // StoredIn) + coinbase (Created, StoredIn) + block Mined = 11
        assert_eq!(chain.graph.len(), 11);
        assert!(chain.graph.search_contains(&fh));
    }

    #[test]
    fn empty_block_ingest_yields_single_mined_triple() {
        let config = minimal_config();
        let mut graph = GraphStore::new();
        let block = Block {
            height: 7,
            predecessor_hash: Hash::zero(),
            timestamp: 7,
            root_set: Vec::new(),
            instances: BTreeMap::new(),
            nonce: Vec::new(),
            creator: AccountId::new("N1"),
            predecessor_version_hash: None,
        };
        ingest_block(&mut graph, &config, &block, &AccountId::new("N1"));
        assert_eq!(
            graph.all_triples(),
            vec![Triple::new(b"N1".to_vec(), PRED_MINED, b"7".to_vec())]
        );
    }

    #[test]
    fn account_commitment_examples() {
        let config = {
            let mut c = minimal_config();
            c.chain_type = ChainType::Account;
            c
        };
        let mut state = WorldState::new(ChainType::Account);
        assert_eq!(account_commitment(&config, &state).unwrap(), Hash::zero());

        state.accounts.insert(
            AccountId::new("alice"),
            AccountState { balance: Value(5), stored_code: None, storage_root: Hash::zero() },
        );
        let single = account_commitment(&config, &state).unwrap();
        let key = hash_digest(&config, b"alice");
        let mut payload = key.as_bytes().to_vec();
        payload.extend_from_slice(
            &state.accounts[&AccountId::new("alice")].canonical_encode(),
        );
        assert_eq!(single, merkle::leaf_hash(HashAlg::Sha256, &payload));

        // insertion order cannot matter
        let mut other = WorldState::new(ChainType::Account);
        other.accounts.insert(
            AccountId::new("bob"),
            AccountState { balance: Value(9), stored_code: None, storage_root: Hash::zero() },
        );
        other.accounts.insert(
            AccountId::new("alice"),
            AccountState { balance: Value(5), stored_code: None, storage_root: Hash::zero() },
        );
        let mut reversed = WorldState::new(ChainType::Account);
        reversed.accounts.insert(
            AccountId::new("alice"),
            AccountState { balance: Value(5), stored_code: None, storage_root: Hash::zero() },
        );
        reversed.accounts.insert(
            AccountId::new("bob"),
            AccountState { balance: Value(9), stored_code: None, storage_root: Hash::zero() },
        );
        assert_eq!(
            account_commitment(&config, &other).unwrap(),
            account_commitment(&config, &reversed).unwrap()
        );
        assert!(account_commitment(&config, &WorldState::new(ChainType::Utxo)).is_err());
    }

    #[test]
    fn wrong_chain_type_rejected_for_commitment() {
        let config = minimal_config();
        let state = WorldState::new(ChainType::Utxo);
        assert_eq!(
            account_commitment(&config, &state),
            Err(LedgerError::WrongChainType)
        );
    }

    #[test]
    fn pow_difficulty_is_enforced_on_append() {
        let mut config = minimal_config();
        config.consensus = MechanismRef::ProofOfWork { difficulty: 1 };
        let mut chain = Chain::create(config, AccountId::new("miner")).unwrap().0;
        let mut block = chain
            .mine_block(AccountId::new("miner"), BTreeMap::new(), 1, 1_000_000)
            .unwrap();
        // the mined nonce passes
        chain.clone().append_block(block.clone()).unwrap();
        // swap in a nonce that demonstrably fails the difficulty check
        let puzzle = Puzzle::new(1, block.binder()).unwrap();
        let failing = (0u64..)
            .map(|c| c.canonical_encode())
            .find(|n| !puzzle.check(chain.config.hash_alg, n))
            .unwrap();
        block.nonce = failing;
        assert_eq!(
            chain.append_block(block),
            Err(BlockError::InvalidConsensusProof)
        );
    }

    #[test]
    fn replay_reconstructs_identical_state_and_graph() {
        let mut chain = utxo_chain();
        let f = RootInstance::female("asset", "alice", 10);
        let fh = f.hash(&chain.config);
        mine_and_append(&mut chain, single("asset", f));
        let m = RootInstance::male_spend("asset", "alice", fh, &[("bob", 9)]);
        mine_and_append(&mut chain, single("asset", m));
        mine_and_append(&mut chain, BTreeMap::new());

        let replayed = Chain::replay(chain.config.clone(), chain.blocks.clone()).unwrap();
        assert_eq!(replayed.state, chain.state);
        assert_eq!(replayed.graph, chain.graph);
        assert_eq!(replayed.blocks, chain.blocks);
    }

    #[test]
    fn blocks_file_round_trips() {
        let mut chain = utxo_chain();
        mine_and_append(&mut chain, single("asset", RootInstance::female("asset", "a", 4)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("testnet.blocks");
        write_blocks_file(&path, &chain.blocks).unwrap();
        let extra = chain
            .mine_block(AccountId::new("miner"), BTreeMap::new(), 9, 1_000_000)
            .unwrap();
        chain.append_block(extra.clone()).unwrap();
        append_block_record(&path, &extra).unwrap();

        let blocks = read_blocks_file(&path).unwrap();
        assert_eq!(blocks, chain.blocks);
        let replayed = Chain::replay(chain.config.clone(), blocks).unwrap();
        assert_eq!(replayed.state, chain.state);
    }

    #[test]
    fn truncated_blocks_file_rejected() {
        let mut chain = utxo_chain();
        mine_and_append(&mut chain, BTreeMap::new());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.blocks");
        write_blocks_file(&path, &chain.blocks).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_blocks_file(&path).is_err());
    }

    #[test]
    fn one_spend_holds_over_a_scripted_chain() {
        let mut chain = utxo_chain();
        let f = RootInstance::female("asset", "alice", 10);
        let fh = f.hash(&chain.config);
        mine_and_append(&mut chain, single("asset", f));
        let m = RootInstance::male_spend("asset", "alice", fh, &[("bob", 10)]);
        mine_and_append(&mut chain, single("asset", m));
        // scan oracle: count consumed partner hashes across all blocks
        let mut consumed = Vec::new();
        for block in &chain.blocks {
            for list in block.instances.values() {
                for i in list {
                    if let Some(p) = i.partner_hash {
                        consumed.push(p);
                    }
                }
            }
        }
        let unique: BTreeSet<_> = consumed.iter().collect();
        assert_eq!(unique.len(), consumed.len());

        // a double-spend block cannot be mined
        let again = RootInstance::male_spend("asset", "eve", fh, &[("eve", 1)]);
        let err = chain
            .mine_block(AccountId::new("miner"), single("asset", again), 9, 10)
            .unwrap_err();
        assert!(matches!(
            err,
            MineError::Apply(BlockError::InstanceFailed {
                error: InstanceError::AlreadyPaired(_),
                ..
            })
        ));
    }

    #[test]
    fn conservation_identity_over_a_mixed_run() {
        let mut chain = utxo_chain();
        let f = RootInstance::female("asset", "alice", 10);
        let fh = f.hash(&chain.config);
        mine_and_append(&mut chain, single("asset", f));
        let m = RootInstance::male_spend("asset", "alice", fh, &[("bob", 7)]);
        mine_and_append(&mut chain, single("asset", m));
        let s = &chain.state;
        // Every unit in the UTXO set or burned as a fee came from a reward
        // minted by Ω, except user-minted female face values.
        let user_minted = 10u64;
        assert_eq!(
            s.utxo_total() + s.cumulative_fees,
            s.cumulative_rewards + user_minted
        );
    }

    #[test]
    fn instance_round_trips_through_encoding() {
        let mut m = RootInstance::male_spend(
            "asset",
            "alice",
            hash_digest(&minimal_config(), b"partner"),
            &[("bob", 3), ("carol", 4)],
        );
        m.aspect_writes.insert("counter".into(), 5);
        let bytes = m.canonical_encode();
        assert_eq!(RootInstance::canonical_decode(&bytes).unwrap(), m);
    }

    #[test]
    fn block_round_trips_through_encoding() {
        let mut chain = utxo_chain();
        mine_and_append(&mut chain, single("asset", RootInstance::female("asset", "z", 2)));
        for block in &chain.blocks {
            let bytes = block.canonical_encode();
            assert_eq!(&Block::canonical_decode(&bytes).unwrap(), block);
        }
    }
}
