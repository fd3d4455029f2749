//! Chain configuration: the declarative description of an economy that every
//! other module consumes. A `ChainConfig` fixes the value-carrying model, the
//! hash algorithm, the consensus mechanism, the set of deployable roots and
//! their aspects, custom opcodes, and lifecycle hooks.
//!
//! Configs are plain data. `validate_config` reports rule violations as data
//! rather than failing fast, so callers can show all problems at once.

use std::collections::BTreeMap;
use std::fmt;

use sha2::Digest;

use crate::encoding::{Encodable, EncodingError, Reader};
use crate::vm;

/// 32-byte digest used for identities, commitments and block links.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hash(pub [u8; 32]);

impl Hash {
    pub const fn zero() -> Hash {
        Hash([0u8; 32])
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 32]
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Hash> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Hash(arr))
    }
}

impl fmt::Debug for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash({})", self.to_hex())
    }
}

impl fmt::Display for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Encodable for Hash {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let bytes = r.take(32)?;
        let mut arr = [0u8; 32];
        arr.copy_from_slice(bytes);
        Ok(Hash(arr))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HashAlg {
    Sha256,
    Sha3_256,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainType {
    /// Value lives in unspent root instances; spends consume and create them.
    Utxo,
    /// Value lives in per-account balances; roots act as stored contracts.
    Account,
}

/// Non-negative token amount with checked arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Value(pub u64);

impl Value {
    pub fn amount(&self) -> u64 {
        self.0
    }

    pub fn checked_add(self, other: Value) -> Option<Value> {
        self.0.checked_add(other.0).map(Value)
    }

    pub fn checked_sub(self, other: Value) -> Option<Value> {
        self.0.checked_sub(other.0).map(Value)
    }

    pub fn is_zero(&self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Encodable for Value {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.0.encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        Ok(Value(u64::decode_from(r)?))
    }
}

/// Opaque participant identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccountId(pub String);

impl AccountId {
    pub fn new(s: impl Into<String>) -> AccountId {
        AccountId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Encodable for AccountId {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.0.encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        Ok(AccountId(String::decode_from(r)?))
    }
}

/// Gender of a root instance: female instances accept an invocation, male
/// instances perform one against a female partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Gender {
    Female,
    Male,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gender::Female => f.write_str("female"),
            Gender::Male => f.write_str("male"),
        }
    }
}

/// Which genders a root admits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceKind {
    FemaleOnly,
    MaleOnly,
    Both,
}

impl InstanceKind {
    pub fn permits(&self, gender: Gender) -> bool {
        matches!(
            (self, gender),
            (InstanceKind::FemaleOnly, Gender::Female)
                | (InstanceKind::MaleOnly, Gender::Male)
                | (InstanceKind::Both, _)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Public,
    /// Only the root's originator (and later its recorded controller) may
    /// create instances.
    Private,
}

/// Named typed property attached to a root. Immutable aspects behave as
/// constants; mutable ones are updated by STORE_ASPECT during execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectDef {
    pub name: String,
    pub description: String,
    pub default_value: i64,
    pub mutable: bool,
}

/// Constraint on the code a root instance may carry: a length bound plus an
/// opcode allow-list (empty list admits every opcode).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodeTemplate {
    pub max_ops: u64,
    pub allowed: Vec<String>,
}

impl CodeTemplate {
    pub fn permissive(max_ops: u64) -> CodeTemplate {
        CodeTemplate { max_ops, allowed: Vec::new() }
    }

    pub fn permits_mnemonic(&self, mnemonic: &str) -> bool {
        self.allowed.is_empty() || self.allowed.iter().any(|m| m == mnemonic)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootDef {
    pub name: String,
    pub instance_type: InstanceKind,
    pub access: Access,
    pub aspects: Vec<AspectDef>,
    pub code_template: CodeTemplate,
}

impl RootDef {
    pub fn public_both(name: impl Into<String>) -> RootDef {
        RootDef {
            name: name.into(),
            instance_type: InstanceKind::Both,
            access: Access::Public,
            aspects: Vec::new(),
            code_template: CodeTemplate::permissive(u64::MAX),
        }
    }
}

/// Consensus selection: the built-in hash puzzle at a fixed difficulty, or a
/// named mechanism whose behaviour is given by hook programs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MechanismRef {
    ProofOfWork { difficulty: u64 },
    Custom { name: String, hooks: BTreeMap<String, Vec<u8>> },
}

/// Lifecycle hooks a chain may implement.
pub const CHAIN_HOOKS: [&str; 5] = [
    "OnCreate",
    "OnNewBlock",
    "OnNewPeer",
    "OnBlockReceived",
    "OnPeerMessage",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainConfig {
    pub chain_name: String,
    pub chain_type: ChainType,
    pub hash_alg: HashAlg,
    pub consensus: MechanismRef,
    pub roots: Vec<RootDef>,
    /// Custom opcode name to the base-opcode sequence it expands to.
    pub opcode_table: BTreeMap<String, Vec<String>>,
    /// Maximum VM steps per program execution.
    pub compute_budget: u64,
    /// Miner reward per block; zero switches rewards to privilege aspects.
    pub block_reward: Value,
    /// Hook name to encoded VM program.
    pub chain_functions: BTreeMap<String, Vec<u8>>,
}

impl ChainConfig {
    pub fn find_root(&self, name: &str) -> Option<&RootDef> {
        self.roots.iter().find(|r| r.name == name)
    }

    pub fn find_aspect(&self, root: &str, aspect: &str) -> Option<&AspectDef> {
        self.find_root(root)?.aspects.iter().find(|a| a.name == aspect)
    }

    pub fn validate(&self) -> Vec<ConfigViolation> {
        validate_config(self)
    }
}

// --- canonical encoding -----------------------------------------------------

impl Encodable for HashAlg {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(match self {
            HashAlg::Sha256 => 0,
            HashAlg::Sha3_256 => 1,
        });
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let offset = r.offset();
        match r.byte()? {
            0 => Ok(HashAlg::Sha256),
            1 => Ok(HashAlg::Sha3_256),
            tag => Err(EncodingError::InvalidTag { what: "hash algorithm", tag, offset }),
        }
    }
}

impl Encodable for ChainType {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(match self {
            ChainType::Utxo => 0,
            ChainType::Account => 1,
        });
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let offset = r.offset();
        match r.byte()? {
            0 => Ok(ChainType::Utxo),
            1 => Ok(ChainType::Account),
            tag => Err(EncodingError::InvalidTag { what: "chain type", tag, offset }),
        }
    }
}

impl Encodable for Gender {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(match self {
            Gender::Female => 0,
            Gender::Male => 1,
        });
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let offset = r.offset();
        match r.byte()? {
            0 => Ok(Gender::Female),
            1 => Ok(Gender::Male),
            tag => Err(EncodingError::InvalidTag { what: "gender", tag, offset }),
        }
    }
}

impl Encodable for InstanceKind {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(match self {
            InstanceKind::FemaleOnly => 0,
            InstanceKind::MaleOnly => 1,
            InstanceKind::Both => 2,
        });
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let offset = r.offset();
        match r.byte()? {
            0 => Ok(InstanceKind::FemaleOnly),
            1 => Ok(InstanceKind::MaleOnly),
            2 => Ok(InstanceKind::Both),
            tag => Err(EncodingError::InvalidTag { what: "instance kind", tag, offset }),
        }
    }
}

impl Encodable for Access {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(match self {
            Access::Public => 0,
            Access::Private => 1,
        });
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let offset = r.offset();
        match r.byte()? {
            0 => Ok(Access::Public),
            1 => Ok(Access::Private),
            tag => Err(EncodingError::InvalidTag { what: "access", tag, offset }),
        }
    }
}

impl Encodable for AspectDef {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.name.encode_into(out);
        self.description.encode_into(out);
        self.default_value.encode_into(out);
        self.mutable.encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        Ok(AspectDef {
            name: String::decode_from(r)?,
            description: String::decode_from(r)?,
            default_value: i64::decode_from(r)?,
            mutable: bool::decode_from(r)?,
        })
    }
}

impl Encodable for CodeTemplate {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.max_ops.encode_into(out);
        self.allowed.encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        Ok(CodeTemplate {
            max_ops: u64::decode_from(r)?,
            allowed: Vec::<String>::decode_from(r)?,
        })
    }
}

impl Encodable for RootDef {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.name.encode_into(out);
        self.instance_type.encode_into(out);
        self.access.encode_into(out);
        (self.aspects.len() as u64).encode_into(out);
        for a in &self.aspects {
            a.encode_into(out);
        }
        self.code_template.encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let name = String::decode_from(r)?;
        let instance_type = InstanceKind::decode_from(r)?;
        let access = Access::decode_from(r)?;
        let n = r.u64_be()?;
        let mut aspects = Vec::new();
        for _ in 0..n {
            aspects.push(AspectDef::decode_from(r)?);
        }
        let code_template = CodeTemplate::decode_from(r)?;
        Ok(RootDef { name, instance_type, access, aspects, code_template })
    }
}

impl Encodable for MechanismRef {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            MechanismRef::ProofOfWork { difficulty } => {
                out.push(0);
                difficulty.encode_into(out);
            }
            MechanismRef::Custom { name, hooks } => {
                out.push(1);
                name.encode_into(out);
                hooks.encode_into(out);
            }
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let offset = r.offset();
        match r.byte()? {
            0 => Ok(MechanismRef::ProofOfWork { difficulty: u64::decode_from(r)? }),
            1 => Ok(MechanismRef::Custom {
                name: String::decode_from(r)?,
                hooks: BTreeMap::<String, Vec<u8>>::decode_from(r)?,
            }),
            tag => Err(EncodingError::InvalidTag { what: "mechanism", tag, offset }),
        }
    }
}

impl Encodable for ChainConfig {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.chain_name.encode_into(out);
        self.chain_type.encode_into(out);
        self.hash_alg.encode_into(out);
        self.consensus.encode_into(out);
        (self.roots.len() as u64).encode_into(out);
        for root in &self.roots {
            root.encode_into(out);
        }
        self.opcode_table.encode_into(out);
        self.compute_budget.encode_into(out);
        self.block_reward.encode_into(out);
        self.chain_functions.encode_into(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let chain_name = String::decode_from(r)?;
        let chain_type = ChainType::decode_from(r)?;
        let hash_alg = HashAlg::decode_from(r)?;
        let consensus = MechanismRef::decode_from(r)?;
        let n = r.u64_be()?;
        let mut roots = Vec::new();
        for _ in 0..n {
            roots.push(RootDef::decode_from(r)?);
        }
        Ok(ChainConfig {
            chain_name,
            chain_type,
            hash_alg,
            consensus,
            roots,
            opcode_table: BTreeMap::decode_from(r)?,
            compute_budget: u64::decode_from(r)?,
            block_reward: Value::decode_from(r)?,
            chain_functions: BTreeMap::decode_from(r)?,
        })
    }
}

// --- hashing ----------------------------------------------------------------

/// Digest arbitrary bytes with the given algorithm.
pub fn digest_with(alg: HashAlg, payload: &[u8]) -> Hash {
    let mut out = [0u8; 32];
    match alg {
        HashAlg::Sha256 => {
            let digest = sha2::Sha256::digest(payload);
            out.copy_from_slice(&digest);
        }
        HashAlg::Sha3_256 => {
            let digest = sha3::Sha3_256::digest(payload);
            out.copy_from_slice(&digest);
        }
    }
    Hash(out)
}

/// Digest payload bytes under the chain's configured algorithm.
pub fn hash_digest(config: &ChainConfig, payload: &[u8]) -> Hash {
    digest_with(config.hash_alg, payload)
}

// --- validation -------------------------------------------------------------

/// One broken configuration rule. `location` names the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn violation(location: impl Into<String>, message: impl Into<String>) -> ConfigViolation {
    ConfigViolation { location: location.into(), message: message.into() }
}

/// Check every configuration rule and report all violations found.
pub fn validate_config(config: &ChainConfig) -> Vec<ConfigViolation> {
    let mut out = Vec::new();

    if config.chain_name.is_empty() {
        out.push(violation("chain_name", "must not be empty"));
    }
    if config.compute_budget == 0 {
        out.push(violation("compute_budget", "must be at least 1"));
    }

    let mut seen_roots = std::collections::BTreeSet::new();
    for root in &config.roots {
        let loc = format!("roots.{}", root.name);
        if root.name.is_empty() {
            out.push(violation("roots", "root name must not be empty"));
        }
        if !seen_roots.insert(root.name.clone()) {
            out.push(violation(&loc, "duplicate root name"));
        }
        let mut seen_aspects = std::collections::BTreeSet::new();
        for aspect in &root.aspects {
            if aspect.name.is_empty() {
                out.push(violation(&loc, "aspect name must not be empty"));
            }
            if !seen_aspects.insert(aspect.name.clone()) {
                out.push(violation(
                    format!("{loc}.{}", aspect.name),
                    "duplicate aspect name",
                ));
            }
        }
        for mnemonic in &root.code_template.allowed {
            if !vm::is_base_mnemonic(mnemonic) && !config.opcode_table.contains_key(mnemonic) {
                out.push(violation(
                    format!("{loc}.code_template"),
                    format!("unknown opcode `{mnemonic}` in allow-list"),
                ));
            }
        }
    }

    for (name, expansion) in &config.opcode_table {
        let loc = format!("opcode_table.{name}");
        if vm::is_base_mnemonic(name) {
            out.push(violation(&loc, "custom opcode shadows a base opcode"));
            continue;
        }
        for element in expansion {
            if config.opcode_table.contains_key(element) {
                out.push(violation(
                    &loc,
                    format!("expands to custom opcode `{element}`; expansions must be base opcodes"),
                ));
            } else if vm::expansion_instruction(element).is_none() {
                if vm::is_base_mnemonic(element) {
                    out.push(violation(
                        &loc,
                        format!("`{element}` needs an operand and cannot appear in an expansion"),
                    ));
                } else {
                    out.push(violation(&loc, format!("unknown opcode `{element}`")));
                }
            }
        }
    }

    for (hook, code) in &config.chain_functions {
        let loc = format!("chain_functions.{hook}");
        if !CHAIN_HOOKS.contains(&hook.as_str()) {
            out.push(violation(&loc, "unknown chain function"));
        }
        match vm::Program::decode(code) {
            Ok(program) => {
                if program.check_termination().is_err() {
                    out.push(violation(&loc, "program skips past its own end"));
                }
            }
            Err(e) => out.push(violation(&loc, format!("undecodable program: {e}"))),
        }
    }

    if let MechanismRef::Custom { name, hooks } = &config.consensus {
        if name.is_empty() {
            out.push(violation("consensus", "mechanism name must not be empty"));
        }
        for (hook, code) in hooks {
            if let Err(e) = vm::Program::decode(code) {
                out.push(violation(
                    format!("consensus.{hook}"),
                    format!("undecodable program: {e}"),
                ));
            }
        }
    }

    out
}

/// Ready-made configurations for tests and examples.
pub mod test_support {
    use super::*;

    /// UTXO chain with one "asset" root carrying a mutable counter aspect and
    /// a constant rate aspect. Shared by VM and ledger tests.
    pub fn minimal_config() -> ChainConfig {
        ChainConfig {
            chain_name: "testnet".into(),
            chain_type: ChainType::Utxo,
            hash_alg: HashAlg::Sha256,
            consensus: MechanismRef::ProofOfWork { difficulty: 1 },
            roots: vec![RootDef {
                name: "asset".into(),
                instance_type: InstanceKind::Both,
                access: Access::Public,
                aspects: vec![
                    AspectDef {
                        name: "counter".into(),
                        description: "times updated".into(),
                        default_value: 0,
                        mutable: true,
                    },
                    AspectDef {
                        name: "fixed_rate".into(),
                        description: "constant".into(),
                        default_value: 3,
                        mutable: false,
                    },
                ],
                code_template: CodeTemplate::permissive(1_000),
            }],
            opcode_table: BTreeMap::new(),
            compute_budget: 10_000,
            block_reward: Value(50),
            chain_functions: BTreeMap::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::minimal_config;
    use super::*;

    #[test]
    fn sha256_known_vectors() {
        assert_eq!(
            digest_with(HashAlg::Sha256, b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            digest_with(HashAlg::Sha256, b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn sha3_known_vectors() {
        assert_eq!(
            digest_with(HashAlg::Sha3_256, b"").to_hex(),
            "a7ffc6f8bf1ed76651c14756a061d662f580ff4de43b49fa82d80a4b80f8434a"
        );
        assert_eq!(
            digest_with(HashAlg::Sha3_256, b"abc").to_hex(),
            "3a985da74fe225b2045c172d6bd390bd855f086e3e9d525b46bfe24511431532"
        );
    }

    #[test]
    fn hash_dispatch_differs_between_algorithms() {
        let mut a = minimal_config();
        let mut b = minimal_config();
        a.hash_alg = HashAlg::Sha256;
        b.hash_alg = HashAlg::Sha3_256;
        assert_ne!(hash_digest(&a, b"payload"), hash_digest(&b, b"payload"));
    }

    #[test]
    fn valid_config_reports_nothing() {
        assert_eq!(minimal_config().validate(), Vec::new());
    }

    #[test]
    fn zero_budget_flagged() {
        let mut config = minimal_config();
        config.compute_budget = 0;
        let violations = config.validate();
        assert!(violations.iter().any(|v| v.location == "compute_budget"));
    }

    #[test]
    fn duplicate_root_flagged() {
        let mut config = minimal_config();
        config.roots.push(config.roots[0].clone());
        let violations = config.validate();
        assert!(violations.iter().any(|v| v.message.contains("duplicate root")));
    }

    #[test]
    fn custom_opcode_must_expand_to_base_opcodes() {
        let mut config = minimal_config();
        config.opcode_table.insert("A".into(), vec!["B".into()]);
        config.opcode_table.insert("B".into(), vec!["ADD".into()]);
        let violations = config.validate();
        assert!(violations
            .iter()
            .any(|v| v.location == "opcode_table.A" && v.message.contains("custom opcode `B`")));
        // B itself is fine
        assert!(!violations.iter().any(|v| v.location == "opcode_table.B"));
    }

    #[test]
    fn operand_carrying_opcode_rejected_in_expansion() {
        let mut config = minimal_config();
        config.opcode_table.insert("P".into(), vec!["PUSH".into()]);
        let violations = config.validate();
        assert!(violations.iter().any(|v| v.message.contains("needs an operand")));
    }

    #[test]
    fn unknown_chain_function_flagged() {
        let mut config = minimal_config();
        config
            .chain_functions
            .insert("OnFullMoon".into(), vm::Program::default().encode());
        let violations = config.validate();
        assert!(violations
            .iter()
            .any(|v| v.location == "chain_functions.OnFullMoon"));
    }

    #[test]
    fn config_round_trip() {
        let mut config = minimal_config();
        config.opcode_table.insert("NOOP".into(), vec!["DUP".into(), "POP".into()]);
        config
            .chain_functions
            .insert("OnCreate".into(), vm::Program::default().encode());
        config.consensus = MechanismRef::Custom {
            name: "quorum".into(),
            hooks: [("Execute".into(), vm::Program::default().encode())].into(),
        };
        let bytes = config.canonical_encode();
        assert_eq!(ChainConfig::canonical_decode(&bytes).unwrap(), config);
    }
}
