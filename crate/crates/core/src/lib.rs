//! Construction kit for simulated blockchain economies.
//!
//! A declarative [`config::ChainConfig`] fixes a chain's value model, hash
//! algorithm, consensus mechanism, deployable root set and lifecycle hooks.
//! From there the crate provides Merkle commitments over root sets, a ledger
//! executing gendered root instances, finite mechanisms with an
//! incentive-compatibility checker, a six-permutation triple index, exact
//! chain analytics, a small bounded-execution chain language, and a
//! deterministic multi-node network simulator.

pub mod analytics;
pub mod config;
pub mod dsl;
pub mod encoding;
pub mod graphstore;
pub mod ledger;
pub mod mechanism;
pub mod merkle;
pub mod netsim;
pub mod vm;

pub use config::{
    AccountId, Access, AspectDef, ChainConfig, ChainType, CodeTemplate, ConfigViolation,
    Gender, Hash, HashAlg, InstanceKind, MechanismRef, RootDef, Value,
};
pub use encoding::{Encodable, EncodingError};
