//! Chain interaction expressions: `B1.send(...)`, `B1.RI.contains(...)`,
//! `B1.stats()`.
//!
//! These are evaluated against a live chain rather than compiled. `send`
//! takes an instance literal, `female(root, sender, value)` or
//! `male(root, sender, partner_hex, recv, amount, ...)`, places it in the
//! chain's pending pool, and returns the instance hash. `RI.contains` probes
//! the chain's graph index for a stored instance. `stats` reports the chain's
//! analytics summary.

use thiserror::Error;

use crate::analytics::{chain_stats, ChainStats};
use crate::config::Hash;
use crate::dsl::lexer::{tokenize, LexError};
use crate::dsl::token::{Token, TokenKind};
use crate::ledger::{Chain, RootInstance};

#[derive(Debug, Error)]
pub enum InteractError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error("malformed interaction expression: {0}")]
    Parse(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("malformed instance literal: {0}")]
    MalformedInstanceLiteral(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InteractionResult {
    /// Hash of the submitted instance.
    Submitted(Hash),
    Contains(bool),
    Stats(ChainStats),
}

struct Cursor<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Result<&'a Token, InteractError> {
        let t = self
            .tokens
            .get(self.pos)
            .ok_or_else(|| InteractError::Parse("unexpected end of expression".into()))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), InteractError> {
        let t = self.bump()?;
        if t.kind == TokenKind::Punct && t.text == p {
            Ok(())
        } else {
            Err(InteractError::Parse(format!(
                "expected `{p}`, found `{}`",
                t.text
            )))
        }
    }

    fn expect_ident(&mut self) -> Result<&'a str, InteractError> {
        let t = self.bump()?;
        if t.kind == TokenKind::Ident {
            Ok(&t.text)
        } else {
            Err(InteractError::Parse(format!(
                "expected a name, found `{}`",
                t.text
            )))
        }
    }

    fn expect_str(&mut self) -> Result<String, InteractError> {
        let t = self.bump()?;
        if t.kind == TokenKind::Str {
            Ok(t.string_value().to_string())
        } else {
            Err(InteractError::Parse(format!(
                "expected a string, found `{}`",
                t.text
            )))
        }
    }

    fn expect_int(&mut self) -> Result<u64, InteractError> {
        let t = self.bump()?;
        if t.kind == TokenKind::Int {
            t.text
                .parse()
                .map_err(|_| InteractError::Parse(format!("integer out of range: {}", t.text)))
        } else {
            Err(InteractError::Parse(format!(
                "expected an integer, found `{}`",
                t.text
            )))
        }
    }
}

/// Evaluate one interaction expression against a chain.
///
/// The leading identifier names the chain and is checked against
/// `chain.config.chain_name`; `send` is the only form with a side effect.
pub fn eval_interaction(chain: &mut Chain, expr: &str) -> Result<InteractionResult, InteractError> {
    let stream = tokenize(expr)?;
    let mut c = Cursor {
        tokens: &stream.tokens,
        pos: 0,
    };
    let target = c.expect_ident()?;
    if target != chain.config.chain_name {
        return Err(InteractError::Parse(format!(
            "expression addresses `{target}`, chain is `{}`",
            chain.config.chain_name
        )));
    }
    c.expect_punct(".")?;
    let method = c.expect_ident()?;
    let result = match method {
        "send" => {
            c.expect_punct("(")?;
            let instance = parse_instance_literal(&mut c)?;
            c.expect_punct(")")?;
            InteractionResult::Submitted(chain.submit(instance))
        }
        "RI" => {
            c.expect_punct(".")?;
            let probe = c.expect_ident()?;
            if probe != "contains" {
                return Err(InteractError::UnknownMethod(format!("RI.{probe}")));
            }
            c.expect_punct("(")?;
            let hex = c.expect_str()?;
            c.expect_punct(")")?;
            let hash = Hash::from_hex(&hex)
                .ok_or_else(|| InteractError::Parse(format!("not a hash: {hex:?}")))?;
            InteractionResult::Contains(chain.graph.search_contains(&hash))
        }
        "stats" => {
            c.expect_punct("(")?;
            c.expect_punct(")")?;
            InteractionResult::Stats(chain_stats(chain))
        }
        other => return Err(InteractError::UnknownMethod(other.to_string())),
    };
    if let Some(t) = c.peek() {
        if !(t.kind == TokenKind::Punct && t.text == ";") || c.pos + 1 < c.tokens.len() {
            return Err(InteractError::Parse(format!(
                "trailing input after expression: `{}`",
                t.text
            )));
        }
    }
    Ok(result)
}

fn parse_instance_literal(c: &mut Cursor<'_>) -> Result<RootInstance, InteractError> {
    let kind = c.expect_ident()?;
    match kind {
        "female" => {
            c.expect_punct("(")?;
            let root = c.expect_str()?;
            c.expect_punct(",")?;
            let sender = c.expect_str()?;
            c.expect_punct(",")?;
            let value = c.expect_int()?;
            c.expect_punct(")")?;
            Ok(RootInstance::female(root, sender, value))
        }
        "male" => {
            c.expect_punct("(")?;
            let root = c.expect_str()?;
            c.expect_punct(",")?;
            let sender = c.expect_str()?;
            c.expect_punct(",")?;
            let partner_hex = c.expect_str()?;
            let partner = Hash::from_hex(&partner_hex).ok_or_else(|| {
                InteractError::MalformedInstanceLiteral(format!(
                    "partner is not a hash: {partner_hex:?}"
                ))
            })?;
            let mut outputs: Vec<(String, u64)> = Vec::new();
            while let Some(t) = c.peek() {
                if t.kind == TokenKind::Punct && t.text == ")" {
                    break;
                }
                c.expect_punct(",")?;
                let who = c.expect_str()?;
                c.expect_punct(",")?;
                let amount = c.expect_int()?;
                outputs.push((who, amount));
            }
            c.expect_punct(")")?;
            let refs: Vec<(&str, u64)> = outputs.iter().map(|(w, v)| (w.as_str(), *v)).collect();
            Ok(RootInstance::male_spend(root, sender, partner, &refs))
        }
        other => Err(InteractError::MalformedInstanceLiteral(format!(
            "unknown instance kind `{other}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::test_support::minimal_config;
    use crate::config::AccountId;

    fn chain() -> Chain {
        let mut config = minimal_config();
        config.chain_name = "B1".to_string();
        Chain::create(config, AccountId::new("miner")).unwrap().0
    }

    #[test]
    fn contains_is_false_on_an_empty_chain() {
        let mut chain = chain();
        let zeros = "0".repeat(64);
        let result = eval_interaction(&mut chain, &format!("B1.RI.contains(\"{zeros}\")")).unwrap();
        assert_eq!(result, InteractionResult::Contains(false));
    }

    #[test]
    fn send_returns_the_instance_hash_and_contains_flips_after_mining() {
        let mut chain = chain();
        let result =
            eval_interaction(&mut chain, "B1.send(female(\"asset\", \"alice\", 10))").unwrap();
        let hash = match result {
            InteractionResult::Submitted(h) => h,
            other => panic!("expected a hash, got {other:?}"),
        };
        // the oracle: hash the same literal independently
        assert_eq!(
            hash,
            RootInstance::female("asset", "alice", 10).hash(&chain.config)
        );
        assert_eq!(chain.pending.len(), 1);

        let probe = format!("B1.RI.contains(\"{}\")", hash.to_hex());
        assert_eq!(
            eval_interaction(&mut chain, &probe).unwrap(),
            InteractionResult::Contains(false)
        );

        let instances = chain.take_pending();
        let block = chain
            .mine_block(AccountId::new("miner"), instances, 1, 1 << 20)
            .unwrap();
        chain.append_block(block).unwrap();

        assert_eq!(
            eval_interaction(&mut chain, &probe).unwrap(),
            InteractionResult::Contains(true)
        );
        assert!(chain.pending.is_empty());
    }

    #[test]
    fn stats_reports_the_block_count() {
        let mut chain = chain();
        let result = eval_interaction(&mut chain, "B1.stats()").unwrap();
        match result {
            InteractionResult::Stats(stats) => {
                assert_eq!(stats.block_count, 1);
                assert_eq!(stats.avg_block_time, None);
            }
            other => panic!("expected stats, got {other:?}"),
        }
    }

    #[test]
    fn unknown_method_is_reported() {
        let mut chain = chain();
        let err = eval_interaction(&mut chain, "B1.fly()").unwrap_err();
        assert!(matches!(err, InteractError::UnknownMethod(m) if m == "fly"));
    }

    #[test]
    fn malformed_literal_is_reported() {
        let mut chain = chain();
        let err = eval_interaction(&mut chain, "B1.send(robot(\"asset\"))").unwrap_err();
        assert!(matches!(err, InteractError::MalformedInstanceLiteral(_)));
    }

    #[test]
    fn wrong_chain_name_is_rejected() {
        let mut chain = chain();
        let err = eval_interaction(&mut chain, "B9.stats()").unwrap_err();
        assert!(matches!(err, InteractError::Parse(_)));
    }

    #[test]
    fn male_literal_spends_a_mined_female() {
        let mut chain = chain();
        let send = eval_interaction(&mut chain, "B1.send(female(\"asset\", \"alice\", 10))");
        let female_hash = match send.unwrap() {
            InteractionResult::Submitted(h) => h,
            _ => unreachable!(),
        };
        let instances = chain.take_pending();
        let block = chain
            .mine_block(AccountId::new("miner"), instances, 1, 1 << 20)
            .unwrap();
        chain.append_block(block).unwrap();

        let spend = format!(
            "B1.send(male(\"asset\", \"alice\", \"{}\", \"bob\", 10))",
            female_hash.to_hex()
        );
        eval_interaction(&mut chain, &spend).unwrap();
        let instances = chain.take_pending();
        let block = chain
            .mine_block(AccountId::new("miner"), instances, 2, 1 << 20)
            .unwrap();
        chain.append_block(block).unwrap();
        assert_eq!(chain.blocks.len(), 3);
    }
}
