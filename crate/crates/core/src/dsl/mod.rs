//! The chain-definition language: lexer, parser, validator, and a lowering
//! pass that produces runnable [`ChainConfig`](crate::config::ChainConfig)
//! values, plus an evaluator for chain interaction expressions.

pub mod ast;
pub mod interact;
pub mod lexer;
pub mod lower;
pub mod parser;
pub mod token;
pub mod validate;

use thiserror::Error;

use crate::config::ChainConfig;

pub use interact::{eval_interaction, InteractError, InteractionResult};
pub use lower::{lower_to_config, LoweringError};
pub use validate::{validate_program, validate_set, Module, ValidationReport};

#[derive(Debug, Error)]
pub enum DslError {
    #[error("{module}:{source}")]
    Lex {
        module: String,
        source: lexer::LexError,
    },
    #[error("{module}:{source}")]
    Parse {
        module: String,
        source: parser::ParseError,
    },
    #[error(transparent)]
    Lowering(#[from] LoweringError),
}

/// Parse one named source into a module.
pub fn parse_module(name: &str, source: &str) -> Result<Module, DslError> {
    let stream = lexer::tokenize(source).map_err(|source| DslError::Lex {
        module: name.to_string(),
        source,
    })?;
    let program = parser::parse(&stream).map_err(|source| DslError::Parse {
        module: name.to_string(),
        source,
    })?;
    Ok(Module {
        name: name.to_string(),
        program,
    })
}

/// Full pipeline: tokenize, parse, validate, and lower a set of named
/// sources into a chain configuration.
pub fn compile_sources(sources: &[(&str, &str)]) -> Result<ChainConfig, DslError> {
    let mut modules = Vec::new();
    for (name, text) in sources {
        modules.push(parse_module(name, text)?);
    }
    Ok(lower_to_config(&modules)?)
}
