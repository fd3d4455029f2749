//! Bounded stack virtual machine executing root-instance code and chain
//! function hooks.
//!
//! The instruction set is deliberately small: sixteen base opcodes plus the
//! aspect load/store pair and two forward-only skips for conditionals. Every
//! control transfer moves the program counter strictly forward and bounded
//! loops are unrolled at compile time, so every program terminates within its
//! configured step budget.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::config::ChainConfig;
use crate::encoding::{Encodable, EncodingError, Reader};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VmError {
    #[error("stack underflow at instruction {0}")]
    StackUnderflow(usize),
    #[error("type mismatch at instruction {0}: expected {1}")]
    TypeMismatch(usize, &'static str),
    #[error("division by zero at instruction {0}")]
    DivisionByZero(usize),
    #[error("arithmetic overflow at instruction {0}")]
    ArithmeticOverflow(usize),
    #[error("compute budget of {0} steps exhausted")]
    BudgetExhausted(u64),
    #[error("unknown environment binding `{0}`")]
    UnknownEnvBinding(String),
    #[error("aspect `{0}.{1}` is not declared")]
    UnknownAspect(String, String),
    #[error("aspect write rejected: {0}")]
    AspectWriteForbidden(String),
    #[error("unknown custom opcode `{0}`")]
    UnknownCustomOpcode(String),
    #[error("custom opcode `{0}` expands to `{1}`, which needs an operand")]
    BadExpansion(String, String),
    #[error("skip at instruction {0} jumps past program end")]
    SkipOutOfBounds(usize),
    #[error("malformed code: {0}")]
    MalformedCode(#[from] EncodingError),
}

/// Runtime value on the operand stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VmValue {
    Int(i64),
    Bytes(Vec<u8>),
}

impl VmValue {
    pub fn truthy(&self) -> bool {
        match self {
            VmValue::Int(v) => *v != 0,
            VmValue::Bytes(b) => !b.is_empty(),
        }
    }

    /// Byte rendering used by concatenation and hashing: integers become
    /// decimal text, byte strings pass through.
    pub fn as_text_bytes(&self) -> Vec<u8> {
        match self {
            VmValue::Int(v) => v.to_string().into_bytes(),
            VmValue::Bytes(b) => b.clone(),
        }
    }
}

impl Encodable for VmValue {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            VmValue::Int(v) => {
                out.push(0);
                v.encode_into(out);
            }
            VmValue::Bytes(b) => {
                out.push(1);
                b.encode_into(out);
            }
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let offset = r.offset();
        match r.byte()? {
            0 => Ok(VmValue::Int(i64::decode_from(r)?)),
            1 => Ok(VmValue::Bytes(Vec::<u8>::decode_from(r)?)),
            tag => Err(EncodingError::InvalidTag { what: "vm value", tag, offset }),
        }
    }
}

/// Immediate operand of a PUSH.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Int(i64),
    Bytes(Vec<u8>),
    /// Named binding supplied by the execution context (hook parameters,
    /// instance params, sender, value, ...).
    Env(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Push(Operand),
    Pop,
    /// Duplicate the value `n` positions below the top onto the top.
    Dup(u64),
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Eq,
    Lt,
    Gt,
    And,
    Or,
    Not,
    /// Pop a value, push the 32-byte digest of its byte rendering.
    Hash,
    /// Pop a value and append its encoding to the execution log.
    Log,
    StoreAspect(String),
    LoadAspect(String),
    /// Unconditional forward skip over the next `n` instructions.
    Skip(u64),
    /// Pop an integer; skip the next `n` instructions when it is zero.
    SkipIfZero(u64),
    /// Developer-defined macro expanding to a sequence of base opcodes.
    Custom(String),
}

impl Instruction {
    pub fn mnemonic(&self) -> &str {
        match self {
            Instruction::Push(_) => "PUSH",
            Instruction::Pop => "POP",
            Instruction::Dup(_) => "DUP",
            Instruction::Add => "ADD",
            Instruction::Sub => "SUB",
            Instruction::Mul => "MUL",
            Instruction::Div => "DIV",
            Instruction::Mod => "MOD",
            Instruction::Eq => "EQ",
            Instruction::Lt => "LT",
            Instruction::Gt => "GT",
            Instruction::And => "AND",
            Instruction::Or => "OR",
            Instruction::Not => "NOT",
            Instruction::Hash => "HASH",
            Instruction::Log => "LOG",
            Instruction::StoreAspect(_) => "STORE_ASPECT",
            Instruction::LoadAspect(_) => "LOAD_ASPECT",
            Instruction::Skip(_) => "SKIP",
            Instruction::SkipIfZero(_) => "SKIPZ",
            Instruction::Custom(name) => name,
        }
    }
}

/// Base opcode mnemonics, in instruction-set order.
pub const BASE_MNEMONICS: [&str; 20] = [
    "PUSH", "POP", "DUP", "ADD", "SUB", "MUL", "DIV", "MOD", "EQ", "LT", "GT", "AND", "OR",
    "NOT", "HASH", "LOG", "STORE_ASPECT", "LOAD_ASPECT", "SKIP", "SKIPZ",
];

pub fn is_base_mnemonic(name: &str) -> bool {
    BASE_MNEMONICS.contains(&name)
}

/// Parse an operand-free base mnemonic, as used in custom opcode expansions.
/// `DUP` expands to `Dup(0)`.
pub fn expansion_instruction(name: &str) -> Option<Instruction> {
    let ins = match name {
        "POP" => Instruction::Pop,
        "DUP" => Instruction::Dup(0),
        "ADD" => Instruction::Add,
        "SUB" => Instruction::Sub,
        "MUL" => Instruction::Mul,
        "DIV" => Instruction::Div,
        "MOD" => Instruction::Mod,
        "EQ" => Instruction::Eq,
        "LT" => Instruction::Lt,
        "GT" => Instruction::Gt,
        "AND" => Instruction::And,
        "OR" => Instruction::Or,
        "NOT" => Instruction::Not,
        "HASH" => Instruction::Hash,
        "LOG" => Instruction::Log,
        _ => return None,
    };
    Some(ins)
}

impl Encodable for Instruction {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Instruction::Push(Operand::Int(v)) => {
                out.push(0);
                v.encode_into(out);
            }
            Instruction::Push(Operand::Bytes(b)) => {
                out.push(1);
                b.encode_into(out);
            }
            Instruction::Push(Operand::Env(name)) => {
                out.push(2);
                name.encode_into(out);
            }
            Instruction::Pop => out.push(3),
            Instruction::Dup(n) => {
                out.push(4);
                n.encode_into(out);
            }
            Instruction::Add => out.push(5),
            Instruction::Sub => out.push(6),
            Instruction::Mul => out.push(7),
            Instruction::Div => out.push(8),
            Instruction::Mod => out.push(9),
            Instruction::Eq => out.push(10),
            Instruction::Lt => out.push(11),
            Instruction::Gt => out.push(12),
            Instruction::And => out.push(13),
            Instruction::Or => out.push(14),
            Instruction::Not => out.push(15),
            Instruction::Hash => out.push(16),
            Instruction::Log => out.push(17),
            Instruction::StoreAspect(name) => {
                out.push(18);
                name.encode_into(out);
            }
            Instruction::LoadAspect(name) => {
                out.push(19);
                name.encode_into(out);
            }
            Instruction::Skip(n) => {
                out.push(20);
                n.encode_into(out);
            }
            Instruction::SkipIfZero(n) => {
                out.push(21);
                n.encode_into(out);
            }
            Instruction::Custom(name) => {
                out.push(22);
                name.encode_into(out);
            }
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let offset = r.offset();
        let ins = match r.byte()? {
            0 => Instruction::Push(Operand::Int(i64::decode_from(r)?)),
            1 => Instruction::Push(Operand::Bytes(Vec::<u8>::decode_from(r)?)),
            2 => Instruction::Push(Operand::Env(String::decode_from(r)?)),
            3 => Instruction::Pop,
            4 => Instruction::Dup(u64::decode_from(r)?),
            5 => Instruction::Add,
            6 => Instruction::Sub,
            7 => Instruction::Mul,
            8 => Instruction::Div,
            9 => Instruction::Mod,
            10 => Instruction::Eq,
            11 => Instruction::Lt,
            12 => Instruction::Gt,
            13 => Instruction::And,
            14 => Instruction::Or,
            15 => Instruction::Not,
            16 => Instruction::Hash,
            17 => Instruction::Log,
            18 => Instruction::StoreAspect(String::decode_from(r)?),
            19 => Instruction::LoadAspect(String::decode_from(r)?),
            20 => Instruction::Skip(u64::decode_from(r)?),
            21 => Instruction::SkipIfZero(u64::decode_from(r)?),
            22 => Instruction::Custom(String::decode_from(r)?),
            tag => return Err(EncodingError::InvalidTag { what: "instruction", tag, offset }),
        };
        Ok(ins)
    }
}

/// A complete VM program; the `code` fields of root instances and chain
/// functions hold its canonical encoding.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program(pub Vec<Instruction>);

impl Program {
    pub fn decode(code: &[u8]) -> Result<Program, VmError> {
        if code.is_empty() {
            return Ok(Program::default());
        }
        Ok(Program::canonical_decode(code)?)
    }

    pub fn encode(&self) -> Vec<u8> {
        self.canonical_encode()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Static proof that execution terminates: every skip target stays inside
    /// the program (skips only ever move forward, so the program counter is
    /// strictly increasing).
    pub fn check_termination(&self) -> Result<(), VmError> {
        for (pc, ins) in self.0.iter().enumerate() {
            if let Instruction::Skip(n) | Instruction::SkipIfZero(n) = ins {
                let target = pc as u64 + 1 + n;
                if target > self.0.len() as u64 {
                    return Err(VmError::SkipOutOfBounds(pc));
                }
            }
        }
        Ok(())
    }
}

impl Encodable for Program {
    fn encode_into(&self, out: &mut Vec<u8>) {
        (self.0.len() as u64).encode_into(out);
        for ins in &self.0 {
            ins.encode_into(out);
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, EncodingError> {
        let n = r.u64_be()?;
        let mut items = Vec::new();
        for _ in 0..n {
            items.push(Instruction::decode_from(r)?);
        }
        Ok(Program(items))
    }
}

/// Execution context: named bindings plus the aspect table the program may
/// read (and, when permitted, write).
pub struct VmContext<'a> {
    pub config: &'a ChainConfig,
    /// Root whose code is executing; `None` for chain function hooks.
    pub current_root: Option<&'a str>,
    pub env: BTreeMap<String, VmValue>,
    pub aspects: &'a mut BTreeMap<(String, String), i64>,
    /// Chain function hooks run effects-only; aspect writes are reserved for
    /// root instance execution so that per-node hook runs cannot fork state.
    pub allow_aspect_writes: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmOutcome {
    pub stack: Vec<VmValue>,
    pub log: Vec<u8>,
    pub steps_used: u64,
}

impl VmOutcome {
    /// Decode the log back into the sequence of values that were LOGged.
    pub fn log_values(&self) -> Result<Vec<VmValue>, EncodingError> {
        let mut r = Reader::new(&self.log);
        let mut vals = Vec::new();
        while r.remaining() > 0 {
            vals.push(VmValue::decode_from(&mut r)?);
        }
        Ok(vals)
    }
}

pub fn execute(ctx: &mut VmContext<'_>, program: &Program) -> Result<VmOutcome, VmError> {
    let budget = ctx.config.compute_budget;
    let mut stack: Vec<VmValue> = Vec::new();
    let mut log: Vec<u8> = Vec::new();
    let mut steps: u64 = 0;
    let mut pc: usize = 0;

    while pc < program.0.len() {
        let ins = &program.0[pc];
        if let Instruction::Custom(name) = ins {
            let expansion = expand_custom(ctx.config, name)?;
            for base in &expansion {
                steps += 1;
                if steps > budget {
                    return Err(VmError::BudgetExhausted(budget));
                }
                step(ctx, base, pc, &mut stack, &mut log).map(|_| ())?;
            }
            pc += 1;
            continue;
        }
        steps += 1;
        if steps > budget {
            return Err(VmError::BudgetExhausted(budget));
        }
        let jump = step(ctx, ins, pc, &mut stack, &mut log)?;
        pc = pc + 1 + jump;
    }

    Ok(VmOutcome { stack, log, steps_used: steps })
}

fn expand_custom(config: &ChainConfig, name: &str) -> Result<Vec<Instruction>, VmError> {
    let seq = config
        .opcode_table
        .get(name)
        .ok_or_else(|| VmError::UnknownCustomOpcode(name.to_string()))?;
    seq.iter()
        .map(|m| {
            expansion_instruction(m)
                .ok_or_else(|| VmError::BadExpansion(name.to_string(), m.clone()))
        })
        .collect()
}

/// Execute one instruction; returns the extra forward distance for skips.
fn step(
    ctx: &mut VmContext<'_>,
    ins: &Instruction,
    pc: usize,
    stack: &mut Vec<VmValue>,
    log: &mut Vec<u8>,
) -> Result<usize, VmError> {
    let pop = |stack: &mut Vec<VmValue>| stack.pop().ok_or(VmError::StackUnderflow(pc));
    let pop_int = |stack: &mut Vec<VmValue>| match stack.pop() {
        Some(VmValue::Int(v)) => Ok(v),
        Some(_) => Err(VmError::TypeMismatch(pc, "integer")),
        None => Err(VmError::StackUnderflow(pc)),
    };

    match ins {
        Instruction::Push(Operand::Int(v)) => stack.push(VmValue::Int(*v)),
        Instruction::Push(Operand::Bytes(b)) => stack.push(VmValue::Bytes(b.clone())),
        Instruction::Push(Operand::Env(name)) => {
            let v = ctx
                .env
                .get(name)
                .cloned()
                .ok_or_else(|| VmError::UnknownEnvBinding(name.clone()))?;
            stack.push(v);
        }
        Instruction::Pop => {
            pop(stack)?;
        }
        Instruction::Dup(n) => {
            let idx = stack
                .len()
                .checked_sub(1 + *n as usize)
                .ok_or(VmError::StackUnderflow(pc))?;
            let v = stack[idx].clone();
            stack.push(v);
        }
        Instruction::Add => {
            let b = pop(stack)?;
            let a = pop(stack)?;
            let v = match (&a, &b) {
                (VmValue::Int(x), VmValue::Int(y)) => VmValue::Int(
                    x.checked_add(*y).ok_or(VmError::ArithmeticOverflow(pc))?,
                ),
                // String concatenation: either side being bytes makes ADD a join.
                _ => {
                    let mut joined = a.as_text_bytes();
                    joined.extend_from_slice(&b.as_text_bytes());
                    VmValue::Bytes(joined)
                }
            };
            stack.push(v);
        }
        Instruction::Sub => {
            let b = pop_int(stack)?;
            let a = pop_int(stack)?;
            stack.push(VmValue::Int(
                a.checked_sub(b).ok_or(VmError::ArithmeticOverflow(pc))?,
            ));
        }
        Instruction::Mul => {
            let b = pop_int(stack)?;
            let a = pop_int(stack)?;
            stack.push(VmValue::Int(
                a.checked_mul(b).ok_or(VmError::ArithmeticOverflow(pc))?,
            ));
        }
        Instruction::Div => {
            let b = pop_int(stack)?;
            let a = pop_int(stack)?;
            if b == 0 {
                return Err(VmError::DivisionByZero(pc));
            }
            stack.push(VmValue::Int(
                a.checked_div(b).ok_or(VmError::ArithmeticOverflow(pc))?,
            ));
        }
        Instruction::Mod => {
            let b = pop_int(stack)?;
            let a = pop_int(stack)?;
            if b == 0 {
                return Err(VmError::DivisionByZero(pc));
            }
            stack.push(VmValue::Int(
                a.checked_rem(b).ok_or(VmError::ArithmeticOverflow(pc))?,
            ));
        }
        Instruction::Eq => {
            let b = pop(stack)?;
            let a = pop(stack)?;
            stack.push(VmValue::Int((a == b) as i64));
        }
        Instruction::Lt => {
            let b = pop_int(stack)?;
            let a = pop_int(stack)?;
            stack.push(VmValue::Int((a < b) as i64));
        }
        Instruction::Gt => {
            let b = pop_int(stack)?;
            let a = pop_int(stack)?;
            stack.push(VmValue::Int((a > b) as i64));
        }
        Instruction::And => {
            let b = pop(stack)?;
            let a = pop(stack)?;
            stack.push(VmValue::Int((a.truthy() && b.truthy()) as i64));
        }
        Instruction::Or => {
            let b = pop(stack)?;
            let a = pop(stack)?;
            stack.push(VmValue::Int((a.truthy() || b.truthy()) as i64));
        }
        Instruction::Not => {
            let a = pop(stack)?;
            stack.push(VmValue::Int(!a.truthy() as i64));
        }
        Instruction::Hash => {
            let a = pop(stack)?;
            let digest = crate::config::hash_digest(ctx.config, &a.as_text_bytes());
            stack.push(VmValue::Bytes(digest.as_bytes().to_vec()));
        }
        Instruction::Log => {
            let a = pop(stack)?;
            a.encode_into(log);
        }
        Instruction::StoreAspect(name) => {
            let v = pop_int(stack)?;
            if !ctx.allow_aspect_writes {
                return Err(VmError::AspectWriteForbidden(format!(
                    "`{name}`: writes are not allowed in this context"
                )));
            }
            let root = ctx.current_root.ok_or_else(|| {
                VmError::AspectWriteForbidden(format!("`{name}`: no root scope"))
            })?;
            let def = ctx
                .config
                .find_aspect(root, name)
                .ok_or_else(|| VmError::UnknownAspect(root.to_string(), name.clone()))?;
            if !def.mutable {
                return Err(VmError::AspectWriteForbidden(format!(
                    "`{root}.{name}` is constant"
                )));
            }
            ctx.aspects.insert((root.to_string(), name.clone()), v);
        }
        Instruction::LoadAspect(name) => {
            let (root, aspect) = match name.split_once('.') {
                Some((r, a)) => (r.to_string(), a.to_string()),
                None => match ctx.current_root {
                    Some(r) => (r.to_string(), name.clone()),
                    None => {
                        return Err(VmError::UnknownAspect("<none>".into(), name.clone()))
                    }
                },
            };
            let def = ctx
                .config
                .find_aspect(&root, &aspect)
                .ok_or_else(|| VmError::UnknownAspect(root.clone(), aspect.clone()))?;
            let v = ctx
                .aspects
                .get(&(root, aspect))
                .copied()
                .unwrap_or(def.default_value);
            stack.push(VmValue::Int(v));
        }
        Instruction::Skip(n) => return Ok(*n as usize),
        Instruction::SkipIfZero(n) => {
            let v = pop_int(stack)?;
            if v == 0 {
                return Ok(*n as usize);
            }
        }
        Instruction::Custom(name) => {
            // handled by the outer loop; reaching here means a nested custom
            return Err(VmError::UnknownCustomOpcode(name.clone()));
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::test_support::minimal_config;

    fn run(config: &ChainConfig, program: Vec<Instruction>) -> Result<VmOutcome, VmError> {
        let mut aspects = BTreeMap::new();
        let mut ctx = VmContext {
            config,
            current_root: Some("asset"),
            env: BTreeMap::new(),
            aspects: &mut aspects,
            allow_aspect_writes: true,
        };
        execute(&mut ctx, &Program(program))
    }

    #[test]
    fn add_one_program() {
        let config = minimal_config();
        let out = run(
            &config,
            vec![
                Instruction::Push(Operand::Int(41)),
                Instruction::Push(Operand::Int(1)),
                Instruction::Add,
                Instruction::Log,
            ],
        )
        .unwrap();
        assert_eq!(out.log_values().unwrap(), vec![VmValue::Int(42)]);
        assert_eq!(out.steps_used, 4);
    }

    #[test]
    fn budget_exhaustion() {
        let mut config = minimal_config();
        config.compute_budget = 3;
        let err = run(
            &config,
            vec![
                Instruction::Push(Operand::Int(1)),
                Instruction::Push(Operand::Int(2)),
                Instruction::Add,
                Instruction::Log,
            ],
        )
        .unwrap_err();
        assert_eq!(err, VmError::BudgetExhausted(3));
    }

    #[test]
    fn concat_renders_ints_as_text() {
        let config = minimal_config();
        let out = run(
            &config,
            vec![
                Instruction::Push(Operand::Bytes(b"n=".to_vec())),
                Instruction::Push(Operand::Int(7)),
                Instruction::Add,
            ],
        )
        .unwrap();
        assert_eq!(out.stack, vec![VmValue::Bytes(b"n=7".to_vec())]);
    }

    #[test]
    fn skip_if_zero_takes_branch() {
        let config = minimal_config();
        let out = run(
            &config,
            vec![
                Instruction::Push(Operand::Int(0)),
                Instruction::SkipIfZero(2),
                Instruction::Push(Operand::Int(111)),
                Instruction::Log,
                Instruction::Push(Operand::Int(222)),
                Instruction::Log,
            ],
        )
        .unwrap();
        assert_eq!(out.log_values().unwrap(), vec![VmValue::Int(222)]);
    }

    #[test]
    fn constant_aspect_write_rejected() {
        let config = minimal_config();
        let err = run(
            &config,
            vec![
                Instruction::Push(Operand::Int(9)),
                Instruction::StoreAspect("fixed_rate".into()),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, VmError::AspectWriteForbidden(_)));
    }

    #[test]
    fn mutable_aspect_round_trip() {
        let config = minimal_config();
        let out = run(
            &config,
            vec![
                Instruction::Push(Operand::Int(5)),
                Instruction::StoreAspect("counter".into()),
                Instruction::LoadAspect("counter".into()),
                Instruction::Log,
            ],
        )
        .unwrap();
        assert_eq!(out.log_values().unwrap(), vec![VmValue::Int(5)]);
    }

    #[test]
    fn aspect_load_uses_default_before_any_write() {
        let config = minimal_config();
        let out = run(&config, vec![Instruction::LoadAspect("counter".into())]).unwrap();
        assert_eq!(out.stack, vec![VmValue::Int(0)]);
    }

    #[test]
    fn custom_opcode_expands_to_base_sequence() {
        let mut config = minimal_config();
        config
            .opcode_table
            .insert("DOUBLE_LOG".into(), vec!["DUP".into(), "LOG".into(), "LOG".into()]);
        let out = run(
            &config,
            vec![
                Instruction::Push(Operand::Int(3)),
                Instruction::Custom("DOUBLE_LOG".into()),
            ],
        )
        .unwrap();
        assert_eq!(
            out.log_values().unwrap(),
            vec![VmValue::Int(3), VmValue::Int(3)]
        );
        // PUSH + the three expanded base opcodes
        assert_eq!(out.steps_used, 4);
    }

    #[test]
    fn program_round_trip() {
        let prog = Program(vec![
            Instruction::Push(Operand::Env("b.id".into())),
            Instruction::Dup(0),
            Instruction::Skip(1),
            Instruction::Log,
            Instruction::StoreAspect("counter".into()),
        ]);
        let bytes = prog.encode();
        assert_eq!(Program::decode(&bytes).unwrap(), prog);
    }

    #[test]
    fn termination_scan_rejects_overlong_skip() {
        let prog = Program(vec![Instruction::Skip(5)]);
        assert!(matches!(
            prog.check_termination(),
            Err(VmError::SkipOutOfBounds(0))
        ));
        let ok = Program(vec![Instruction::Push(Operand::Int(1)), Instruction::SkipIfZero(0)]);
        ok.check_termination().unwrap();
    }
}
