//! Lowers a validated compilation set into a [`ChainConfig`] with compiled
//! hook bytecode.
//!
//! Hooks become straight-line VM programs. Helper functions are inlined at
//! their call sites, bounded `for` loops are unrolled, and `if` branches are
//! compiled to skip instructions, so every lowered program passes the VM's
//! static termination check. Hook parameters are bound positionally: the
//! n-th parameter reads from env binding `argN`, and a member access such as
//! `b.nonce` on the first parameter reads `arg0.nonce`. Free identifiers also
//! resolve to env bindings, so the host decides what they mean at run time.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::config::{
    AspectDef, ChainConfig, ChainType, CodeTemplate, ConfigViolation, HashAlg, InstanceKind,
    MechanismRef, RootDef, Value,
};
use crate::dsl::ast::{
    AspectDecl, BinOp, ChainDecl, ChainMember, ConsensusTarget, Decl, Expr, FuncDecl, Literal,
    Param, PuzzleDecl, RootDecl, Stmt,
};
use crate::dsl::validate::{validate_set, Module, ValidationReport};
use crate::vm::{Instruction, Operand, Program};

pub const DEFAULT_POW_DIFFICULTY: u64 = 1;
pub const DEFAULT_COMPUTE_BUDGET: u64 = 10_000;
pub const DEFAULT_BLOCK_REWARD: u64 = 50;
/// Instruction allowance for root code admitted under lowered templates.
pub const DEFAULT_TEMPLATE_OPS: u64 = 256;

#[derive(Debug, Error)]
pub enum LoweringError {
    #[error("source set failed validation: {0:?}")]
    Invalid(ValidationReport),
    #[error("no chain declaration in the compilation set")]
    NoChainDecl,
    #[error("expected one chain declaration, found {0}")]
    MultipleChainDecls(usize),
    #[error("unknown consensus mode `{0}`")]
    UnknownConsensusMode(String),
    #[error("consensus target `{0}` is not a declared mechanism or puzzle")]
    UnknownConsensusTarget(String),
    #[error("root `{0}` was added but never declared")]
    UnknownRoot(String),
    #[error("aspect `{0}` is not declared")]
    UnknownAspect(String),
    #[error("{decl}.{attr}: {reason}")]
    BadAttr {
        decl: String,
        attr: String,
        reason: String,
    },
    #[error("call to unknown function `{0}`")]
    UnknownFunction(String),
    #[error("recursive call chain through `{0}` cannot be inlined")]
    RecursiveCall(String),
    #[error("`{func}` takes {expected} arguments, got {got}")]
    ArityMismatch {
        func: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: {what} is not supported")]
    Unsupported { what: String, line: usize },
    #[error("line {line}: conditional branch does not leave the stack balanced")]
    UnbalancedBranch { line: usize },
    #[error("duplicate hook `{0}`")]
    DuplicateHook(String),
    #[error("lowered configuration rejected: {0:?}")]
    ConfigRejected(Vec<ConfigViolation>),
}

/// Everything declared across the compilation set, indexed for lowering.
struct SetIndex<'a> {
    chains: Vec<&'a ChainDecl>,
    roots: BTreeMap<&'a str, &'a RootDecl>,
    aspects: BTreeMap<&'a str, &'a AspectDecl>,
    mechanisms: BTreeMap<&'a str, &'a crate::dsl::ast::MechanismDecl>,
    puzzles: BTreeMap<&'a str, &'a PuzzleDecl>,
    /// Non-hook functions callable from hook bodies, by name.
    helpers: BTreeMap<String, &'a FuncDecl>,
    /// Standalone top-level functions with native hook names.
    loose_hooks: Vec<&'a FuncDecl>,
}

fn index_set(modules: &[Module]) -> SetIndex<'_> {
    let mut ix = SetIndex {
        chains: Vec::new(),
        roots: BTreeMap::new(),
        aspects: BTreeMap::new(),
        mechanisms: BTreeMap::new(),
        puzzles: BTreeMap::new(),
        helpers: BTreeMap::new(),
        loose_hooks: Vec::new(),
    };
    for module in modules {
        for decl in &module.program.decls {
            match decl {
                Decl::Chain(c) => {
                    ix.chains.push(c);
                    for member in &c.members {
                        if let ChainMember::Func(f) = member {
                            if !is_chain_hook_name(&f.name) {
                                ix.helpers.insert(f.name.clone(), f);
                            }
                        }
                    }
                }
                Decl::Root(r) => {
                    ix.roots.insert(&r.name, r);
                }
                Decl::Aspect(a) => {
                    ix.aspects.insert(&a.name, a);
                }
                Decl::Mechanism(m) => {
                    ix.mechanisms.insert(&m.name, m);
                }
                Decl::Puzzle(p) => {
                    ix.puzzles.insert(&p.name, p);
                }
                Decl::Func(f) => {
                    if is_chain_hook_name(&f.name) {
                        ix.loose_hooks.push(f);
                    } else {
                        ix.helpers.insert(f.name.clone(), f);
                    }
                }
            }
        }
    }
    ix
}

/// `Create` is accepted as a synonym for the `OnCreate` lifecycle hook.
fn chain_hook_key(name: &str) -> Option<&'static str> {
    match name {
        "Create" | "OnCreate" => Some("OnCreate"),
        "OnNewBlock" => Some("OnNewBlock"),
        "OnNewPeer" => Some("OnNewPeer"),
        "OnBlockReceived" => Some("OnBlockReceived"),
        "OnPeerMessage" => Some("OnPeerMessage"),
        _ => None,
    }
}

fn is_chain_hook_name(name: &str) -> bool {
    chain_hook_key(name).is_some()
}

/// Lower a compilation set to a runnable chain configuration.
///
/// The set must contain exactly one chain declaration; other modules supply
/// roots, aspects, mechanisms, puzzles, and helper functions it references.
pub fn lower_to_config(modules: &[Module]) -> Result<ChainConfig, LoweringError> {
    let report = validate_set(modules);
    if !report.is_clean() {
        return Err(LoweringError::Invalid(report));
    }
    let ix = index_set(modules);
    let chain = match ix.chains.len() {
        0 => return Err(LoweringError::NoChainDecl),
        1 => ix.chains[0],
        n => return Err(LoweringError::MultipleChainDecls(n)),
    };

    let mut consensus = MechanismRef::ProofOfWork {
        difficulty: DEFAULT_POW_DIFFICULTY,
    };
    for member in &chain.members {
        if let ChainMember::ConsensusAssign(target) = member {
            consensus = resolve_consensus(&ix, target)?;
        }
    }

    let mut roots = Vec::new();
    for member in &chain.members {
        if let ChainMember::RootsAdd(name) = member {
            let decl = ix
                .roots
                .get(name.as_str())
                .ok_or_else(|| LoweringError::UnknownRoot(name.clone()))?;
            roots.push(lower_root(&ix, decl)?);
        }
    }

    let mut chain_functions = BTreeMap::new();
    for member in &chain.members {
        if let ChainMember::Func(f) = member {
            if let Some(key) = chain_hook_key(&f.name) {
                install_hook(&mut chain_functions, key, &ix, f)?;
            }
        }
    }
    for f in &ix.loose_hooks {
        let key = chain_hook_key(&f.name).expect("indexed as hook");
        install_hook(&mut chain_functions, key, &ix, f)?;
    }

    let config = ChainConfig {
        chain_name: chain.name.clone(),
        chain_type: ChainType::Utxo,
        hash_alg: HashAlg::Sha256,
        consensus,
        roots,
        opcode_table: BTreeMap::new(),
        compute_budget: DEFAULT_COMPUTE_BUDGET,
        block_reward: Value(DEFAULT_BLOCK_REWARD),
        chain_functions,
    };
    let violations = config.validate();
    if !violations.is_empty() {
        return Err(LoweringError::ConfigRejected(violations));
    }
    Ok(config)
}

fn install_hook(
    table: &mut BTreeMap<String, Vec<u8>>,
    key: &str,
    ix: &SetIndex<'_>,
    f: &FuncDecl,
) -> Result<(), LoweringError> {
    let program = compile_hook(&ix.helpers, f)?;
    if table
        .insert(key.to_string(), program.encode())
        .is_some()
    {
        return Err(LoweringError::DuplicateHook(key.to_string()));
    }
    Ok(())
}

fn resolve_consensus(
    ix: &SetIndex<'_>,
    target: &ConsensusTarget,
) -> Result<MechanismRef, LoweringError> {
    match target {
        ConsensusTarget::Builtin(mode) => {
            if mode == "POW" {
                Ok(MechanismRef::ProofOfWork {
                    difficulty: DEFAULT_POW_DIFFICULTY,
                })
            } else {
                Err(LoweringError::UnknownConsensusMode(mode.clone()))
            }
        }
        ConsensusTarget::Named(name) => {
            if let Some(m) = ix.mechanisms.get(name.as_str()) {
                let mut hooks = BTreeMap::new();
                for hook in &m.hooks {
                    let program = compile_hook(&ix.helpers, hook)?;
                    if hooks.insert(hook.name.clone(), program.encode()).is_some() {
                        return Err(LoweringError::DuplicateHook(hook.name.clone()));
                    }
                }
                Ok(MechanismRef::Custom {
                    name: name.clone(),
                    hooks,
                })
            } else if let Some(p) = ix.puzzles.get(name.as_str()) {
                Ok(MechanismRef::ProofOfWork {
                    difficulty: puzzle_difficulty(p)?,
                })
            } else {
                Err(LoweringError::UnknownConsensusTarget(name.clone()))
            }
        }
    }
}

fn puzzle_difficulty(p: &PuzzleDecl) -> Result<u64, LoweringError> {
    let attr = p.attr("target_zeros").or_else(|| p.attr("difficulty"));
    match attr {
        Some(Literal::Int(v)) if (0..=64).contains(v) => Ok(*v as u64),
        Some(Literal::Int(_)) => Err(LoweringError::BadAttr {
            decl: p.name.clone(),
            attr: "target_zeros".into(),
            reason: "must be between 0 and 64".into(),
        }),
        Some(_) => Err(LoweringError::BadAttr {
            decl: p.name.clone(),
            attr: "target_zeros".into(),
            reason: "must be an integer".into(),
        }),
        None => Ok(DEFAULT_POW_DIFFICULTY),
    }
}

fn lower_root(ix: &SetIndex<'_>, decl: &RootDecl) -> Result<RootDef, LoweringError> {
    let mut aspects = Vec::new();
    for aspect_name in &decl.aspects {
        let a = ix
            .aspects
            .get(aspect_name.as_str())
            .ok_or_else(|| LoweringError::UnknownAspect(aspect_name.clone()))?;
        aspects.push(lower_aspect(a)?);
    }
    Ok(RootDef {
        name: decl.name.clone(),
        instance_type: InstanceKind::Both,
        access: crate::config::Access::Public,
        aspects,
        code_template: CodeTemplate::permissive(DEFAULT_TEMPLATE_OPS),
    })
}

fn lower_aspect(decl: &AspectDecl) -> Result<AspectDef, LoweringError> {
    let default_value = match decl.attr("default_value") {
        Some(Literal::Int(v)) => *v,
        Some(_) => {
            return Err(LoweringError::BadAttr {
                decl: decl.name.clone(),
                attr: "default_value".into(),
                reason: "must be an integer".into(),
            })
        }
        None => {
            return Err(LoweringError::BadAttr {
                decl: decl.name.clone(),
                attr: "default_value".into(),
                reason: "is required".into(),
            })
        }
    };
    let description = match decl.attr("description") {
        Some(Literal::Str(s)) => s.clone(),
        Some(_) => {
            return Err(LoweringError::BadAttr {
                decl: decl.name.clone(),
                attr: "description".into(),
                reason: "must be a string".into(),
            })
        }
        None => String::new(),
    };
    let mutable = match decl.attr("mutable") {
        Some(Literal::Bool(b)) => *b,
        Some(Literal::Int(v)) => *v != 0,
        Some(_) => {
            return Err(LoweringError::BadAttr {
                decl: decl.name.clone(),
                attr: "mutable".into(),
                reason: "must be a boolean".into(),
            })
        }
        None => true,
    };
    Ok(AspectDef {
        name: decl.name.clone(),
        description,
        default_value,
        mutable,
    })
}

// --- function body compilation -------------------------------------------------

#[derive(Clone)]
enum Binding {
    /// Absolute stack slot, measured from the bottom.
    Slot(usize),
    /// Env binding path, e.g. `arg0` or a free identifier.
    Env(String),
}

#[derive(Clone, Copy)]
struct StmtCtx {
    in_branch: bool,
    in_loop: bool,
}

struct FnCompiler<'a> {
    helpers: &'a BTreeMap<String, &'a FuncDecl>,
    code: Vec<Instruction>,
    /// Exact stack height after the instructions emitted so far.
    height: usize,
    scope: Vec<(String, Binding)>,
    inline_stack: Vec<String>,
    line: usize,
}

/// Compile a hook function to a VM program.
///
/// Parameters bind to positional env names (`arg0`, `arg1`, ...); helper
/// calls are resolved against `helpers` and inlined.
pub fn compile_hook(
    helpers: &BTreeMap<String, &FuncDecl>,
    f: &FuncDecl,
) -> Result<Program, LoweringError> {
    let mut c = FnCompiler {
        helpers,
        code: Vec::new(),
        height: 0,
        scope: Vec::new(),
        inline_stack: vec![f.name.clone()],
        line: f.line,
    };
    for (i, param) in f.params.iter().enumerate() {
        if let Param::Named { name, .. } = param {
            c.scope.push((name.clone(), Binding::Env(format!("arg{i}"))));
        }
    }
    let ctx = StmtCtx {
        in_branch: false,
        in_loop: false,
    };
    c.stmts(&f.body, ctx)?;
    Ok(Program(c.code))
}

impl<'a> FnCompiler<'a> {
    fn emit(&mut self, ins: Instruction) {
        match &ins {
            Instruction::Push(_) | Instruction::Dup(_) => self.height += 1,
            Instruction::Pop | Instruction::Log | Instruction::SkipIfZero(_) => self.height -= 1,
            Instruction::Add
            | Instruction::Sub
            | Instruction::Mul
            | Instruction::Div
            | Instruction::Mod
            | Instruction::Eq
            | Instruction::Lt
            | Instruction::Gt
            | Instruction::And
            | Instruction::Or => self.height -= 1,
            Instruction::Not | Instruction::Hash | Instruction::Skip(_) => {}
            Instruction::StoreAspect(_) => self.height -= 1,
            Instruction::LoadAspect(_) => self.height += 1,
            Instruction::Custom(_) => {}
        }
        self.code.push(ins);
    }

    fn unsupported(&self, what: &str) -> LoweringError {
        LoweringError::Unsupported {
            what: what.to_string(),
            line: self.line,
        }
    }

    fn lookup(&self, name: &str) -> Option<Binding> {
        self.scope
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.clone())
    }

    /// Returns how many statements ran; `true` means a `return` terminated the
    /// body and nothing after it was compiled.
    fn stmts(&mut self, list: &[Stmt], ctx: StmtCtx) -> Result<bool, LoweringError> {
        for stmt in list {
            match stmt {
                Stmt::Log(e) => {
                    self.expr(e, false)?;
                    self.emit(Instruction::Log);
                }
                Stmt::Local { name, value, .. } => {
                    if ctx.in_branch {
                        return Err(
                            self.unsupported("local declaration inside a conditional branch")
                        );
                    }
                    self.expr(value, false)?;
                    let slot = self.height - 1;
                    self.scope.push((name.clone(), Binding::Slot(slot)));
                }
                Stmt::Return(value) => {
                    if ctx.in_branch || ctx.in_loop {
                        return Err(self.unsupported("return inside a branch or loop"));
                    }
                    match value {
                        Some(e) => {
                            self.expr(e, false)?;
                        }
                        None => self.emit(Instruction::Push(Operand::Int(0))),
                    }
                    return Ok(true);
                }
                Stmt::If {
                    cond,
                    then_body,
                    else_body,
                } => {
                    self.expr(cond, false)?;
                    let test_at = self.code.len();
                    self.emit(Instruction::SkipIfZero(0));
                    let branch_ctx = StmtCtx {
                        in_branch: true,
                        ..ctx
                    };
                    let h = self.height;
                    self.stmts(then_body, branch_ctx)?;
                    if self.height != h {
                        return Err(LoweringError::UnbalancedBranch { line: self.line });
                    }
                    if else_body.is_empty() {
                        let skip = (self.code.len() - test_at - 1) as u64;
                        self.code[test_at] = Instruction::SkipIfZero(skip);
                    } else {
                        let jump_at = self.code.len();
                        self.emit(Instruction::Skip(0));
                        let skip = (self.code.len() - test_at - 1) as u64;
                        self.code[test_at] = Instruction::SkipIfZero(skip);
                        self.stmts(else_body, branch_ctx)?;
                        if self.height != h {
                            return Err(LoweringError::UnbalancedBranch { line: self.line });
                        }
                        let skip = (self.code.len() - jump_at - 1) as u64;
                        self.code[jump_at] = Instruction::Skip(skip);
                    }
                }
                Stmt::For {
                    var,
                    start,
                    end,
                    body,
                } => {
                    let loop_ctx = StmtCtx {
                        in_loop: true,
                        ..ctx
                    };
                    for iter in *start..*end {
                        let base = self.height;
                        let scope_mark = self.scope.len();
                        self.emit(Instruction::Push(Operand::Int(iter)));
                        self.scope
                            .push((var.clone(), Binding::Slot(self.height - 1)));
                        self.stmts(body, loop_ctx)?;
                        while self.height > base {
                            self.emit(Instruction::Pop);
                        }
                        self.scope.truncate(scope_mark);
                    }
                }
                Stmt::Expr(e) => {
                    self.expr(e, false)?;
                    self.emit(Instruction::Pop);
                }
                Stmt::Ellipsis => {}
            }
        }
        Ok(false)
    }

    /// Compile an expression; its value ends up on top of the stack.
    ///
    /// Inlined helper calls leave argument and local slots beneath their
    /// result. That residue is invisible to later code because bindings use
    /// absolute slots, but it would corrupt a pending operand, so helper
    /// calls are rejected when `nested` says an operand is below us.
    fn expr(&mut self, e: &Expr, nested: bool) -> Result<(), LoweringError> {
        match e {
            Expr::Lit(Literal::Int(v)) => self.emit(Instruction::Push(Operand::Int(*v))),
            Expr::Lit(Literal::Str(s)) => {
                self.emit(Instruction::Push(Operand::Bytes(s.as_bytes().to_vec())))
            }
            Expr::Lit(Literal::Bool(b)) => {
                self.emit(Instruction::Push(Operand::Int(if *b { 1 } else { 0 })))
            }
            Expr::Ident(name) => match self.lookup(name) {
                Some(Binding::Slot(slot)) => {
                    let depth = (self.height - 1 - slot) as u64;
                    self.emit(Instruction::Dup(depth));
                }
                Some(Binding::Env(path)) => {
                    self.emit(Instruction::Push(Operand::Env(path)));
                }
                None => self.emit(Instruction::Push(Operand::Env(name.clone()))),
            },
            Expr::Member { .. } => match self.env_path(e) {
                Some(path) => self.emit(Instruction::Push(Operand::Env(path))),
                None => return Err(self.unsupported("member access on a computed value")),
            },
            Expr::Binary { op, lhs, rhs } => {
                self.expr(lhs, true)?;
                self.expr(rhs, true)?;
                match op {
                    BinOp::Add => self.emit(Instruction::Add),
                    BinOp::Sub => self.emit(Instruction::Sub),
                    BinOp::Mul => self.emit(Instruction::Mul),
                    BinOp::Div => self.emit(Instruction::Div),
                    BinOp::Mod => self.emit(Instruction::Mod),
                    BinOp::Eq => self.emit(Instruction::Eq),
                    BinOp::Ne => {
                        self.emit(Instruction::Eq);
                        self.emit(Instruction::Not);
                    }
                    BinOp::Lt => self.emit(Instruction::Lt),
                    BinOp::Gt => self.emit(Instruction::Gt),
                    BinOp::Le => {
                        self.emit(Instruction::Gt);
                        self.emit(Instruction::Not);
                    }
                    BinOp::Ge => {
                        self.emit(Instruction::Lt);
                        self.emit(Instruction::Not);
                    }
                    BinOp::And => self.emit(Instruction::And),
                    BinOp::Or => self.emit(Instruction::Or),
                }
            }
            Expr::Call { callee, args } => {
                let name = match callee.as_ref() {
                    Expr::Ident(n) => n.as_str(),
                    _ => return Err(self.unsupported("call through a computed target")),
                };
                match name {
                    "Broadcast" => {
                        if args.len() != 1 {
                            return Err(LoweringError::ArityMismatch {
                                func: "Broadcast".into(),
                                expected: 1,
                                got: args.len(),
                            });
                        }
                        self.emit(Instruction::Push(Operand::Bytes(b"broadcast:".to_vec())));
                        self.expr(&args[0], true)?;
                        self.emit(Instruction::Add);
                        self.emit(Instruction::Dup(0));
                        self.emit(Instruction::Log);
                    }
                    "hash" => {
                        if args.len() != 1 {
                            return Err(LoweringError::ArityMismatch {
                                func: "hash".into(),
                                expected: 1,
                                got: args.len(),
                            });
                        }
                        self.expr(&args[0], nested)?;
                        self.emit(Instruction::Hash);
                    }
                    _ => self.inline_call(name, args, nested)?,
                }
            }
        }
        Ok(())
    }

    fn inline_call(
        &mut self,
        name: &str,
        args: &[Expr],
        nested: bool,
    ) -> Result<(), LoweringError> {
        if nested {
            return Err(self.unsupported("function call inside an operator expression"));
        }
        let helper = *self
            .helpers
            .get(name)
            .ok_or_else(|| LoweringError::UnknownFunction(name.to_string()))?;
        if self.inline_stack.iter().any(|n| n == name) {
            return Err(LoweringError::RecursiveCall(name.to_string()));
        }
        let params: Vec<&str> = helper
            .params
            .iter()
            .filter_map(|p| match p {
                Param::Named { name, .. } => Some(name.as_str()),
                Param::Ellipsis => None,
            })
            .collect();
        if params.len() != args.len() {
            return Err(LoweringError::ArityMismatch {
                func: name.to_string(),
                expected: params.len(),
                got: args.len(),
            });
        }

        // Bind each parameter: plain env paths are substituted by name so
        // that member access inside the helper still works; computed values
        // are evaluated once and bound to their stack slot.
        let mut bindings = Vec::new();
        for (param, arg) in params.iter().zip(args) {
            match self.env_path(arg) {
                Some(path) => bindings.push((param.to_string(), Binding::Env(path))),
                None => {
                    self.expr(arg, false)?;
                    bindings.push((param.to_string(), Binding::Slot(self.height - 1)));
                }
            }
        }

        let scope_mark = self.scope.len();
        self.scope.extend(bindings);
        self.inline_stack.push(name.to_string());
        let saved_line = self.line;
        self.line = helper.line;
        let returned = self.stmts(
            &helper.body,
            StmtCtx {
                in_branch: false,
                in_loop: false,
            },
        )?;
        if !returned {
            // A helper without a return contributes 0 as its value.
            self.emit(Instruction::Push(Operand::Int(0)));
        }
        self.line = saved_line;
        self.inline_stack.pop();
        self.scope.truncate(scope_mark);
        Ok(())
    }

    /// Resolve an expression to an env binding path, if it is one.
    fn env_path(&self, e: &Expr) -> Option<String> {
        match e {
            Expr::Ident(name) => match self.lookup(name) {
                Some(Binding::Env(path)) => Some(path),
                Some(Binding::Slot(_)) => None,
                None => Some(name.clone()),
            },
            Expr::Member { recv, member } => {
                let base = self.env_path(recv)?;
                Some(format!("{base}.{member}"))
            }
            _ => None,
        }
    }
}
