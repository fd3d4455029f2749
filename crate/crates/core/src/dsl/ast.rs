//! Syntax tree for the chain-definition language, plus a stable s-expression
//! rendering used by snapshot tests.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceProgram {
    pub imports: Vec<String>,
    pub decls: Vec<Decl>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decl {
    Chain(ChainDecl),
    Root(RootDecl),
    Aspect(AspectDecl),
    Mechanism(MechanismDecl),
    Puzzle(PuzzleDecl),
    Func(FuncDecl),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainDecl {
    pub name: String,
    /// Capability names between the parens of the header.
    pub capabilities: Vec<String>,
    pub members: Vec<ChainMember>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainMember {
    /// `this.consensus = <target>;`
    ConsensusAssign(ConsensusTarget),
    /// `Roots.add(name);`
    RootsAdd(String),
    Func(FuncDecl),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsensusTarget {
    /// `Consensus.POW` and friends.
    Builtin(String),
    /// A mechanism or puzzle declared elsewhere in the compilation set.
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootDecl {
    pub name: String,
    pub aspects: Vec<String>,
    pub has_ellipsis: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectDecl {
    pub name: String,
    pub attrs: Vec<(String, Literal)>,
}

impl AspectDecl {
    pub fn attr(&self, name: &str) -> Option<&Literal> {
        self.attrs.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MechanismDecl {
    pub name: String,
    pub hooks: Vec<FuncDecl>,
    pub has_ellipsis: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PuzzleDecl {
    pub name: String,
    pub attrs: Vec<(String, Literal)>,
}

impl PuzzleDecl {
    pub fn attr(&self, name: &str) -> Option<&Literal> {
        self.attrs.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuncDecl {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Param {
    /// `Block b` or bare `peer`.
    Named { type_name: Option<String>, name: String },
    /// `...`
    Ellipsis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Log(Expr),
    Return(Option<Expr>),
    /// `Nonce answer = (b.nonce);`
    Local { type_name: String, name: String, value: Expr },
    If { cond: Expr, then_body: Vec<Stmt>, else_body: Vec<Stmt> },
    /// Bounded `for i in 0..k` with a literal bound, statically unrolled.
    For { var: String, start: i64, end: i64, body: Vec<Stmt> },
    Expr(Expr),
    /// `...` elision.
    Ellipsis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Gt => ">",
            BinOp::Le => "<=",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Literal {
    Int(i64),
    Str(String),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(Literal),
    Ident(String),
    /// `recv.member`
    Member { recv: Box<Expr>, member: String },
    Call { callee: Box<Expr>, args: Vec<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

// --- s-expression rendering ---------------------------------------------------

pub fn render_program(p: &SourceProgram) -> String {
    let mut out = String::new();
    out.push_str("(program");
    for import in &p.imports {
        let _ = write!(out, "\n  (import {import})");
    }
    for decl in &p.decls {
        out.push('\n');
        render_decl(decl, 1, &mut out);
    }
    out.push_str(")\n");
    out
}

fn pad(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn render_decl(decl: &Decl, depth: usize, out: &mut String) {
    pad(depth, out);
    match decl {
        Decl::Chain(c) => {
            let _ = write!(out, "(chain {} ({})", c.name, c.capabilities.join(" "));
            for m in &c.members {
                out.push('\n');
                pad(depth + 1, out);
                match m {
                    ChainMember::ConsensusAssign(ConsensusTarget::Builtin(b)) => {
                        let _ = write!(out, "(consensus builtin {b})");
                    }
                    ChainMember::ConsensusAssign(ConsensusTarget::Named(n)) => {
                        let _ = write!(out, "(consensus named {n})");
                    }
                    ChainMember::RootsAdd(r) => {
                        let _ = write!(out, "(roots-add {r})");
                    }
                    ChainMember::Func(f) => render_func(f, depth + 1, out),
                }
            }
            out.push(')');
        }
        Decl::Root(r) => {
            let _ = write!(out, "(root {}", r.name);
            for a in &r.aspects {
                let _ = write!(out, " (aspect {a})");
            }
            if r.has_ellipsis {
                out.push_str(" ...");
            }
            out.push(')');
        }
        Decl::Aspect(a) => {
            let _ = write!(out, "(aspect-decl {}", a.name);
            for (name, value) in &a.attrs {
                let _ = write!(out, " ({name} {})", render_literal(value));
            }
            out.push(')');
        }
        Decl::Mechanism(m) => {
            let _ = write!(out, "(mechanism {}", m.name);
            for hook in &m.hooks {
                out.push('\n');
                pad(depth + 1, out);
                render_func(hook, depth + 1, out);
            }
            if m.has_ellipsis {
                out.push_str(" ...");
            }
            out.push(')');
        }
        Decl::Puzzle(p) => {
            let _ = write!(out, "(puzzle {}", p.name);
            for (name, value) in &p.attrs {
                let _ = write!(out, " ({name} {})", render_literal(value));
            }
            out.push(')');
        }
        Decl::Func(f) => render_func(f, depth, out),
    }
}

fn render_func(f: &FuncDecl, depth: usize, out: &mut String) {
    let _ = write!(out, "(func {} (", f.name);
    let mut first = true;
    for p in &f.params {
        if !first {
            out.push(' ');
        }
        first = false;
        match p {
            Param::Named { type_name: Some(t), name } => {
                let _ = write!(out, "({t} {name})");
            }
            Param::Named { type_name: None, name } => {
                let _ = write!(out, "{name}");
            }
            Param::Ellipsis => out.push_str("..."),
        }
    }
    out.push(')');
    for stmt in &f.body {
        out.push('\n');
        render_stmt(stmt, depth + 1, out);
    }
    out.push(')');
}

fn render_stmt(stmt: &Stmt, depth: usize, out: &mut String) {
    pad(depth, out);
    match stmt {
        Stmt::Log(e) => {
            let _ = write!(out, "(log {})", render_expr(e));
        }
        Stmt::Return(None) => out.push_str("(return)"),
        Stmt::Return(Some(e)) => {
            let _ = write!(out, "(return {})", render_expr(e));
        }
        Stmt::Local { type_name, name, value } => {
            let _ = write!(out, "(local {type_name} {name} {})", render_expr(value));
        }
        Stmt::If { cond, then_body, else_body } => {
            let _ = write!(out, "(if {}", render_expr(cond));
            for s in then_body {
                out.push('\n');
                render_stmt(s, depth + 1, out);
            }
            if !else_body.is_empty() {
                out.push('\n');
                pad(depth + 1, out);
                out.push_str("(else");
                for s in else_body {
                    out.push('\n');
                    render_stmt(s, depth + 2, out);
                }
                out.push(')');
            }
            out.push(')');
        }
        Stmt::For { var, start, end, body } => {
            let _ = write!(out, "(for {var} {start} {end}");
            for s in body {
                out.push('\n');
                render_stmt(s, depth + 1, out);
            }
            out.push(')');
        }
        Stmt::Expr(e) => {
            let _ = write!(out, "(expr {})", render_expr(e));
        }
        Stmt::Ellipsis => out.push_str("..."),
    }
}

fn render_literal(lit: &Literal) -> String {
    match lit {
        Literal::Int(v) => v.to_string(),
        Literal::Str(s) => format!("{s:?}"),
        Literal::Bool(b) => b.to_string(),
    }
}

pub fn render_expr(e: &Expr) -> String {
    match e {
        Expr::Lit(l) => render_literal(l),
        Expr::Ident(name) => name.clone(),
        Expr::Member { recv, member } => format!("(. {} {member})", render_expr(recv)),
        Expr::Call { callee, args } => {
            let rendered: Vec<String> = args.iter().map(render_expr).collect();
            format!("(call {} {})", render_expr(callee), rendered.join(" "))
        }
        Expr::Binary { op, lhs, rhs } => {
            format!("({} {} {})", op.symbol(), render_expr(lhs), render_expr(rhs))
        }
    }
}
