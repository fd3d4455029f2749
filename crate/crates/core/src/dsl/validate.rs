//! Semantic validation over a compilation set. Violations are data, not
//! errors; lowering refuses to run while any violation is present.

use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;

/// Function names the runtime knows how to trigger.
pub const NATIVE_HOOKS: [&str; 10] = [
    "OnCreate",
    "OnNewBlock",
    "OnNewPeer",
    "OnBlockReceived",
    "OnPeerMessage",
    "Create",
    "Execute",
    "SocialWelfare",
    "SocialChoice",
    "Valuation",
];

pub fn is_native_hook(name: &str) -> bool {
    NATIVE_HOOKS.contains(&name)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub module: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// One named source unit; imports resolve against the other units' names
/// and their declared roots/aspects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Module {
    pub name: String,
    pub program: SourceProgram,
}

pub fn validate_set(modules: &[Module]) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut declared: BTreeSet<&str> = BTreeSet::new();
    for module in modules {
        for decl in &module.program.decls {
            match decl {
                Decl::Root(r) => {
                    declared.insert(&r.name);
                }
                Decl::Aspect(a) => {
                    declared.insert(&a.name);
                }
                Decl::Mechanism(m) => {
                    declared.insert(&m.name);
                }
                Decl::Puzzle(p) => {
                    declared.insert(&p.name);
                }
                _ => {}
            }
        }
    }

    for module in modules {
        let mut push = |message: String| {
            report.violations.push(Violation { module: module.name.clone(), message });
        };

        for import in &module.program.imports {
            if !declared.contains(import.as_str()) {
                push(format!("unresolved import `{import}`"));
            }
        }

        let funcs = collect_functions(&module.program);
        for decl in &module.program.decls {
            match decl {
                Decl::Chain(c) => {
                    let n = c
                        .members
                        .iter()
                        .filter(|m| matches!(m, ChainMember::ConsensusAssign(_)))
                        .count();
                    if n != 1 {
                        push(format!(
                            "chain `{}` needs exactly one consensus assignment, found {n}",
                            c.name
                        ));
                    }
                    for member in &c.members {
                        if let ChainMember::RootsAdd(root) = member {
                            if !declared.contains(root.as_str()) {
                                push(format!("chain `{}` adds undeclared root `{root}`", c.name));
                            }
                        }
                    }
                }
                Decl::Aspect(a) => {
                    if a.attr("default_value").is_none() {
                        push(format!("aspect `{}` is missing default_value", a.name));
                    }
                }
                Decl::Mechanism(m) => {
                    if m.hooks.is_empty() && !m.has_ellipsis {
                        push(format!("mechanism `{}` declares no hooks", m.name));
                    }
                    for hook in &m.hooks {
                        if !is_native_hook(&hook.name) {
                            push(format!(
                                "mechanism `{}` hook `{}` is not a native hook name",
                                m.name, hook.name
                            ));
                        }
                    }
                }
                Decl::Root(r) => {
                    for aspect in &r.aspects {
                        // an unresolved import is already reported once above
                        let imported = module.program.imports.iter().any(|i| i == aspect);
                        if !declared.contains(aspect.as_str()) && !imported {
                            push(format!(
                                "root `{}` adds undeclared aspect `{aspect}`",
                                r.name
                            ));
                        }
                    }
                }
                _ => {}
            }
        }

        check_recursion(&module.name, &funcs, &mut report);
        check_value_use(&module.name, &funcs, &mut report);
    }

    report
}

pub fn validate_program(program: &SourceProgram) -> ValidationReport {
    validate_set(&[Module { name: "main".to_string(), program: program.clone() }])
}

/// All function declarations in a module: top level, chain members, and
/// mechanism hooks.
fn collect_functions(program: &SourceProgram) -> BTreeMap<String, FuncDecl> {
    let mut funcs = BTreeMap::new();
    for decl in &program.decls {
        match decl {
            Decl::Func(f) => {
                funcs.insert(f.name.clone(), f.clone());
            }
            Decl::Chain(c) => {
                for member in &c.members {
                    if let ChainMember::Func(f) = member {
                        funcs.insert(f.name.clone(), f.clone());
                    }
                }
            }
            Decl::Mechanism(m) => {
                for hook in &m.hooks {
                    funcs.insert(hook.name.clone(), hook.clone());
                }
            }
            _ => {}
        }
    }
    funcs
}

fn called_names(body: &[Stmt], out: &mut BTreeSet<String>) {
    fn walk_expr(e: &Expr, out: &mut BTreeSet<String>) {
        match e {
            Expr::Call { callee, args } => {
                if let Expr::Ident(name) = callee.as_ref() {
                    out.insert(name.clone());
                }
                walk_expr(callee, out);
                for a in args {
                    walk_expr(a, out);
                }
            }
            Expr::Member { recv, .. } => walk_expr(recv, out),
            Expr::Binary { lhs, rhs, .. } => {
                walk_expr(lhs, out);
                walk_expr(rhs, out);
            }
            Expr::Lit(_) | Expr::Ident(_) => {}
        }
    }
    for stmt in body {
        match stmt {
            Stmt::Log(e) | Stmt::Expr(e) | Stmt::Return(Some(e)) => walk_expr(e, out),
            Stmt::Local { value, .. } => walk_expr(value, out),
            Stmt::If { cond, then_body, else_body } => {
                walk_expr(cond, out);
                called_names(then_body, out);
                called_names(else_body, out);
            }
            Stmt::For { body, .. } => called_names(body, out),
            Stmt::Return(None) | Stmt::Ellipsis => {}
        }
    }
}

/// Depth-first cycle scan over the call graph; any cycle breaks the
/// bounded-execution guarantee.
fn check_recursion(
    module: &str,
    funcs: &BTreeMap<String, FuncDecl>,
    report: &mut ValidationReport,
) {
    let calls: BTreeMap<&str, BTreeSet<String>> = funcs
        .iter()
        .map(|(name, f)| {
            let mut out = BTreeSet::new();
            called_names(&f.body, &mut out);
            (name.as_str(), out)
        })
        .collect();

    fn visit(
        name: &str,
        calls: &BTreeMap<&str, BTreeSet<String>>,
        path: &mut BTreeSet<String>,
    ) -> Option<String> {
        if !path.insert(name.to_string()) {
            return Some(name.to_string());
        }
        if let Some(next) = calls.get(name) {
            for callee in next {
                if calls.contains_key(callee.as_str()) {
                    if let Some(hit) = visit(callee, calls, path) {
                        return Some(hit);
                    }
                }
            }
        }
        path.remove(name);
        None
    }

    for start in funcs.keys() {
        let mut path = BTreeSet::new();
        if let Some(offender) = visit(start, &calls, &mut path) {
            report.violations.push(Violation {
                module: module.to_string(),
                message: format!("recursion forbidden: `{offender}` participates in a call cycle"),
            });
            break;
        }
    }
}

/// Helpers that return nothing but are used as values get a warning, not a
/// rejection; the compiler substitutes 0.
fn check_value_use(
    module: &str,
    funcs: &BTreeMap<String, FuncDecl>,
    report: &mut ValidationReport,
) {
    fn body_returns_value(body: &[Stmt]) -> bool {
        body.iter().any(|s| match s {
            Stmt::Return(Some(_)) => true,
            Stmt::If { then_body, else_body, .. } => {
                body_returns_value(then_body) || body_returns_value(else_body)
            }
            Stmt::For { body, .. } => body_returns_value(body),
            _ => false,
        })
    }

    for f in funcs.values() {
        for stmt in &f.body {
            if let Stmt::Local { value: Expr::Call { callee, .. }, name, .. } = stmt {
                if let Expr::Ident(called) = callee.as_ref() {
                    if let Some(target) = funcs.get(called) {
                        if !body_returns_value(&target.body) {
                            report.warnings.push(Violation {
                                module: module.to_string(),
                                message: format!(
                                    "`{}` binds `{name}` from `{called}`, which returns no value; 0 is substituted",
                                    f.name
                                ),
                            });
                        }
                    }
                }
            }
        }
    }
}
