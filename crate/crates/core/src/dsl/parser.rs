//! Recursive-descent parser. Statement semicolons are optional before a
//! closing brace; aspect and puzzle bodies are bare `name = literal` pairs.

use thiserror::Error;

use super::ast::*;
use super::token::{Token, TokenKind, TokenStream};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{line}:{column}: expected {expected}, found `{found}`")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub expected: String,
    pub found: String,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_text(&self) -> &str {
        self.peek().map(|t| t.text.as_str()).unwrap_or("")
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> ParseError {
        match self.peek() {
            Some(t) => ParseError {
                line: t.line,
                column: t.column,
                expected: expected.to_string(),
                found: t.text.clone(),
            },
            None => {
                let (line, column) = self
                    .tokens
                    .last()
                    .map(|t| (t.line, t.column + t.text.len()))
                    .unwrap_or((1, 1));
                ParseError {
                    line,
                    column,
                    expected: expected.to_string(),
                    found: "end of input".to_string(),
                }
            }
        }
    }

    fn expect(&mut self, text: &str) -> Result<Token, ParseError> {
        if self.peek_text() == text {
            Ok(self.bump().unwrap())
        } else {
            Err(self.error(&format!("`{text}`")))
        }
    }

    fn eat(&mut self, text: &str) -> bool {
        if self.peek_text() == text {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Ident => Ok(self.bump().unwrap().text),
            _ => Err(self.error(what)),
        }
    }

    /// Optional statement terminator.
    fn semi(&mut self) {
        self.eat(";");
    }
}

pub fn parse(stream: &TokenStream) -> Result<SourceProgram, ParseError> {
    let mut p = Parser { tokens: stream.tokens.clone(), pos: 0 };
    let mut imports = Vec::new();
    let mut decls = Vec::new();

    while p.peek().is_some() {
        match p.peek_text() {
            "import" => {
                p.bump();
                imports.push(p.expect_ident("module name")?);
                p.semi();
            }
            "Blockchain" => decls.push(Decl::Chain(parse_chain(&mut p)?)),
            "Root" => decls.push(Decl::Root(parse_root(&mut p)?)),
            "Aspect" => decls.push(Decl::Aspect(parse_aspect(&mut p)?)),
            "Mechanism" => decls.push(Decl::Mechanism(parse_mechanism(&mut p)?)),
            "Puzzle" => decls.push(Decl::Puzzle(parse_puzzle(&mut p)?)),
            "func" => decls.push(Decl::Func(parse_func(&mut p)?)),
            _ => return Err(p.error("a declaration")),
        }
    }
    Ok(SourceProgram { imports, decls })
}

fn parse_chain(p: &mut Parser) -> Result<ChainDecl, ParseError> {
    p.expect("Blockchain")?;
    let name = p.expect_ident("chain name")?;
    let mut capabilities = Vec::new();
    p.expect("(")?;
    while p.peek_text() != ")" {
        match p.peek() {
            Some(t) if t.kind == TokenKind::Ident || t.kind == TokenKind::Keyword => {
                capabilities.push(p.bump().unwrap().text);
            }
            _ => return Err(p.error("capability name")),
        }
        if !p.eat(",") {
            break;
        }
    }
    p.expect(")")?;
    p.expect("{")?;

    let mut members = Vec::new();
    while p.peek_text() != "}" {
        match p.peek_text() {
            "this" => {
                p.bump();
                p.expect(".")?;
                let field = p.expect_ident("field name")?;
                if field != "consensus" {
                    return Err(p.error("`consensus`"));
                }
                p.expect("=")?;
                let target = if p.peek_text() == "Consensus" {
                    p.bump();
                    p.expect(".")?;
                    ConsensusTarget::Builtin(p.expect_ident("consensus mode")?)
                } else {
                    ConsensusTarget::Named(p.expect_ident("consensus target")?)
                };
                p.semi();
                members.push(ChainMember::ConsensusAssign(target));
            }
            "Roots" => {
                p.bump();
                p.expect(".")?;
                let method = p.expect_ident("`add`")?;
                if method != "add" {
                    return Err(p.error("`add`"));
                }
                p.expect("(")?;
                let root = p.expect_ident("root name")?;
                p.expect(")")?;
                p.semi();
                members.push(ChainMember::RootsAdd(root));
            }
            "func" => {
                let f = parse_func(p)?;
                members.push(ChainMember::Func(f));
            }
            _ => return Err(p.error("a chain member")),
        }
    }
    p.expect("}")?;
    p.semi();
    Ok(ChainDecl { name, capabilities, members })
}

fn parse_root(p: &mut Parser) -> Result<RootDecl, ParseError> {
    p.expect("Root")?;
    let name = p.expect_ident("root name")?;
    p.expect("(")?;
    p.expect(")")?;
    p.expect("{")?;
    let mut aspects = Vec::new();
    let mut has_ellipsis = false;
    while p.peek_text() != "}" {
        match p.peek_text() {
            "AddAspect" => {
                p.bump();
                p.expect("(")?;
                aspects.push(p.expect_ident("aspect name")?);
                p.expect(")")?;
                p.semi();
            }
            "..." => {
                p.bump();
                has_ellipsis = true;
                p.semi();
            }
            _ => return Err(p.error("`AddAspect`, `...` or `}`")),
        }
    }
    p.expect("}")?;
    p.semi();
    Ok(RootDecl { name, aspects, has_ellipsis })
}

fn parse_attr_block(p: &mut Parser) -> Result<Vec<(String, Literal)>, ParseError> {
    p.expect("{")?;
    let mut attrs = Vec::new();
    while p.peek_text() != "}" {
        let name = p.expect_ident("attribute name")?;
        p.expect("=")?;
        let value = parse_literal(p)?;
        p.semi();
        attrs.push((name, value));
    }
    p.expect("}")?;
    p.semi();
    Ok(attrs)
}

fn parse_aspect(p: &mut Parser) -> Result<AspectDecl, ParseError> {
    p.expect("Aspect")?;
    let name = p.expect_ident("aspect name")?;
    let attrs = parse_attr_block(p)?;
    Ok(AspectDecl { name, attrs })
}

fn parse_puzzle(p: &mut Parser) -> Result<PuzzleDecl, ParseError> {
    p.expect("Puzzle")?;
    let name = p.expect_ident("puzzle name")?;
    let attrs = parse_attr_block(p)?;
    Ok(PuzzleDecl { name, attrs })
}

fn parse_mechanism(p: &mut Parser) -> Result<MechanismDecl, ParseError> {
    p.expect("Mechanism")?;
    let name = p.expect_ident("mechanism name")?;
    p.expect("{")?;
    let mut hooks = Vec::new();
    let mut has_ellipsis = false;
    while p.peek_text() != "}" {
        if p.eat("...") {
            has_ellipsis = true;
            p.semi();
            continue;
        }
        // hook declarations omit the func keyword
        let line = p.peek().map(|t| t.line).unwrap_or(1);
        let hook_name = p.expect_ident("hook name")?;
        let params = parse_params(p)?;
        let body = parse_block(p)?;
        p.semi();
        hooks.push(FuncDecl { name: hook_name, params, body, line });
    }
    p.expect("}")?;
    p.semi();
    Ok(MechanismDecl { name, hooks, has_ellipsis })
}

fn parse_func(p: &mut Parser) -> Result<FuncDecl, ParseError> {
    let line = p.peek().map(|t| t.line).unwrap_or(1);
    p.expect("func")?;
    let name = p.expect_ident("function name")?;
    let params = parse_params(p)?;
    let body = parse_block(p)?;
    p.semi();
    Ok(FuncDecl { name, params, body, line })
}

fn parse_params(p: &mut Parser) -> Result<Vec<Param>, ParseError> {
    p.expect("(")?;
    let mut params = Vec::new();
    while p.peek_text() != ")" {
        if p.eat("...") {
            params.push(Param::Ellipsis);
        } else {
            let first = p.expect_ident("parameter")?;
            if p.peek().map(|t| t.kind) == Some(TokenKind::Ident) {
                let name = p.bump().unwrap().text;
                params.push(Param::Named { type_name: Some(first), name });
            } else {
                params.push(Param::Named { type_name: None, name: first });
            }
        }
        if !p.eat(",") {
            break;
        }
    }
    p.expect(")")?;
    Ok(params)
}

fn parse_block(p: &mut Parser) -> Result<Vec<Stmt>, ParseError> {
    p.expect("{")?;
    let mut body = Vec::new();
    while p.peek_text() != "}" {
        body.push(parse_stmt(p)?);
    }
    p.expect("}")?;
    Ok(body)
}

fn parse_stmt(p: &mut Parser) -> Result<Stmt, ParseError> {
    match p.peek_text() {
        "log" => {
            p.bump();
            p.expect("(")?;
            let e = parse_expr(p)?;
            p.expect(")")?;
            p.semi();
            Ok(Stmt::Log(e))
        }
        "return" => {
            p.bump();
            if p.peek_text() == ";" || p.peek_text() == "}" {
                p.semi();
                return Ok(Stmt::Return(None));
            }
            let e = parse_expr(p)?;
            p.semi();
            Ok(Stmt::Return(Some(e)))
        }
        "if" => {
            p.bump();
            p.expect("(")?;
            let cond = parse_expr(p)?;
            p.expect(")")?;
            let then_body = parse_block(p)?;
            let else_body = if p.eat("else") { parse_block(p)? } else { Vec::new() };
            p.semi();
            Ok(Stmt::If { cond, then_body, else_body })
        }
        "for" => {
            p.bump();
            let var = p.expect_ident("loop variable")?;
            let kw = p.expect_ident("`in`")?;
            if kw != "in" {
                return Err(p.error("`in`"));
            }
            let start = parse_int(p)?;
            p.expect("..")?;
            let end = parse_int(p)?;
            let body = parse_block(p)?;
            p.semi();
            Ok(Stmt::For { var, start, end, body })
        }
        "..." => {
            p.bump();
            p.semi();
            Ok(Stmt::Ellipsis)
        }
        _ => {
            // `Type name = expr` local binding, else an expression statement
            if p.peek().map(|t| t.kind) == Some(TokenKind::Ident)
                && self_is_local_decl(p)
            {
                let type_name = p.bump().unwrap().text;
                let name = p.bump().unwrap().text;
                p.expect("=")?;
                let value = parse_expr(p)?;
                p.semi();
                return Ok(Stmt::Local { type_name, name, value });
            }
            let e = parse_expr(p)?;
            p.semi();
            Ok(Stmt::Expr(e))
        }
    }
}

fn self_is_local_decl(p: &Parser) -> bool {
    let second_is_ident = p
        .tokens
        .get(p.pos + 1)
        .map(|t| t.kind == TokenKind::Ident)
        .unwrap_or(false);
    let third_is_assign = p
        .tokens
        .get(p.pos + 2)
        .map(|t| t.text == "=")
        .unwrap_or(false);
    second_is_ident && third_is_assign
}

fn parse_int(p: &mut Parser) -> Result<i64, ParseError> {
    match p.peek() {
        Some(t) if t.kind == TokenKind::Int => {
            let text = p.bump().unwrap().text;
            text.parse().map_err(|_| ParseError {
                line: 0,
                column: 0,
                expected: "integer in range".into(),
                found: text,
            })
        }
        _ => Err(p.error("integer literal")),
    }
}

fn parse_literal(p: &mut Parser) -> Result<Literal, ParseError> {
    match p.peek() {
        Some(t) if t.kind == TokenKind::Int => Ok(Literal::Int(parse_int(p)?)),
        Some(t) if t.kind == TokenKind::Str => {
            let tok = p.bump().unwrap();
            Ok(Literal::Str(tok.string_value().to_string()))
        }
        Some(t) if t.text == "True" => {
            p.bump();
            Ok(Literal::Bool(true))
        }
        Some(t) if t.text == "False" => {
            p.bump();
            Ok(Literal::Bool(false))
        }
        _ => Err(p.error("literal")),
    }
}

// precedence: || < && < comparisons < additive < multiplicative < postfix
fn parse_expr(p: &mut Parser) -> Result<Expr, ParseError> {
    parse_or(p)
}

fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
    Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
}

fn parse_or(p: &mut Parser) -> Result<Expr, ParseError> {
    let mut lhs = parse_and(p)?;
    while p.eat("||") {
        let rhs = parse_and(p)?;
        lhs = binary(BinOp::Or, lhs, rhs);
    }
    Ok(lhs)
}

fn parse_and(p: &mut Parser) -> Result<Expr, ParseError> {
    let mut lhs = parse_cmp(p)?;
    while p.eat("&&") {
        let rhs = parse_cmp(p)?;
        lhs = binary(BinOp::And, lhs, rhs);
    }
    Ok(lhs)
}

fn parse_cmp(p: &mut Parser) -> Result<Expr, ParseError> {
    let lhs = parse_additive(p)?;
    let op = match p.peek_text() {
        "==" => BinOp::Eq,
        "!=" => BinOp::Ne,
        "<" => BinOp::Lt,
        ">" => BinOp::Gt,
        "<=" => BinOp::Le,
        ">=" => BinOp::Ge,
        _ => return Ok(lhs),
    };
    p.bump();
    let rhs = parse_additive(p)?;
    Ok(binary(op, lhs, rhs))
}

fn parse_additive(p: &mut Parser) -> Result<Expr, ParseError> {
    let mut lhs = parse_multiplicative(p)?;
    loop {
        let op = match p.peek_text() {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            _ => return Ok(lhs),
        };
        p.bump();
        let rhs = parse_multiplicative(p)?;
        lhs = binary(op, lhs, rhs);
    }
}

fn parse_multiplicative(p: &mut Parser) -> Result<Expr, ParseError> {
    let mut lhs = parse_postfix(p)?;
    loop {
        let op = match p.peek_text() {
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Mod,
            _ => return Ok(lhs),
        };
        p.bump();
        let rhs = parse_postfix(p)?;
        lhs = binary(op, lhs, rhs);
    }
}

fn parse_postfix(p: &mut Parser) -> Result<Expr, ParseError> {
    let mut e = parse_atom(p)?;
    loop {
        if p.eat(".") {
            let member = p.expect_ident("member name")?;
            e = Expr::Member { recv: Box::new(e), member };
        } else if p.peek_text() == "(" {
            p.bump();
            let mut args = Vec::new();
            while p.peek_text() != ")" {
                args.push(parse_expr(p)?);
                if !p.eat(",") {
                    break;
                }
            }
            p.expect(")")?;
            e = Expr::Call { callee: Box::new(e), args };
        } else {
            return Ok(e);
        }
    }
}

fn parse_atom(p: &mut Parser) -> Result<Expr, ParseError> {
    match p.peek() {
        Some(t) if t.kind == TokenKind::Int => Ok(Expr::Lit(Literal::Int(parse_int(p)?))),
        Some(t) if t.kind == TokenKind::Str => {
            let tok = p.bump().unwrap();
            Ok(Expr::Lit(Literal::Str(tok.string_value().to_string())))
        }
        Some(t) if t.text == "True" => {
            p.bump();
            Ok(Expr::Lit(Literal::Bool(true)))
        }
        Some(t) if t.text == "False" => {
            p.bump();
            Ok(Expr::Lit(Literal::Bool(false)))
        }
        Some(t) if t.kind == TokenKind::Ident => Ok(Expr::Ident(p.bump().unwrap().text)),
        Some(t) if t.text == "(" => {
            p.bump();
            let e = parse_expr(p)?;
            p.expect(")")?;
            Ok(e)
        }
        _ => Err(p.error("an expression")),
    }
}
