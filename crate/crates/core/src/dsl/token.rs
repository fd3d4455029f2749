//! Token model for the chain-definition language.

pub const KEYWORDS: [&str; 15] = [
    "Blockchain",
    "Root",
    "Aspect",
    "Mechanism",
    "Puzzle",
    "Consensus",
    "Roots",
    "func",
    "import",
    "return",
    "if",
    "else",
    "log",
    "this",
    "AddAspect",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Keyword,
    Str,
    Int,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Exact source spelling, quotes included for strings.
    pub text: String,
    /// Whitespace between the previous token and this one, comments removed.
    pub leading: String,
    /// 1-based source position of the first character of `text`.
    pub line: usize,
    pub column: usize,
}

impl Token {
    /// Unquoted payload of a string token.
    pub fn string_value(&self) -> &str {
        debug_assert_eq!(self.kind, TokenKind::Str);
        &self.text[1..self.text.len() - 1]
    }
}

/// Tokenized source plus the whitespace after the final token, enough to
/// reproduce the input (minus comments) byte for byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    pub trailing: String,
}

impl TokenStream {
    pub fn reconstruct(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(&t.leading);
            out.push_str(&t.text);
        }
        out.push_str(&self.trailing);
        out
    }
}
