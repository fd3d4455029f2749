//! Hand-rolled lexer. Maximal munch, `//` line comments, strings in either
//! quote style, and three dot tokens (`.`, `..`, `...`).

use thiserror::Error;

use super::token::{is_keyword, Token, TokenKind, TokenStream};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{line}:{column}: unexpected character sequence `{fragment}`")]
pub struct LexError {
    pub line: usize,
    pub column: usize,
    pub fragment: String,
}

struct Cursor<'a> {
    rest: &'a str,
    line: usize,
    column: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.rest.chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.rest = &self.rest[c.len_utf8()..];
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn eat_while(&mut self, pred: impl Fn(char) -> bool) -> String {
        let mut out = String::new();
        while let Some(c) = self.peek() {
            if !pred(c) {
                break;
            }
            out.push(c);
            self.bump();
        }
        out
    }
}

const PUNCT_DOUBLES: [&str; 5] = ["==", "!=", ">=", "<=", ".."];
const PUNCT_SINGLES: &str = "(){}[];,.=+-*/%<>!";

pub fn tokenize(source: &str) -> Result<TokenStream, LexError> {
    let mut cur = Cursor { rest: source, line: 1, column: 1 };
    let mut tokens = Vec::new();
    let mut leading = String::new();

    loop {
        // gather whitespace and drop comments
        loop {
            let ws = cur.eat_while(|c| c.is_whitespace());
            leading.push_str(&ws);
            if cur.rest.starts_with("//") {
                cur.eat_while(|c| c != '\n');
            } else {
                break;
            }
        }
        let (line, column) = (cur.line, cur.column);
        let Some(c) = cur.peek() else {
            return Ok(TokenStream { tokens, trailing: leading });
        };

        let (kind, text) = if c.is_ascii_alphabetic() || c == '_' {
            let word = cur.eat_while(|c| c.is_ascii_alphanumeric() || c == '_');
            let kind = if is_keyword(&word) { TokenKind::Keyword } else { TokenKind::Ident };
            (kind, word)
        } else if c.is_ascii_digit() {
            (TokenKind::Int, cur.eat_while(|c| c.is_ascii_digit()))
        } else if c == '"' || c == '\'' {
            let quote = c;
            let mut text = String::new();
            text.push(quote);
            cur.bump();
            loop {
                match cur.bump() {
                    Some(q) if q == quote => {
                        text.push(quote);
                        break;
                    }
                    Some('\n') | None => {
                        return Err(LexError {
                            line,
                            column,
                            fragment: "unterminated string".into(),
                        })
                    }
                    Some(other) => text.push(other),
                }
            }
            (TokenKind::Str, text)
        } else if cur.rest.starts_with("...") {
            cur.bump();
            cur.bump();
            cur.bump();
            (TokenKind::Punct, "...".to_string())
        } else if let Some(two) = PUNCT_DOUBLES.iter().find(|p| cur.rest.starts_with(**p)) {
            cur.bump();
            cur.bump();
            (TokenKind::Punct, two.to_string())
        } else if PUNCT_SINGLES.contains(c) {
            cur.bump();
            (TokenKind::Punct, c.to_string())
        } else {
            return Err(LexError { line, column, fragment: c.to_string() });
        };

        tokens.push(Token {
            kind,
            text,
            leading: std::mem::take(&mut leading),
            line,
            column,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds_and_texts(src: &str) -> Vec<(TokenKind, String)> {
        tokenize(src)
            .unwrap()
            .tokens
            .into_iter()
            .map(|t| (t.kind, t.text))
            .collect()
    }

    #[test]
    fn keyword_and_ident() {
        assert_eq!(
            kinds_and_texts("Blockchain B1"),
            vec![
                (TokenKind::Keyword, "Blockchain".to_string()),
                (TokenKind::Ident, "B1".to_string()),
            ]
        );
    }

    #[test]
    fn empty_source_yields_no_tokens() {
        let stream = tokenize("").unwrap();
        assert!(stream.tokens.is_empty());
        assert_eq!(stream.reconstruct(), "");
    }

    #[test]
    fn dots_munch_maximally() {
        let texts: Vec<String> = tokenize(". .. ... 0..3")
            .unwrap()
            .tokens
            .into_iter()
            .map(|t| t.text)
            .collect();
        assert_eq!(texts, vec![".", "..", "...", "0", "..", "3"]);
    }

    #[test]
    fn both_quote_styles() {
        let toks = kinds_and_texts(r#"log("a"); log('b');"#);
        assert!(toks.contains(&(TokenKind::Str, "\"a\"".to_string())));
        assert!(toks.contains(&(TokenKind::Str, "'b'".to_string())));
    }

    #[test]
    fn reconstruction_is_exact_without_comments() {
        let src = "Blockchain  B1(Consensus) {\n\tthis.consensus = Consensus.POW;\n}\n";
        assert_eq!(tokenize(src).unwrap().reconstruct(), src);
    }

    #[test]
    fn comments_are_stripped() {
        let src = "import a; // pull in a\nimport b;\n";
        let expected = "import a; \nimport b;\n";
        assert_eq!(tokenize(src).unwrap().reconstruct(), expected);
    }

    #[test]
    fn errors_carry_position() {
        let err = tokenize("import a;\n  ¤").unwrap_err();
        assert_eq!((err.line, err.column), (2, 3));
    }

    #[test]
    fn unterminated_string_is_an_error() {
        assert!(tokenize("log(\"oops);").is_err());
    }
}
