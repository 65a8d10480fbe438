//! Lossless C tokenizer.
//!
//! Every byte of the input ends up in exactly one token, so concatenating the
//! lexemes reproduces the source. Whitespace and comments are tokens too.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Identifier,
    Keyword,
    StringLit,
    CharLit,
    IntLit,
    FloatLit,
    Punctuator,
    /// `#include` lines as a whole, or the `#name` head of any other directive.
    Preprocessor,
    Comment,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    pub span: Range<usize>,
}

impl Token {
    pub fn is_trivia(&self) -> bool {
        matches!(self.kind, TokenKind::Whitespace | TokenKind::Comment)
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punctuator && self.lexeme == p
    }

    pub fn is_keyword(&self, k: &str) -> bool {
        self.kind == TokenKind::Keyword && self.lexeme == k
    }

    pub fn is_literal(&self) -> bool {
        matches!(
            self.kind,
            TokenKind::StringLit | TokenKind::CharLit | TokenKind::IntLit | TokenKind::FloatLit
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("lex error at line {line}, column {column} (byte {offset}): {message}")]
pub struct LexError {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

pub const KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else",
    "enum", "extern", "float", "for", "goto", "if", "inline", "int", "long", "register",
    "restrict", "return", "short", "signed", "sizeof", "static", "struct", "switch", "typedef",
    "union", "unsigned", "void", "volatile", "while", "_Alignas", "_Alignof", "_Atomic", "_Bool",
    "_Complex", "_Generic", "_Imaginary", "_Noreturn", "_Static_assert", "_Thread_local",
    "__attribute__", "__asm__", "asm", "__inline", "__restrict",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

const PUNCTUATORS: &[&str] = &[
    "...", "<<=", ">>=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "*=",
    "/=", "%=", "+=", "-=", "&=", "^=", "|=", "##",
];

pub fn tokenize_c(source: &str) -> Result<Vec<Token>, LexError> {
    Lexer::new(source).run()
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    tokens: Vec<Token>,
    // Only whitespace or comments seen since the last newline.
    at_line_start: bool,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            tokens: Vec::new(),
            at_line_start: true,
        }
    }

    fn peek(&self, ahead: usize) -> Option<u8> {
        self.bytes.get(self.pos + ahead).copied()
    }

    fn error(&self, offset: usize, message: impl Into<String>) -> LexError {
        let before = &self.src[..offset];
        let line = before.matches('\n').count() + 1;
        let column = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
        LexError {
            offset,
            line,
            column,
            message: message.into(),
        }
    }

    fn push(&mut self, kind: TokenKind, start: usize) {
        self.tokens.push(Token {
            kind,
            lexeme: self.src[start..self.pos].to_string(),
            span: start..self.pos,
        });
    }

    fn run(mut self) -> Result<Vec<Token>, LexError> {
        while self.pos < self.bytes.len() {
            let start = self.pos;
            let b = self.bytes[self.pos];
            if is_space(b) || self.line_continuation_len() > 0 {
                self.whitespace();
                continue;
            }
            if b == b'/' && self.peek(1) == Some(b'/') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                self.push(TokenKind::Comment, start);
                continue;
            }
            if b == b'/' && self.peek(1) == Some(b'*') {
                match self.src[self.pos + 2..].find("*/") {
                    Some(end) => self.pos += 2 + end + 2,
                    None => return Err(self.error(start, "unterminated block comment")),
                }
                self.push(TokenKind::Comment, start);
                continue;
            }
            let line_start = self.at_line_start;
            self.at_line_start = false;
            if b == b'#' && line_start {
                self.directive();
                continue;
            }
            if b == b'"' || b == b'\'' {
                self.quoted(start, b)?;
                continue;
            }
            if is_ident_start(b) {
                self.identifier(start)?;
                continue;
            }
            if b.is_ascii_digit() || (b == b'.' && self.peek(1).is_some_and(|c| c.is_ascii_digit())) {
                self.number(start);
                continue;
            }
            self.punctuator(start);
        }
        Ok(self.tokens)
    }

    fn line_continuation_len(&self) -> usize {
        if self.peek(0) != Some(b'\\') {
            return 0;
        }
        match (self.peek(1), self.peek(2)) {
            (Some(b'\n'), _) => 2,
            (Some(b'\r'), Some(b'\n')) => 3,
            _ => 0,
        }
    }

    fn whitespace(&mut self) {
        let start = self.pos;
        loop {
            let cont = self.line_continuation_len();
            if cont > 0 {
                self.pos += cont;
                continue;
            }
            match self.peek(0) {
                Some(b) if is_space(b) => {
                    if b == b'\n' {
                        self.at_line_start = true;
                    }
                    self.pos += 1;
                }
                _ => break,
            }
        }
        self.push(TokenKind::Whitespace, start);
    }

    fn directive(&mut self) {
        let start = self.pos;
        self.pos += 1;
        while matches!(self.peek(0), Some(b' ' | b'\t')) {
            self.pos += 1;
        }
        let name_start = self.pos;
        while self.peek(0).is_some_and(is_ident_continue) {
            self.pos += 1;
        }
        if &self.src[name_start..self.pos] == "include" {
            // The whole include line is opaque.
            while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                if self.line_continuation_len() > 0 {
                    self.pos += self.line_continuation_len();
                    continue;
                }
                self.pos += 1;
            }
            // Leave a trailing '\r' to whitespace so CRLF files stay symmetric.
            if self.pos > start && self.bytes[self.pos - 1] == b'\r' {
                self.pos -= 1;
            }
        }
        self.push(TokenKind::Preprocessor, start);
    }

    fn quoted(&mut self, start: usize, quote: u8) -> Result<(), LexError> {
        // `start` may precede the quote when an encoding prefix was consumed.
        self.pos += 1;
        loop {
            match self.peek(0) {
                None | Some(b'\n') => {
                    let what = if quote == b'"' { "string" } else { "character" };
                    return Err(self.error(start, format!("unterminated {what} literal")));
                }
                Some(b'\\') => {
                    self.pos += 1;
                    // Skip whatever is escaped, including a UTF-8 sequence.
                    if let Some(c) = self.src[self.pos..].chars().next() {
                        self.pos += c.len_utf8();
                    }
                }
                Some(b) if b == quote => {
                    self.pos += 1;
                    break;
                }
                Some(_) => {
                    let c = self.src[self.pos..].chars().next().unwrap_or('\0');
                    self.pos += c.len_utf8().max(1);
                }
            }
        }
        let kind = if quote == b'"' {
            TokenKind::StringLit
        } else {
            TokenKind::CharLit
        };
        self.push(kind, start);
        Ok(())
    }

    fn identifier(&mut self, start: usize) -> Result<(), LexError> {
        while self.peek(0).is_some_and(is_ident_continue) {
            self.pos += 1;
        }
        let text = &self.src[start..self.pos];
        if matches!(text, "L" | "u" | "U" | "u8") {
            if let Some(q @ (b'"' | b'\'')) = self.peek(0) {
                return self.quoted(start, q);
            }
        }
        let kind = if is_keyword(text) {
            TokenKind::Keyword
        } else {
            TokenKind::Identifier
        };
        self.push(kind, start);
        Ok(())
    }

    fn number(&mut self, start: usize) {
        // pp-number: digits, letters, '_', '.', and signed exponents.
        while let Some(b) = self.peek(0) {
            if matches!(b, b'+' | b'-') {
                let prev = self.bytes[self.pos - 1];
                let hex = self.src[start..self.pos].starts_with("0x")
                    || self.src[start..self.pos].starts_with("0X");
                let exp = if hex {
                    matches!(prev, b'p' | b'P')
                } else {
                    matches!(prev, b'e' | b'E')
                };
                if exp {
                    self.pos += 1;
                    continue;
                }
                break;
            }
            if b.is_ascii_alphanumeric() || b == b'_' || b == b'.' {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        let lower = text.to_ascii_lowercase();
        let is_float = if lower.starts_with("0x") {
            lower.contains('.') || lower.contains('p')
        } else {
            lower.contains('.') || lower.contains('e')
        };
        let kind = if is_float {
            TokenKind::FloatLit
        } else {
            TokenKind::IntLit
        };
        self.push(kind, start);
    }

    fn punctuator(&mut self, start: usize) {
        let rest = &self.src[self.pos..];
        let len = PUNCTUATORS
            .iter()
            .find(|p| rest.starts_with(**p))
            .map(|p| p.len())
            .unwrap_or_else(|| rest.chars().next().map_or(1, char::len_utf8));
        self.pos += len;
        self.push(TokenKind::Punctuator, start);
    }
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b == b'$'
}

fn is_ident_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

/// Reassembles a token stream into source text.
pub fn concat(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.lexeme.as_str()).collect()
}

/// The text between the quotes of a string or character literal, prefix removed.
pub fn literal_body(lexeme: &str) -> &str {
    let open = lexeme.find(['"', '\'']).unwrap_or(0);
    let inner = &lexeme[open + 1..];
    inner.strip_suffix(['"', '\'']).unwrap_or(inner)
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenKind::Identifier => "identifier",
            TokenKind::Keyword => "keyword",
            TokenKind::StringLit => "string_lit",
            TokenKind::CharLit => "char_lit",
            TokenKind::IntLit => "int_lit",
            TokenKind::FloatLit => "float_lit",
            TokenKind::Punctuator => "punctuator",
            TokenKind::Preprocessor => "preprocessor",
            TokenKind::Comment => "comment",
            TokenKind::Whitespace => "whitespace",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds(src: &str) -> Vec<(TokenKind, String)> {
        tokenize_c(src)
            .unwrap()
            .into_iter()
            .map(|t| (t.kind, t.lexeme))
            .collect()
    }

    #[test]
    fn simple_declaration() {
        use TokenKind::*;
        let got = kinds("int x=1;");
        let want = vec![
            (Keyword, "int".to_string()),
            (Whitespace, " ".to_string()),
            (Identifier, "x".to_string()),
            (Punctuator, "=".to_string()),
            (IntLit, "1".to_string()),
            (Punctuator, ";".to_string()),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn unterminated_string_is_an_error() {
        let err = tokenize_c("char *s = \"abc").unwrap_err();
        assert_eq!(err.offset, 10);
        assert!(err.message.contains("string"));
    }

    #[test]
    fn unterminated_char_and_comment() {
        assert!(tokenize_c("char c = 'a;\n").is_err());
        assert!(tokenize_c("int x; /* never closed").is_err());
    }

    #[test]
    fn include_line_is_opaque_but_define_is_not() {
        let toks = tokenize_c("#include <stdio.h>\n#define SIZE 1024\n").unwrap();
        assert_eq!(toks[0].kind, TokenKind::Preprocessor);
        assert_eq!(toks[0].lexeme, "#include <stdio.h>");
        let define = toks.iter().find(|t| t.lexeme == "#define").unwrap();
        assert_eq!(define.kind, TokenKind::Preprocessor);
        assert!(toks.iter().any(|t| t.kind == TokenKind::Identifier && t.lexeme == "SIZE"));
        assert!(toks.iter().any(|t| t.kind == TokenKind::IntLit && t.lexeme == "1024"));
    }

    #[test]
    fn numbers_are_classified() {
        let toks = tokenize_c("0.7 1e-3 0x1f90 0x1.8p+1 10u .5f 0xFFFFFFFFu").unwrap();
        let lits: Vec<_> = toks.iter().filter(|t| !t.is_trivia()).map(|t| t.kind).collect();
        use TokenKind::*;
        assert_eq!(lits, vec![FloatLit, FloatLit, IntLit, FloatLit, IntLit, FloatLit, IntLit]);
    }

    #[test]
    fn prefixed_literals_and_escapes() {
        let toks = tokenize_c(r#"L"wide" u8"x" '\'' "a\"b""#).unwrap();
        let lits: Vec<_> = toks.iter().filter(|t| !t.is_trivia()).map(|t| t.lexeme.as_str()).collect();
        assert_eq!(lits, vec![r#"L"wide""#, r#"u8"x""#, r"'\''", r#""a\"b""#]);
        assert_eq!(literal_body(r#"L"wide""#), "wide");
    }

    #[test]
    fn hash_inside_a_line_is_a_punctuator() {
        let toks = tokenize_c("#define STR(x) #x\n").unwrap();
        let hashes: Vec<_> = toks.iter().filter(|t| t.lexeme.starts_with('#')).map(|t| t.kind).collect();
        assert_eq!(hashes, vec![TokenKind::Preprocessor, TokenKind::Punctuator]);
    }

    #[test]
    fn running_examples_round_trip() {
        for name in ["delete_listen", "pid_d"] {
            let path = format!("{}/../../corpus/{name}.c", env!("CARGO_MANIFEST_DIR"));
            let src = std::fs::read_to_string(path).unwrap();
            let toks = tokenize_c(&src).unwrap();
            assert_eq!(concat(&toks), src);
            for w in toks.windows(2) {
                assert_eq!(w[0].span.end, w[1].span.start);
            }
        }
    }

    proptest! {
        #[test]
        fn lossless_on_arbitrary_text(src in "[ -~\t\n]{0,200}") {
            if let Ok(toks) = tokenize_c(&src) {
                prop_assert_eq!(concat(&toks), src);
            }
        }

        #[test]
        fn lossless_on_unicode(src in "\\PC{0,80}") {
            if let Ok(toks) = tokenize_c(&src) {
                prop_assert_eq!(concat(&toks), src);
            }
        }
    }
}
