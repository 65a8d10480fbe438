//! Lightweight symbol scan over a token stream.
//!
//! Definitions are recognised from declarator shapes and `#define` lines, not
//! from a full C front end. Anything used in the file but never defined in it
//! (library calls, external struct members, system typedefs) is left alone.

use std::collections::{BTreeSet, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::lexer::{literal_body, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Ipv4String,
    PortInt,
    FloatConst,
    IntConst,
    PathString,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueSite {
    pub token_index: usize,
    pub span: Range<usize>,
    pub value_kind: ValueKind,
    pub original: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenameSites {
    pub functions: BTreeSet<String>,
    pub variables: BTreeSet<String>,
    pub defines: BTreeSet<String>,
    pub values: Vec<ValueSite>,
}

impl RenameSites {
    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
            && self.variables.is_empty()
            && self.defines.is_empty()
            && self.values.is_empty()
    }

    pub fn identifier_count(&self) -> usize {
        self.functions.len() + self.variables.len() + self.defines.len()
    }
}

/// Classifies a literal lexeme by shape. Returns `None` for literals that are
/// never randomized (format strings, other text, char literals).
pub fn classify_literal(token: &Token) -> Option<ValueKind> {
    match token.kind {
        TokenKind::StringLit => {
            let body = literal_body(&token.lexeme);
            if body.contains('%') {
                None
            } else if is_dotted_quad(body) {
                Some(ValueKind::Ipv4String)
            } else if is_path(body) {
                Some(ValueKind::PathString)
            } else {
                None
            }
        }
        TokenKind::IntLit => {
            let v = parse_c_int(&token.lexeme)?;
            if (1024..=65535).contains(&v) {
                Some(ValueKind::PortInt)
            } else {
                Some(ValueKind::IntConst)
            }
        }
        TokenKind::FloatLit => Some(ValueKind::FloatConst),
        _ => None,
    }
}

fn is_dotted_quad(s: &str) -> bool {
    let parts: Vec<&str> = s.split('.').collect();
    parts.len() == 4
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.len() <= 3 && p.bytes().all(|b| b.is_ascii_digit()) && p.parse::<u16>().is_ok_and(|v| v <= 255))
}

fn is_path(s: &str) -> bool {
    let rest = s
        .strip_prefix("./")
        .or_else(|| s.strip_prefix("../"))
        .or_else(|| s.strip_prefix('/'));
    match rest {
        Some(rest) => rest
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'/' | b'.' | b'_' | b'-')),
        None => false,
    }
}

/// Parses a C integer literal (decimal, hex, octal, binary; suffixes ignored).
pub fn parse_c_int(lexeme: &str) -> Option<u64> {
    let s = lexeme.trim_end_matches(['u', 'U', 'l', 'L']);
    let lower = s.to_ascii_lowercase();
    if let Some(hex) = lower.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).ok()
    } else if let Some(bin) = lower.strip_prefix("0b") {
        u64::from_str_radix(bin, 2).ok()
    } else if lower.len() > 1 && lower.starts_with('0') {
        u64::from_str_radix(&lower[1..], 8).ok()
    } else {
        lower.parse().ok()
    }
}

/// Parses a C floating literal (decimal or hex; suffixes ignored).
pub fn parse_c_float(lexeme: &str) -> Option<f64> {
    let s = lexeme.trim_end_matches(['f', 'F', 'l', 'L']);
    let lower = s.to_ascii_lowercase();
    if let Some(hex) = lower.strip_prefix("0x") {
        let (mant, exp) = hex.split_once('p').unwrap_or((hex, "0"));
        let (int_part, frac_part) = mant.split_once('.').unwrap_or((mant, ""));
        let mut value = 0f64;
        for c in int_part.chars().chain(frac_part.chars()) {
            value = value * 16.0 + f64::from(c.to_digit(16)?);
        }
        value /= 16f64.powi(frac_part.len() as i32);
        let exp: i32 = exp.parse().ok()?;
        Some(value * 2f64.powi(exp))
    } else {
        s.parse().ok()
    }
}

const QUALIFIERS: &[&str] = &[
    "typedef", "extern", "static", "auto", "register", "const", "volatile", "inline", "restrict",
    "_Thread_local", "__inline", "__restrict", "_Noreturn", "_Atomic",
];
const TYPE_KEYWORDS: &[&str] = &[
    "void", "char", "short", "int", "long", "float", "double", "signed", "unsigned", "_Bool",
    "_Complex",
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Ctx {
    File,
    Block,
    Struct,
    ForInit,
    Param,
}

struct Spec {
    end: usize,
    is_typedef: bool,
    is_extern: bool,
}

struct Declarator {
    name: Option<usize>,
    end: usize,
    /// Parameter list of a directly named function declarator.
    params: Option<(usize, usize)>,
}

struct Scanner<'t> {
    toks: &'t [Token],
    /// Indices of significant code tokens (no trivia, no directive bodies).
    sig: Vec<usize>,
    matching: Vec<Option<usize>>,
    functions: BTreeSet<String>,
    variables: BTreeSet<String>,
    fields: HashSet<String>,
    typedefs: HashSet<String>,
    defines: BTreeSet<String>,
    init_literals: Vec<usize>,
}

pub fn collect_rename_sites(tokens: &[Token]) -> RenameSites {
    let mut scanner = Scanner::new(tokens);
    scanner.scan_file();
    scanner.finish()
}

impl<'t> Scanner<'t> {
    fn new(toks: &'t [Token]) -> Self {
        let mut sig = Vec::new();
        let mut defines = BTreeSet::new();
        let mut in_directive = false;
        let mut expect_define_name = false;
        for (i, t) in toks.iter().enumerate() {
            if in_directive {
                if t.kind == TokenKind::Whitespace && ends_line(&t.lexeme) {
                    in_directive = false;
                    expect_define_name = false;
                } else if expect_define_name && !t.is_trivia() {
                    if t.kind == TokenKind::Identifier {
                        defines.insert(t.lexeme.clone());
                    }
                    expect_define_name = false;
                }
                continue;
            }
            if t.kind == TokenKind::Preprocessor {
                if !t.lexeme.trim_start_matches('#').trim_start().starts_with("include") {
                    in_directive = true;
                    expect_define_name = directive_name(&t.lexeme) == "define";
                }
                continue;
            }
            if !t.is_trivia() {
                sig.push(i);
            }
        }
        let matching = match_brackets(toks, &sig);
        Self {
            toks,
            sig,
            matching,
            functions: BTreeSet::new(),
            variables: BTreeSet::new(),
            fields: HashSet::new(),
            typedefs: HashSet::new(),
            defines,
            init_literals: Vec::new(),
        }
    }

    fn tok(&self, p: usize) -> Option<&'t Token> {
        self.sig.get(p).map(|&i| &self.toks[i])
    }

    fn is_punct(&self, p: usize, s: &str) -> bool {
        self.tok(p).is_some_and(|t| t.is_punct(s))
    }

    fn is_ident(&self, p: usize) -> bool {
        self.tok(p).is_some_and(|t| t.kind == TokenKind::Identifier)
    }

    fn text(&self, p: usize) -> &'t str {
        self.tok(p).map_or("", |t| t.lexeme.as_str())
    }

    fn scan_file(&mut self) {
        let mut p = 0;
        while p < self.sig.len() {
            p = self.declaration(p, Ctx::File).unwrap_or(p + 1);
        }
    }

    /// Tries to read one declaration (or function definition) starting at `p`.
    /// Returns the position just past it.
    fn declaration(&mut self, p: usize, ctx: Ctx) -> Option<usize> {
        let spec = self.specifiers(p)?;
        let mut q = spec.end;
        if self.is_punct(q, ";") {
            return Some(q + 1);
        }
        loop {
            let d = self.declarator(q)?;
            q = d.end;
            if let (Some(params), Some(name)) = (d.params, d.name) {
                if ctx == Ctx::File && self.is_punct(q, "{") {
                    let close = self.matching[q]?;
                    let fname = self.text(name).to_string();
                    if fname != "main" {
                        self.functions.insert(fname);
                    }
                    self.params(params.0, params.1);
                    self.block(q + 1, close);
                    return Some(close + 1);
                }
                // Prototype: nothing defined here.
            } else if let Some(name) = d.name {
                let name = self.text(name).to_string();
                if spec.is_typedef {
                    self.typedefs.insert(name.clone());
                    self.variables.insert(name);
                } else if !spec.is_extern {
                    if ctx == Ctx::Struct {
                        self.fields.insert(name.clone());
                    }
                    self.variables.insert(name);
                }
            }
            if ctx == Ctx::Struct && self.is_punct(q, ":") {
                q = self.skip_expression(q + 1);
            }
            if self.is_punct(q, "=") {
                q += 1;
                let single_literal = self.tok(q).is_some_and(Token::is_literal)
                    && (self.is_punct(q + 1, ",") || self.is_punct(q + 1, ";"));
                if single_literal
                    && matches!(ctx, Ctx::File | Ctx::Block)
                    && !spec.is_typedef
                    && !spec.is_extern
                {
                    self.init_literals.push(self.sig[q]);
                }
                q = self.skip_expression(q);
            }
            if ctx == Ctx::Param {
                return Some(q);
            }
            if self.is_punct(q, ",") {
                q += 1;
                continue;
            }
            if self.is_punct(q, ";") {
                return Some(q + 1);
            }
            return None;
        }
    }

    fn specifiers(&mut self, p: usize) -> Option<Spec> {
        let mut q = p;
        let mut saw_type = false;
        let mut is_typedef = false;
        let mut is_extern = false;
        while let Some(t) = self.tok(q) {
            let s = t.lexeme.as_str();
            match t.kind {
                TokenKind::Keyword if QUALIFIERS.contains(&s) => {
                    is_typedef |= s == "typedef";
                    is_extern |= s == "extern";
                    q += 1;
                }
                TokenKind::Keyword if TYPE_KEYWORDS.contains(&s) => {
                    saw_type = true;
                    q += 1;
                }
                TokenKind::Keyword if matches!(s, "struct" | "union" | "enum") => {
                    saw_type = true;
                    q += 1;
                    let tag = if self.is_ident(q) {
                        q += 1;
                        Some(q - 1)
                    } else {
                        None
                    };
                    if self.is_punct(q, "{") {
                        let close = self.matching[q]?;
                        if s == "enum" {
                            self.enumerators(q + 1, close);
                        } else {
                            self.struct_body(q + 1, close);
                        }
                        if let Some(tag) = tag {
                            self.variables.insert(self.text(tag).to_string());
                        }
                        q = close + 1;
                    } else if tag.is_none() {
                        return None;
                    }
                }
                TokenKind::Keyword if s == "__attribute__" => {
                    q = self.skip_parens(q + 1);
                }
                TokenKind::Identifier if !saw_type => {
                    let typedef_like = self.typedefs.contains(s)
                        || self.is_ident(q + 1)
                        || (self.is_punct(q + 1, "*") && self.pointer_declarator_follows(q + 1));
                    if !typedef_like {
                        break;
                    }
                    saw_type = true;
                    q += 1;
                }
                _ => break,
            }
        }
        saw_type.then_some(Spec {
            end: q,
            is_typedef,
            is_extern,
        })
    }

    fn pointer_declarator_follows(&self, mut q: usize) -> bool {
        while self.is_punct(q, "*")
            || self
                .tok(q)
                .is_some_and(|t| t.kind == TokenKind::Keyword && matches!(t.lexeme.as_str(), "const" | "volatile" | "restrict"))
        {
            q += 1;
        }
        self.is_ident(q) && ["=", ";", ",", "[", ")"].iter().any(|p| self.is_punct(q + 1, p))
    }

    fn declarator(&mut self, mut q: usize) -> Option<Declarator> {
        while self.is_punct(q, "*")
            || self.tok(q).is_some_and(|t| {
                t.kind == TokenKind::Keyword
                    && matches!(t.lexeme.as_str(), "const" | "volatile" | "restrict" | "__restrict")
            })
        {
            q += 1;
        }
        let mut name = None;
        let mut direct = false;
        if self.is_punct(q, "(") && self.is_punct(q + 1, "*") {
            let inner = self.declarator(q + 1)?;
            if !self.is_punct(inner.end, ")") {
                return None;
            }
            name = inner.name;
            q = inner.end + 1;
        } else if self.is_ident(q) {
            name = Some(q);
            direct = true;
            q += 1;
        }
        let mut params = None;
        loop {
            if self.is_punct(q, "[") {
                q = self.matching[q]? + 1;
            } else if self.is_punct(q, "(") {
                let close = self.matching[q]?;
                if direct && params.is_none() {
                    params = Some((q, close));
                }
                q = close + 1;
            } else if self.tok(q).is_some_and(|t| t.is_keyword("__attribute__")) {
                q = self.skip_parens(q + 1);
            } else {
                break;
            }
        }
        Some(Declarator { name, end: q, params })
    }

    fn params(&mut self, open: usize, close: usize) {
        let mut start = open + 1;
        while start < close {
            let end = self.skip_expression(start).min(close);
            // Unnamed or unusual parameters simply record nothing.
            let _ = self.declaration(start, Ctx::Param);
            start = end + 1;
        }
    }

    fn struct_body(&mut self, open_after: usize, close: usize) {
        let mut p = open_after;
        while p < close {
            p = self.declaration(p, Ctx::Struct).unwrap_or(p + 1);
        }
    }

    fn enumerators(&mut self, open_after: usize, close: usize) {
        let mut p = open_after;
        while p < close {
            if self.is_ident(p) {
                self.variables.insert(self.text(p).to_string());
            }
            p = self.skip_expression(p) + 1;
        }
    }

    fn block(&mut self, start: usize, close: usize) {
        let mut p = start;
        let mut stmt_start = true;
        while p < close {
            if stmt_start {
                if let Some(end) = self.declaration(p, Ctx::Block) {
                    p = end;
                    continue;
                }
                stmt_start = false;
            }
            let Some(t) = self.tok(p) else { break };
            if t.is_punct("{") {
                let Some(c) = self.matching[p] else { break };
                self.block(p + 1, c);
                p = c + 1;
                stmt_start = true;
            } else if t.is_punct(";") || t.is_punct(":") {
                p += 1;
                stmt_start = true;
            } else if t.kind == TokenKind::Keyword
                && matches!(t.lexeme.as_str(), "if" | "while" | "for" | "switch")
                && self.is_punct(p + 1, "(")
            {
                let Some(c) = self.matching[p + 1] else { break };
                if t.lexeme == "for" {
                    let _ = self.declaration(p + 2, Ctx::ForInit);
                }
                p = c + 1;
                stmt_start = true;
            } else if t.is_keyword("else") || t.is_keyword("do") {
                p += 1;
                stmt_start = true;
            } else if t.is_punct("(") || t.is_punct("[") {
                p = self.matching[p].map_or(p + 1, |c| c + 1);
            } else {
                p += 1;
            }
        }
    }

    /// Skips to the next `,`, `;`, or unmatched closer at depth 0.
    fn skip_expression(&self, mut q: usize) -> usize {
        while let Some(t) = self.tok(q) {
            if t.kind == TokenKind::Punctuator {
                match t.lexeme.as_str() {
                    "(" | "[" | "{" => match self.matching[q] {
                        Some(c) => {
                            q = c + 1;
                            continue;
                        }
                        None => return q,
                    },
                    "," | ";" | ")" | "]" | "}" => return q,
                    _ => {}
                }
            }
            q += 1;
        }
        q
    }

    fn skip_parens(&self, q: usize) -> usize {
        if self.is_punct(q, "(") {
            self.matching[q].map_or(q + 1, |c| c + 1)
        } else {
            q
        }
    }

    fn finish(self) -> RenameSites {
        let mut member_names = HashSet::new();
        for p in 1..self.sig.len() {
            if self.is_ident(p) && (self.is_punct(p - 1, ".") || self.is_punct(p - 1, "->")) {
                member_names.insert(self.text(p));
            }
        }
        let keep = |name: &String| {
            name != "main" && (!member_names.contains(name.as_str()) || self.fields.contains(name))
        };
        let functions: BTreeSet<String> = self.functions.iter().filter(|n| keep(n)).cloned().collect();
        let variables: BTreeSet<String> = self
            .variables
            .iter()
            .filter(|n| keep(n) && !functions.contains(*n) && !self.defines.contains(*n))
            .cloned()
            .collect();
        let defines: BTreeSet<String> = self
            .defines
            .iter()
            .filter(|n| keep(n) && !functions.contains(*n))
            .cloned()
            .collect();

        let mut literal_tokens: BTreeSet<usize> = self.init_literals.iter().copied().collect();
        for p in 0..self.sig.len() {
            if !(self.is_ident(p) && self.is_punct(p + 1, "(")) {
                continue;
            }
            if !functions.contains(self.text(p)) || (p > 0 && (self.is_punct(p - 1, ".") || self.is_punct(p - 1, "->"))) {
                continue;
            }
            let Some(close) = self.matching[p + 1] else { continue };
            let mut a = p + 2;
            while a < close {
                let end = self.skip_expression(a).min(close);
                if end == a + 1 && self.tok(a).is_some_and(Token::is_literal) {
                    literal_tokens.insert(self.sig[a]);
                }
                a = end + 1;
            }
        }
        let values = literal_tokens
            .into_iter()
            .filter_map(|i| {
                let t = &self.toks[i];
                classify_literal(t).map(|value_kind| ValueSite {
                    token_index: i,
                    span: t.span.clone(),
                    value_kind,
                    original: t.lexeme.clone(),
                })
            })
            .collect();

        RenameSites {
            functions,
            variables,
            defines,
            values,
        }
    }
}

fn directive_name(lexeme: &str) -> &str {
    lexeme.trim_start_matches('#').trim_start()
}

/// Indices of non-trivia tokens outside preprocessor directive lines.
pub fn code_token_indices(tokens: &[Token]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut in_directive = false;
    for (i, t) in tokens.iter().enumerate() {
        if in_directive {
            if t.kind == TokenKind::Whitespace && ends_line(&t.lexeme) {
                in_directive = false;
            }
            continue;
        }
        if t.kind == TokenKind::Preprocessor {
            in_directive = !t.lexeme.trim_start_matches('#').trim_start().starts_with("include");
            continue;
        }
        if !t.is_trivia() {
            out.push(i);
        }
    }
    out
}

/// True when a whitespace lexeme contains a newline not escaped by `\`.
pub(crate) fn ends_line(ws: &str) -> bool {
    let b = ws.as_bytes();
    b.iter().enumerate().any(|(i, &c)| {
        if c != b'\n' {
            return false;
        }
        let mut j = i;
        if j > 0 && b[j - 1] == b'\r' {
            j -= 1;
        }
        !(j > 0 && b[j - 1] == b'\\')
    })
}

fn match_brackets(toks: &[Token], sig: &[usize]) -> Vec<Option<usize>> {
    let mut matching = vec![None; sig.len()];
    let mut stack: Vec<(usize, &str)> = Vec::new();
    for (p, &i) in sig.iter().enumerate() {
        let t = &toks[i];
        if t.kind != TokenKind::Punctuator {
            continue;
        }
        match t.lexeme.as_str() {
            open @ ("(" | "[" | "{") => stack.push((p, open)),
            close @ (")" | "]" | "}") => {
                let want = match close {
                    ")" => "(",
                    "]" => "[",
                    _ => "{",
                };
                // Pop until the matching opener; stray closers are ignored.
                if let Some(pos) = stack.iter().rposition(|(_, o)| *o == want) {
                    let (open_p, _) = stack[pos];
                    stack.truncate(pos);
                    matching[open_p] = Some(p);
                    matching[p] = Some(open_p);
                }
            }
            _ => {}
        }
    }
    matching
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctransform::lexer::tokenize_c;

    fn corpus(name: &str) -> String {
        std::fs::read_to_string(format!("{}/../../corpus/{name}.c", env!("CARGO_MANIFEST_DIR"))).unwrap()
    }

    fn sites(src: &str) -> RenameSites {
        collect_rename_sites(&tokenize_c(src).unwrap())
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn main_alone_has_no_sites() {
        assert!(sites("int main(){return 0;}").is_empty());
    }

    #[test]
    fn delete_listen_sites() {
        let s = sites(&corpus("delete_listen"));
        assert_eq!(s.functions, set(&["del_in_dir", "do_run"]));
        assert_eq!(s.defines, set(&["SIZE"]));
        assert_eq!(
            s.variables,
            set(&[
                "dirname", "fol", "next_f", "f_path", "sockfd", "buffer", "ip", "port", "new_sock",
                "server_addr", "new_addr", "addr_size",
            ])
        );
        let values: Vec<_> = s.values.iter().map(|v| (v.original.as_str(), v.value_kind)).collect();
        assert_eq!(
            values,
            vec![("\"192.168.0.1\"", ValueKind::Ipv4String), ("8080", ValueKind::PortInt)]
        );
    }

    #[test]
    fn pid_d_sites() {
        let s = sites(&corpus("pid_d"));
        assert_eq!(s.functions, set(&["pid_init", "pid_update"]));
        for field in ["last_error", "integral", "Kp", "Ki", "Kd", "pid_state_t", "state", "error", "t_Kp", "argc", "argv", "i"] {
            assert!(s.variables.contains(field), "missing {field}");
        }
        let floats: Vec<_> = s
            .values
            .iter()
            .filter(|v| v.value_kind == ValueKind::FloatConst)
            .map(|v| v.original.as_str())
            .collect();
        assert_eq!(floats, vec!["0.7", "0.1", "0.2", "1.0"]);
        assert!(!s.variables.contains("printf"));
    }

    #[test]
    fn externals_are_excluded() {
        let s = sites(&corpus("delete_listen"));
        let all: Vec<&String> = s.functions.iter().chain(&s.variables).chain(&s.defines).collect();
        for ext in ["opendir", "recv", "printf", "sprintf", "socket", "DIR", "socklen_t", "sin_port", "d_name", "dirent"] {
            assert!(!all.iter().any(|n| n.as_str() == ext), "{ext} should not be a site");
        }
    }

    #[test]
    fn format_strings_and_for_headers_are_not_value_sites() {
        let src = "void f(const char *s, int n) {}\nint main() { char *fmt = \"%s/%d\"; for (int i = 5; i < 9; i++) f(\"/tmp/x\", 7); return 0; }";
        let s = sites(src);
        let vals: Vec<_> = s.values.iter().map(|v| v.original.as_str()).collect();
        assert_eq!(vals, vec!["\"/tmp/x\"", "7"]);
    }

    #[test]
    fn extern_and_prototypes_define_nothing() {
        let s = sites("extern int errno_like;\nint helper(int x);\nint main(){return helper(1);}");
        assert!(s.variables.is_empty());
        assert!(s.functions.is_empty());
    }

    #[test]
    fn local_shadowing_an_external_member_is_skipped() {
        let s = sites("struct sockaddr_in a;\nint main(){ int sin_port = 3; a.sin_port = sin_port; return 0; }");
        assert!(!s.variables.contains("sin_port"));
        assert!(s.variables.contains("a"));
    }

    #[test]
    fn enum_tags_and_function_pointers() {
        let s = sites("enum mode { FAST, SLOW = 2 };\nstruct node { int v; struct node *next; };\nint apply(int (*cb)(int), int x) { return cb(x); }\nint main(){return 0;}");
        for n in ["FAST", "SLOW", "mode", "node", "v", "next", "cb", "x"] {
            assert!(s.variables.contains(n), "missing {n}");
        }
        assert!(s.functions.contains("apply"));
    }

    #[test]
    fn numeric_parsing() {
        assert_eq!(parse_c_int("0x1f90"), Some(8080));
        assert_eq!(parse_c_int("010"), Some(8));
        assert_eq!(parse_c_int("0xFFFFFFFFu"), Some(0xFFFF_FFFF));
        assert_eq!(parse_c_float("0.5f"), Some(0.5));
        assert_eq!(parse_c_float("0x1.8p+1"), Some(3.0));
        assert_eq!(parse_c_float("1e-3"), Some(0.001));
    }

    #[test]
    fn line_end_detection() {
        assert!(ends_line("\n"));
        assert!(!ends_line("\\\n  "));
        assert!(ends_line("\\\n \n"));
        assert!(!ends_line("  "));
    }
}
