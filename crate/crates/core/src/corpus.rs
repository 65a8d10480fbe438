//! Program templates, their answer oracles, and the capability catalog.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::ctransform::{literal_body, parse_c_float, parse_c_int, tokenize_c, LexError, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Cybersecurity,
    Ics,
    Malware,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactKind {
    VariableName,
    FunctionName,
    ConstantValue,
    PurposeKeyword,
}

/// A numeric oracle value. Integers and decimals are kept apart so that
/// hex/decimal equivalence can be checked exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Int(i64),
    Float(f64),
}

impl Number {
    pub fn as_f64(self) -> f64 {
        match self {
            Number::Int(i) => i as f64,
            Number::Float(f) => f,
        }
    }

    /// Parses a C numeric literal lexeme (with optional leading minus).
    pub fn from_lexeme(lexeme: &str) -> Option<Number> {
        let (neg, body) = match lexeme.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, lexeme),
        };
        if !body.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
            return None;
        }
        if let Some(u) = parse_c_int(body) {
            let i = i64::try_from(u).ok()?;
            return Some(Number::Int(if neg { -i } else { i }));
        }
        parse_c_float(body).map(|f| Number::Float(if neg { -f } else { f }))
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Number::Int(i) => write!(f, "{i}"),
            Number::Float(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum AnswerSpec {
    Identifier { token: String },
    Numeric { value: Number, lexeme: String },
    StringLiteral { text: String },
    Keyword { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub fact_id: String,
    pub kind: FactKind,
    pub question: String,
    /// One or more values that must all appear in a correct answer.
    #[serde(deserialize_with = "one_or_many")]
    pub expected: Vec<AnswerSpec>,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<AnswerSpec>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(AnswerSpec),
        Many(Vec<AnswerSpec>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(a) => vec![a],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramTemplate {
    pub id: String,
    pub category: Category,
    pub source_text: String,
    pub facts: Vec<Fact>,
    pub capability_truth: BTreeMap<String, bool>,
    pub purpose_keyword: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Cybersecurity,
    Ics,
    Capa,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Cybersecurity, Domain::Ics, Domain::Capa];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capability {
    pub short_id: String,
    pub phrase: String,
    pub domain: Domain,
}

const CATALOG: &[(&str, &str, Domain)] = &[
    ("Encrypt", "implement an encryption algorithm", Domain::Cybersecurity),
    ("XOR", "implement an XOR encryption algorithm", Domain::Cybersecurity),
    ("AES", "implement an AES encryption algorithm", Domain::Cybersecurity),
    ("Delete", "delete file(s)", Domain::Cybersecurity),
    ("Network", "interact with a network", Domain::Cybersecurity),
    ("Downld", "download file(s) from the internet", Domain::Cybersecurity),
    ("Upload", "upload file(s) to the internet", Domain::Cybersecurity),
    ("EtcPswd", "read /etc/passwd", Domain::Cybersecurity),
    ("MD5", "implement the MD5 hashing algorithm", Domain::Cybersecurity),
    ("FIR1", "implement a FIR filter", Domain::Ics),
    ("FIR2", "implement a Finite Impulse Response filter", Domain::Ics),
    ("IIR1", "implement an IIR filter", Domain::Ics),
    ("IIR2", "implement an Infinite Impulse Response filter", Domain::Ics),
    ("PID1", "implement a PID controller", Domain::Ics),
    ("PID2", "implement a classic Proportional-Integral-Derivative (PID) controller", Domain::Ics),
    ("PI", "implement a classic Proportional-Integral (PI) controller", Domain::Ics),
    ("PD", "implement a classic Proportional-Derivative (PD) controller", Domain::Ics),
    ("CSum", "implement a checksum algorithm", Domain::Ics),
    ("DataC->S", "read and send data from client to server", Domain::Capa),
    ("DataS->C", "receive and write data from server to client", Domain::Capa),
    ("TCPServer", "start TCP server", Domain::Capa),
    ("ReadFile", "read file on Linux", Domain::Capa),
    ("MoveFile", "move file", Domain::Capa),
    ("WriteFile", "write file on Linux", Domain::Capa),
    ("DNS", "resolve DNS", Domain::Capa),
    ("ExecuteCmd", "execute command", Domain::Capa),
    ("CreateProc", "create process on Linux", Domain::Capa),
];

/// The fixed capability catalog, filtered by domain, in catalog order.
pub fn builtin_capabilities(domain_filter: &BTreeSet<Domain>) -> Vec<Capability> {
    CATALOG
        .iter()
        .filter(|(_, _, d)| domain_filter.contains(d))
        .map(|&(id, phrase, domain)| Capability { short_id: id.to_string(), phrase: phrase.to_string(), domain })
        .collect()
}

pub fn capability_by_id(short_id: &str) -> Option<Capability> {
    CATALOG
        .iter()
        .find(|(id, _, _)| *id == short_id)
        .map(|&(id, phrase, domain)| Capability { short_id: id.to_string(), phrase: phrase.to_string(), domain })
}

/// Domains whose truth every template must assert. capa truth is optional
/// because it can be filled in by the scanner.
pub fn default_domains() -> BTreeSet<Domain> {
    [Domain::Cybersecurity, Domain::Ics].into_iter().collect()
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read manifest {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest {path} is malformed: {message}")]
    ManifestSyntax { path: PathBuf, message: String },
    #[error("source file {path} for template {template} is unreadable: {message}")]
    MissingSource { template: String, path: PathBuf, message: String },
    #[error("template {template}, fact {fact_id}: {detail}")]
    OracleMismatch { template: String, fact_id: String, detail: String },
    #[error("template {template} names unknown capability {capability}")]
    UnknownCapabilityId { template: String, capability: String },
    #[error("template {template} does not lex: {source}")]
    Lex { template: String, source: LexError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum Issue {
    DuplicateId { id: String },
    OracleMismatch { template: String, fact_id: String, detail: String },
    LexError { template: String, message: String },
    UnknownCapabilityId { template: String, capability: String },
    MissingCapabilityTruth { template: String, capability: String },
    CapaConflict { template: String, capability: String, asserted: bool, scanned: bool },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::DuplicateId { id } => write!(f, "duplicate template id {id}"),
            Issue::OracleMismatch { template, fact_id, detail } => write!(f, "{template}/{fact_id}: {detail}"),
            Issue::LexError { template, message } => write!(f, "{template}: {message}"),
            Issue::UnknownCapabilityId { template, capability } => {
                write!(f, "{template}: unknown capability {capability}")
            }
            Issue::MissingCapabilityTruth { template, capability } => {
                write!(f, "{template}: no truth value for capability {capability}")
            }
            Issue::CapaConflict { template, capability, asserted, scanned } => write!(
                f,
                "{template}: capability {capability} asserted {asserted} but scanner reports {scanned}"
            ),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    id: String,
    category: Category,
    source: PathBuf,
    #[serde(default)]
    purpose_keyword: Option<String>,
    #[serde(default)]
    facts: Vec<Fact>,
    #[serde(default)]
    capabilities: BTreeMap<String, bool>,
}

/// Loads one JSON manifest and its sibling C source, checking every oracle
/// against the source.
pub fn load_template(manifest_path: &Path) -> Result<ProgramTemplate, CorpusError> {
    let bytes = fs::read(manifest_path).map_err(|source| CorpusError::Io { path: manifest_path.to_path_buf(), source })?;
    let manifest: Manifest = serde_json::from_slice(&bytes)
        .map_err(|e| CorpusError::ManifestSyntax { path: manifest_path.to_path_buf(), message: e.to_string() })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let source_path = base.join(&manifest.source);
    let source_text = fs::read_to_string(&source_path).map_err(|e| CorpusError::MissingSource {
        template: manifest.id.clone(),
        path: source_path.clone(),
        message: e.to_string(),
    })?;
    let template = ProgramTemplate {
        id: manifest.id,
        category: manifest.category,
        source_text,
        facts: manifest.facts,
        capability_truth: manifest.capabilities,
        purpose_keyword: manifest.purpose_keyword,
    };
    for id in template.capability_truth.keys() {
        if capability_by_id(id).is_none() {
            return Err(CorpusError::UnknownCapabilityId { template: template.id.clone(), capability: id.clone() });
        }
    }
    let tokens = tokenize_c(&template.source_text)
        .map_err(|source| CorpusError::Lex { template: template.id.clone(), source })?;
    for fact in &template.facts {
        check_fact(&tokens, fact).map_err(|detail| CorpusError::OracleMismatch {
            template: template.id.clone(),
            fact_id: fact.fact_id.clone(),
            detail,
        })?;
    }
    Ok(template)
}

/// Loads every `*.json` manifest in a directory, sorted by file name.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<ProgramTemplate>, CorpusError> {
    let entries = fs::read_dir(dir).map_err(|source| CorpusError::Io { path: dir.to_path_buf(), source })?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| CorpusError::Io { path: dir.to_path_buf(), source })?;
        let p = entry.path();
        if p.extension().is_some_and(|e| e == "json") {
            paths.push(p);
        }
    }
    paths.sort();
    paths.iter().map(|p| load_template(p)).collect()
}

/// Returns the `{{name}}` placeholders used in a question.
pub fn placeholders(question: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = question;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                out.push(after[..end].trim());
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    out
}

/// Replaces each `{{name}}` placeholder with `lookup(name)`.
pub fn render_question(question: &str, lookup: impl Fn(&str) -> String) -> String {
    let mut out = String::with_capacity(question.len());
    let mut rest = question;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        out.push_str(&rest[..start]);
        out.push_str(&lookup(after[..end].trim()));
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    out
}

fn has_identifier(tokens: &[Token], name: &str) -> bool {
    tokens.iter().any(|t| t.kind == TokenKind::Identifier && t.lexeme == name)
}

/// Checks that a fact's expected answers and placeholders occur in the source.
pub fn check_fact(tokens: &[Token], fact: &Fact) -> Result<(), String> {
    if fact.question.trim().is_empty() {
        return Err("question text is empty".into());
    }
    for name in placeholders(&fact.question) {
        if !has_identifier(tokens, name) {
            return Err(format!("placeholder {{{{{name}}}}} is not an identifier in the source"));
        }
    }
    if fact.kind == FactKind::PurposeKeyword {
        return Ok(());
    }
    if fact.expected.is_empty() {
        return Err("no expected answer".into());
    }
    for spec in &fact.expected {
        match spec {
            AnswerSpec::Identifier { token } => {
                if !has_identifier(tokens, token) {
                    return Err(format!("identifier {token:?} does not occur in the source"));
                }
            }
            AnswerSpec::Numeric { value, lexeme } => {
                let parsed = Number::from_lexeme(lexeme)
                    .ok_or_else(|| format!("lexeme {lexeme:?} is not a numeric literal"))?;
                if parsed.as_f64() != value.as_f64() {
                    return Err(format!("lexeme {lexeme:?} does not denote {value}"));
                }
                let present = tokens.iter().any(|t| {
                    matches!(t.kind, TokenKind::IntLit | TokenKind::FloatLit) && t.lexeme == *lexeme
                });
                if !present {
                    return Err(format!("literal {lexeme} does not occur in the source"));
                }
            }
            AnswerSpec::StringLiteral { text } => {
                let present =
                    tokens.iter().any(|t| t.kind == TokenKind::StringLit && literal_body(&t.lexeme) == text);
                if !present {
                    return Err(format!("string literal {text:?} does not occur in the source"));
                }
            }
            AnswerSpec::Keyword { text } => {
                let present = tokens.iter().any(|t| {
                    matches!(t.kind, TokenKind::Identifier | TokenKind::Keyword) && t.lexeme == *text
                });
                if !present {
                    return Err(format!("keyword {text:?} does not occur in the source"));
                }
            }
        }
    }
    Ok(())
}

/// Validates a corpus against the default (cybersecurity and ICS) catalogs.
pub fn validate_corpus(templates: &[ProgramTemplate]) -> Vec<Issue> {
    validate_corpus_for(templates, &default_domains())
}

/// Collects every problem in a corpus. An empty result means well-formed.
pub fn validate_corpus_for(templates: &[ProgramTemplate], domains: &BTreeSet<Domain>) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for t in templates {
        let n = seen.entry(&t.id).or_insert(0);
        *n += 1;
        if *n == 2 {
            issues.push(Issue::DuplicateId { id: t.id.clone() });
        }
    }
    let catalog = builtin_capabilities(domains);
    for t in templates {
        match tokenize_c(&t.source_text) {
            Ok(tokens) => {
                for fact in &t.facts {
                    if let Err(detail) = check_fact(&tokens, fact) {
                        issues.push(Issue::OracleMismatch {
                            template: t.id.clone(),
                            fact_id: fact.fact_id.clone(),
                            detail,
                        });
                    }
                }
            }
            Err(e) => issues.push(Issue::LexError { template: t.id.clone(), message: e.to_string() }),
        }
        for id in t.capability_truth.keys() {
            if capability_by_id(id).is_none() {
                issues.push(Issue::UnknownCapabilityId { template: t.id.clone(), capability: id.clone() });
            }
        }
        // Real-malware templates carry capa truth only; the catalog questions
        // do not apply to them.
        if t.category == Category::Malware {
            continue;
        }
        for cap in &catalog {
            if cap.domain != Domain::Capa && !t.capability_truth.contains_key(&cap.short_id) {
                issues.push(Issue::MissingCapabilityTruth { template: t.id.clone(), capability: cap.short_id.clone() });
            }
        }
    }
    issues
}

/// Fills capa-domain truth from scanner output. Manual assertions win; a
/// disagreement is reported as a `CapaConflict`.
pub fn merge_capa_truth(template: &mut ProgramTemplate, scanned: &BTreeMap<String, bool>) -> Vec<Issue> {
    let mut issues = Vec::new();
    for (id, &value) in scanned {
        match template.capability_truth.get(id) {
            Some(&asserted) if asserted != value => issues.push(Issue::CapaConflict {
                template: template.id.clone(),
                capability: id.clone(),
                asserted,
                scanned: value,
            }),
            Some(_) => {}
            None => {
                template.capability_truth.insert(id.clone(), value);
            }
        }
    }
    issues
}
