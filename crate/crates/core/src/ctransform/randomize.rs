use std::collections::{BTreeMap, HashSet};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lexer::{literal_body, tokenize_c, LexError, Token, TokenKind};
use super::names::{fresh_name, NameKind};
use super::sites::{collect_rename_sites, ValueKind, ValueSite};
use crate::corpus::{render_question, AnswerSpec, Category, Fact, Number, ProgramTemplate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Derivation {
    Original,
    Randomized {
        rate: f64,
        seed: u64,
    },
    Decompiled {
        opt_flags: String,
        debug: bool,
        stripped: bool,
        /// How the compiled source itself was derived.
        from: Box<Derivation>,
    },
}

impl Derivation {
    pub fn is_stripped(&self) -> bool {
        matches!(self, Derivation::Decompiled { stripped: true, .. })
    }
}

/// One replaced literal, keyed by its byte span in the template source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueReplacement {
    pub span: Range<usize>,
    pub value_kind: ValueKind,
    pub original: String,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedFact {
    pub fact: Fact,
    /// Set when the expected answer cannot be named in this instance,
    /// e.g. a function name in a stripped binary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unresolvable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramInstance {
    pub instance_id: String,
    pub template_id: String,
    pub category: Category,
    pub derivation: Derivation,
    pub source_text: String,
    pub rename_map: BTreeMap<String, String>,
    pub value_map: Vec<ValueReplacement>,
    pub resolved_facts: Vec<ResolvedFact>,
    pub capability_truth: BTreeMap<String, bool>,
    pub purpose_keyword: Option<String>,
    /// Decompiler function name to original function name (decompiled only).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub function_map: BTreeMap<String, String>,
    /// Total rename and value sites in the template.
    pub site_count: usize,
}

impl ProgramInstance {
    /// The unmodified template as an instance.
    pub fn original(template: &ProgramTemplate) -> ProgramInstance {
        ProgramInstance {
            instance_id: format!("{}@orig", template.id),
            template_id: template.id.clone(),
            category: template.category,
            derivation: Derivation::Original,
            source_text: template.source_text.clone(),
            rename_map: BTreeMap::new(),
            value_map: Vec::new(),
            resolved_facts: template.facts.iter().map(|f| ResolvedFact { fact: f.clone(), unresolvable: None }).collect(),
            capability_truth: template.capability_truth.clone(),
            purpose_keyword: template.purpose_keyword.clone(),
            function_map: BTreeMap::new(),
            site_count: tokenize_c(&template.source_text)
                .map(|t| {
                    let s = collect_rename_sites(&t);
                    s.identifier_count() + s.values.len()
                })
                .unwrap_or(0),
        }
    }

    /// Fraction of template sites that were replaced.
    pub fn replaced_fraction(&self) -> f64 {
        if self.site_count == 0 {
            return 0.0;
        }
        (self.rename_map.len() + self.value_map.len()) as f64 / self.site_count as f64
    }
}

#[derive(Debug, Error)]
pub enum RandomizeError {
    #[error("randomization rate {0} is outside [0, 1]")]
    InvalidRate(f64),
    #[error(transparent)]
    Lex(#[from] LexError),
}

/// Draws a replacement lexeme of the same kind as the site's literal.
pub fn randomize_value<R: Rng + ?Sized>(site: &ValueSite, rng: &mut R) -> String {
    match site.value_kind {
        ValueKind::Ipv4String => {
            let o: Vec<String> = (0..4).map(|_| rng.random_range(1..=254u8).to_string()).collect();
            format!("\"{}\"", o.join("."))
        }
        ValueKind::PortInt => {
            format!("{}{}", rng.random_range(1024..=65535u32), int_suffix(&site.original))
        }
        ValueKind::IntConst => format!("{}{}", rng.random_range(0..=9999u32), int_suffix(&site.original)),
        ValueKind::FloatConst => {
            let x: f64 = rng.random_range(-1.0..1.0);
            let mut s = format!("{x}");
            if !s.contains('.') {
                s.push_str(".0");
            }
            s.push_str(float_suffix(&site.original));
            s
        }
        ValueKind::PathString => {
            let segments = rng.random_range(1..=3);
            let parts: Vec<String> = (0..segments)
                .map(|_| {
                    let len = rng.random_range(2..=8);
                    (0..len).map(|_| char::from(rng.random_range(b'a'..=b'z'))).collect()
                })
                .collect();
            let prefix = if literal_body(&site.original).starts_with('/') { "/" } else { "./" };
            format!("\"{prefix}{}\"", parts.join("/"))
        }
    }
}

fn int_suffix(lexeme: &str) -> &str {
    let digits = lexeme.trim_end_matches(['u', 'U', 'l', 'L']).len();
    &lexeme[digits..]
}

fn float_suffix(lexeme: &str) -> &str {
    let body = lexeme.trim_end_matches(['f', 'F', 'l', 'L']).len();
    &lexeme[body..]
}

/// Produces a randomized instance in which every rename site and value site
/// is independently replaced with probability `rate`.
pub fn randomize(template: &ProgramTemplate, rate: f64, seed: u64) -> Result<ProgramInstance, RandomizeError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(RandomizeError::InvalidRate(rate));
    }
    let tokens = tokenize_c(&template.source_text)?;
    let sites = collect_rename_sites(&tokens);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut taken: HashSet<String> =
        tokens.iter().filter(|t| t.kind == TokenKind::Identifier).map(|t| t.lexeme.clone()).collect();
    let mut rename_map = BTreeMap::new();
    let groups = [
        (&sites.functions, NameKind::Function),
        (&sites.variables, NameKind::Variable),
        (&sites.defines, NameKind::Define),
    ];
    for (names, kind) in groups {
        for name in names {
            let replace = rng.random_bool(rate);
            if replace && !rename_map.contains_key(name) {
                let new = fresh_name(kind, &mut rng, &mut taken);
                rename_map.insert(name.clone(), new);
            }
        }
    }

    let mut value_map = Vec::new();
    let mut by_index: BTreeMap<usize, String> = BTreeMap::new();
    for site in &sites.values {
        if !rng.random_bool(rate) {
            continue;
        }
        let mut replacement = randomize_value(site, &mut rng);
        if replacement.starts_with('-') && follows_sign(&tokens, site.token_index) {
            replacement = format!("({replacement})");
        }
        by_index.insert(site.token_index, replacement.clone());
        value_map.push(ValueReplacement {
            span: site.span.clone(),
            value_kind: site.value_kind,
            original: site.original.clone(),
            replacement,
        });
    }

    let mut source_text = String::with_capacity(template.source_text.len());
    for (i, t) in tokens.iter().enumerate() {
        if let Some(v) = by_index.get(&i) {
            source_text.push_str(v);
        } else if t.kind == TokenKind::Identifier {
            source_text.push_str(rename_map.get(&t.lexeme).unwrap_or(&t.lexeme));
        } else {
            source_text.push_str(&t.lexeme);
        }
    }

    let resolved_facts = template
        .facts
        .iter()
        .map(|f| ResolvedFact { fact: resolve_fact(f, &rename_map, &sites.values, &value_map), unresolvable: None })
        .collect();

    Ok(ProgramInstance {
        instance_id: format!("{}@p{:03}-{seed:016x}", template.id, (rate * 100.0).round() as u32),
        template_id: template.id.clone(),
        category: template.category,
        derivation: Derivation::Randomized { rate, seed },
        source_text,
        rename_map,
        value_map,
        resolved_facts,
        capability_truth: template.capability_truth.clone(),
        purpose_keyword: template.purpose_keyword.clone(),
        function_map: BTreeMap::new(),
        site_count: sites.identifier_count() + sites.values.len(),
    })
}

/// True when the token just before `index` is an adjacent `-` or `+`, so a
/// negative replacement would lex as `--` or `+-`.
fn follows_sign(tokens: &[Token], index: usize) -> bool {
    index > 0 && (tokens[index - 1].is_punct("-") || tokens[index - 1].is_punct("+"))
}

fn resolve_fact(
    fact: &Fact,
    rename_map: &BTreeMap<String, String>,
    sites: &[ValueSite],
    value_map: &[ValueReplacement],
) -> Fact {
    let replacement_for = |site: &ValueSite| value_map.iter().find(|r| r.span == site.span).map(|r| r.replacement.clone());
    let expected = fact
        .expected
        .iter()
        .map(|spec| match spec {
            AnswerSpec::Identifier { token } => {
                AnswerSpec::Identifier { token: rename_map.get(token).cloned().unwrap_or_else(|| token.clone()) }
            }
            AnswerSpec::Numeric { value, lexeme } => {
                let site = sites.iter().find(|s| {
                    matches!(s.value_kind, ValueKind::PortInt | ValueKind::IntConst | ValueKind::FloatConst)
                        && s.original == *lexeme
                });
                match site.and_then(replacement_for) {
                    Some(new) => {
                        let lexeme = new.trim_start_matches('(').trim_end_matches(')').to_string();
                        let value = Number::from_lexeme(&lexeme).unwrap_or(*value);
                        AnswerSpec::Numeric { value, lexeme }
                    }
                    None => spec.clone(),
                }
            }
            AnswerSpec::StringLiteral { text } => {
                let site = sites.iter().find(|s| {
                    matches!(s.value_kind, ValueKind::Ipv4String | ValueKind::PathString)
                        && literal_body(&s.original) == text
                });
                match site.and_then(replacement_for) {
                    Some(new) => AnswerSpec::StringLiteral { text: literal_body(&new).to_string() },
                    None => spec.clone(),
                }
            }
            AnswerSpec::Keyword { .. } => spec.clone(),
        })
        .collect();
    Fact {
        fact_id: fact.fact_id.clone(),
        kind: fact.kind,
        question: render_question(&fact.question, |n| format!("{{{{{}}}}}", rename_map.get(n).map_or(n, |s| s))),
        expected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_template;
    use crate::ctransform::concat;
    use proptest::prelude::*;
    use std::path::Path;

    fn template(id: &str) -> ProgramTemplate {
        load_template(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(format!("{id}.json"))).unwrap()
    }

    #[test]
    fn rate_zero_is_identity() {
        let t = template("delete_listen");
        let inst = randomize(&t, 0.0, 99).unwrap();
        assert_eq!(inst.source_text, t.source_text);
        assert!(inst.rename_map.is_empty());
        assert!(inst.value_map.is_empty());
        assert_eq!(inst.resolved_facts.iter().map(|r| &r.fact).collect::<Vec<_>>(), t.facts.iter().collect::<Vec<_>>());
    }

    #[test]
    fn rate_one_replaces_every_site() {
        let t = template("delete_listen");
        let inst = randomize(&t, 1.0, 4).unwrap();
        assert_eq!(inst.replaced_fraction(), 1.0);
        for old in ["del_in_dir", "do_run", "SIZE", "dirname", "sockfd", "port"] {
            assert!(inst.rename_map.contains_key(old), "{old}");
        }
        assert!(!inst.rename_map.contains_key("main"));
        assert!(!inst.source_text.contains("192.168.0.1"));
        assert!(!inst.source_text.contains("8080"));
        assert!(inst.source_text.contains("int main("));
        assert!(inst.source_text.contains("#include <dirent.h>"));
        assert!(inst.source_text.contains("\"%s/%s\""));
        let listen = inst.resolved_facts.iter().find(|r| r.fact.fact_id == "listen_addr").unwrap();
        match &listen.fact.expected[0] {
            AnswerSpec::StringLiteral { text } => {
                let octets: Vec<u32> = text.split('.').map(|o| o.parse().unwrap()).collect();
                assert_eq!(octets.len(), 4);
                assert!(octets.iter().all(|o| (1..=254).contains(o)));
                assert!(inst.source_text.contains(&format!("\"{text}\"")));
            }
            other => panic!("{other:?}"),
        }
        match &listen.fact.expected[1] {
            AnswerSpec::Numeric { value: Number::Int(p), lexeme } => {
                assert!((1024..=65535).contains(p));
                assert_eq!(lexeme, &p.to_string());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pid_gains_follow_replacement() {
        let t = template("pid_d");
        let inst = randomize(&t, 1.0, 11).unwrap();
        let gains = inst.resolved_facts.iter().find(|r| r.fact.fact_id == "gains").unwrap();
        for spec in &gains.fact.expected {
            let AnswerSpec::Numeric { value: Number::Float(v), lexeme } = spec else { panic!("{spec:?}") };
            assert!((-1.0..1.0).contains(v));
            assert!(lexeme.contains('.'));
            assert!(inst.source_text.contains(lexeme.as_str()));
        }
        assert!(inst.rename_map.contains_key("Kp"));
        assert!(inst.rename_map.contains_key("last_error"));
    }

    #[test]
    fn placeholders_follow_renames() {
        let t = template("delete");
        let inst = randomize(&t, 1.0, 3).unwrap();
        for (orig, r) in t.facts.iter().zip(&inst.resolved_facts) {
            for name in crate::corpus::placeholders(&orig.question) {
                let new = &inst.rename_map[name];
                assert!(r.fact.question.contains(&format!("{{{{{new}}}}}")), "{}", r.fact.question);
            }
        }
    }

    #[test]
    fn value_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let site = |kind, original: &str| ValueSite { token_index: 0, span: 0..0, value_kind: kind, original: original.into() };
        for _ in 0..200 {
            let f = randomize_value(&site(ValueKind::FloatConst, "0.7f"), &mut rng);
            assert!(f.ends_with('f') && f.contains('.'), "{f}");
            let v: f64 = f.trim_end_matches('f').parse().unwrap();
            assert!((-1.0..1.0).contains(&v));
            let p = randomize_value(&site(ValueKind::PortInt, "8080"), &mut rng);
            assert!((1024..=65535).contains(&p.parse::<u32>().unwrap()));
            let i = randomize_value(&site(ValueKind::IntConst, "10UL"), &mut rng);
            assert!(i.ends_with("UL"));
            assert!(i.trim_end_matches("UL").parse::<u32>().unwrap() <= 9999);
            let path = randomize_value(&site(ValueKind::PathString, "\"/tmp/x\""), &mut rng);
            let body = literal_body(&path);
            assert!(body.starts_with('/'));
            let segs = body[1..].split('/').count();
            assert!((1..=3).contains(&segs));
        }
    }

    #[test]
    fn negative_after_sign_is_parenthesized() {
        let t = ProgramTemplate {
            id: "neg".into(),
            category: Category::Ics,
            source_text: "double g = -0.5;\nint main(void){return 0;}\n".into(),
            facts: vec![],
            capability_truth: BTreeMap::new(),
            purpose_keyword: None,
        };
        for seed in 0..50 {
            let inst = randomize(&t, 1.0, seed).unwrap();
            assert!(!inst.source_text.contains("--"), "{}", inst.source_text);
        }
    }

    #[test]
    fn invalid_rate() {
        let t = template("delete");
        assert!(matches!(randomize(&t, 1.5, 0), Err(RandomizeError::InvalidRate(_))));
    }

    #[test]
    fn mean_coverage_at_half() {
        let t = template("delete_listen");
        let mean: f64 = (0..1000u64).map(|s| randomize(&t, 0.5, s).unwrap().replaced_fraction()).sum::<f64>() / 1000.0;
        assert!((0.45..=0.55).contains(&mean), "{mean}");
    }

    fn all_templates() -> Vec<ProgramTemplate> {
        crate::corpus::load_corpus_dir(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn deterministic_injective_consistent(idx in 0usize..14, rate in 0.0f64..=1.0, seed in any::<u64>()) {
            let templates = all_templates();
            let t = &templates[idx % templates.len()];
            let a = randomize(t, rate, seed).unwrap();
            let b = randomize(t, rate, seed).unwrap();
            prop_assert_eq!(&a, &b);

            let new_names: HashSet<&String> = a.rename_map.values().collect();
            prop_assert_eq!(new_names.len(), a.rename_map.len());

            // Reversing the maps restores the template exactly.
            let inst_tokens = tokenize_c(&a.source_text).unwrap();
            prop_assert_eq!(concat(&inst_tokens), a.source_text.clone());
            let tokens = tokenize_c(&t.source_text).unwrap();
            let mut rebuilt = String::new();
            for tok in &tokens {
                if let Some(r) = a.value_map.iter().find(|r| r.span == tok.span) {
                    rebuilt.push_str(&r.replacement);
                } else if tok.kind == TokenKind::Identifier {
                    rebuilt.push_str(a.rename_map.get(&tok.lexeme).unwrap_or(&tok.lexeme));
                } else {
                    rebuilt.push_str(&tok.lexeme);
                }
            }
            prop_assert_eq!(&rebuilt, &a.source_text);

            let idents: HashSet<&str> = inst_tokens
                .iter()
                .filter(|t| t.kind == TokenKind::Identifier)
                .map(|t| t.lexeme.as_str())
                .collect();
            for r in &a.resolved_facts {
                for spec in &r.fact.expected {
                    if let AnswerSpec::Identifier { token } = spec {
                        prop_assert!(idents.contains(token.as_str()), "{} missing", token);
                    }
                }
            }
        }
    }
}
