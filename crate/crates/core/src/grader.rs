//! Answer parsing and grading against the oracle.

use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerSpec, Number};
use crate::quizgen::{Expected, Question, QuestionKind, QuizError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Parsed {
    Tf(bool),
    Text(String),
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    Correct,
    Incorrect,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub question_id: String,
    pub instance_id: String,
    pub label: String,
    pub rep_index: u32,
    pub kind: QuestionKind,
    pub expected: Expected,
    pub raw_text: String,
    pub parsed: Parsed,
    pub grade: Grade,
    pub temperature: f64,
    pub top_p: f64,
    /// Randomization rate of the instance, when it was randomized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomization_rate: Option<f64>,
}

impl Verdict {
    pub fn is_correct(&self) -> bool {
        self.grade == Grade::Correct
    }

    pub fn expected_bool(&self) -> Option<bool> {
        match self.expected {
            Expected::Bool(b) => Some(b),
            Expected::Answers(_) => None,
        }
    }
}

/// Reads the first alphabetic word: true/yes or false/no.
pub fn parse_tf(raw_text: &str) -> Parsed {
    let word: String = raw_text
        .chars()
        .skip_while(|c| !c.is_alphabetic())
        .take_while(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    match word.as_str() {
        "true" | "yes" => Parsed::Tf(true),
        "false" | "no" => Parsed::Tf(false),
        _ => Parsed::Unparseable,
    }
}

/// Case-insensitive substring test.
pub fn grade_keyword(raw_text: &str, keyword: &str) -> bool {
    raw_text.to_lowercase().contains(&keyword.to_lowercase())
}

/// A number read from an answer. `f32_bits` is set for 8-hex-digit tokens,
/// which a decompiler prints for single-precision constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedNumber {
    pub value: Number,
    pub f32_bits: Option<u32>,
}

impl NormalizedNumber {
    pub fn matches(&self, expected: Number) -> bool {
        let numeric = match (self.value, expected) {
            (Number::Int(a), Number::Int(b)) => a == b,
            (a, b) => {
                let (a, b) = (a.as_f64(), b.as_f64());
                a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
            }
        };
        let bits = match (self.f32_bits, expected) {
            (Some(bits), Number::Float(e)) => f32::from_bits(bits) == e as f32,
            _ => false,
        };
        numeric || bits
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Parses one numeric lexeme: decimal or 0x-hex integers, decimal floats,
/// and bare 8-hex-digit bit patterns.
pub fn normalize_numeric(lexeme: &str) -> Option<NormalizedNumber> {
    let s = lexeme.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let sign = |i: i64| if neg { -i } else { i };
    if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        let digits = hex.trim_end_matches(['u', 'U', 'l', 'L']);
        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
            return None;
        }
        let v = u64::from_str_radix(digits, 16).ok()?;
        let f32_bits = (digits.len() == 8).then(|| v as u32);
        return Some(NormalizedNumber { value: Number::Int(sign(i64::try_from(v).ok()?)), f32_bits });
    }
    if !neg
        && body.len() == 8
        && body.chars().all(|c| c.is_ascii_hexdigit())
        && body.chars().any(|c| c.is_ascii_alphabetic())
    {
        let v = u32::from_str_radix(body, 16).ok()?;
        return Some(NormalizedNumber { value: Number::Int(i64::from(v)), f32_bits: Some(v) });
    }
    let trimmed = body.trim_end_matches(['u', 'U', 'l', 'L', 'f', 'F']);
    if trimmed.is_empty() || !trimmed.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        return None;
    }
    if trimmed.chars().all(|c| c.is_ascii_digit()) {
        return Some(NormalizedNumber { value: Number::Int(sign(trimmed.parse().ok()?)), f32_bits: None });
    }
    if trimmed.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-')) {
        let f: f64 = trimmed.parse().ok()?;
        return Some(NormalizedNumber { value: Number::Float(if neg { -f } else { f }), f32_bits: None });
    }
    None
}

/// Finds every number-shaped token in free text.
pub fn extract_numbers(text: &str) -> Vec<NormalizedNumber> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let prev = if i > 0 { Some(chars[i - 1]) } else { None };
        if prev.is_some_and(is_ident_char) || !(c.is_ascii_alphanumeric() || c == '-' || c == '.') {
            i += 1;
            continue;
        }
        // Inside a dotted sequence such as an IP address.
        if prev == Some('.') && i >= 2 && chars[i - 2].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        let negative = c == '-' && !prev.is_some_and(|p| p == ')');
        let mut j = if c == '-' { i + 1 } else { i };
        if c == '-' && !negative {
            i += 1;
            continue;
        }
        let word_start = j;
        // Bare hex bit patterns and 0x literals are whole alphanumeric words.
        let mut k = j;
        while k < chars.len() && is_ident_char(chars[k]) {
            k += 1;
        }
        let word: String = chars[word_start..k].iter().collect();
        if !word.is_empty() && (word.starts_with("0x") || word.starts_with("0X") || (word.len() == 8 && c != '-')) {
            if let Some(n) = normalize_numeric(&chars[start..k].iter().collect::<String>()) {
                out.push(n);
            }
            i = k;
            continue;
        }
        // Decimal: digits [. digits] [e[+-]digits]
        let digit = |k: usize| k < chars.len() && chars[k].is_ascii_digit();
        let int_start = j;
        while digit(j) {
            j += 1;
        }
        let had_int = j > int_start;
        if j < chars.len() && chars[j] == '.' && digit(j + 1) {
            j += 1;
            while digit(j) {
                j += 1;
            }
        } else if !had_int {
            i = k.max(i + 1);
            continue;
        }
        if j < chars.len() && matches!(chars[j], 'e' | 'E') {
            let mut e = j + 1;
            if e < chars.len() && matches!(chars[e], '+' | '-') {
                e += 1;
            }
            if digit(e) {
                j = e;
                while digit(j) {
                    j += 1;
                }
            }
        }
        while j < chars.len() && matches!(chars[j], 'f' | 'F' | 'u' | 'U' | 'l' | 'L') {
            j += 1;
        }
        if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            i = j;
            continue;
        }
        if j < chars.len() && is_ident_char(chars[j]) {
            // Part of a longer word such as "param_1x" or "3rd".
            i = k.max(j);
            continue;
        }
        let lexeme: String = chars[start..j].iter().collect();
        if let Some(n) = normalize_numeric(&lexeme) {
            out.push(n);
        }
        i = j;
    }
    out
}

/// Undoes markdown escaping of identifiers such as `param\_1`.
fn deescape(text: &str) -> String {
    text.replace("\\_", "_").replace('`', "")
}

fn contains_token(text: &str, token: &str) -> bool {
    if token.is_empty() {
        return false;
    }
    text.match_indices(token).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + token.len()..].chars().next();
        !before.is_some_and(is_ident_char) && !after.is_some_and(is_ident_char)
    })
}

/// Whether a single expected answer occurs in the completion.
pub fn answer_present(raw_text: &str, spec: &AnswerSpec) -> bool {
    let text = deescape(raw_text);
    match spec {
        AnswerSpec::Identifier { token } => contains_token(&text, token),
        AnswerSpec::Numeric { value, .. } => extract_numbers(&text).iter().any(|n| n.matches(*value)),
        AnswerSpec::StringLiteral { text: s } => raw_text.contains(s.as_str()) || text.contains(s.as_str()),
        AnswerSpec::Keyword { text: k } => grade_keyword(raw_text, k),
    }
}

fn verdict(question: &Question, rep_index: u32, raw_text: &str, parsed: Parsed, grade: Grade, cfg: SampleConfig) -> Verdict {
    Verdict {
        question_id: question.question_id.clone(),
        instance_id: question.instance_id.clone(),
        label: question.label.clone(),
        rep_index,
        kind: question.kind,
        expected: question.expected.clone(),
        raw_text: raw_text.to_string(),
        parsed,
        grade,
        temperature: cfg.temperature,
        top_p: cfg.top_p,
        randomization_rate: cfg.randomization_rate,
    }
}

/// Sampling configuration a completion was produced under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub randomization_rate: Option<f64>,
}

pub fn grade_tf(question: &Question, rep_index: u32, raw_text: &str, cfg: SampleConfig) -> Result<Verdict, QuizError> {
    let Expected::Bool(expected) = question.expected else {
        return Err(QuizError::KindMismatch(question.kind));
    };
    if !question.kind.is_tf() {
        return Err(QuizError::KindMismatch(question.kind));
    }
    let parsed = parse_tf(raw_text);
    let grade = match parsed {
        Parsed::Tf(b) if b == expected => Grade::Correct,
        Parsed::Tf(_) => Grade::Incorrect,
        _ => Grade::Unparseable,
    };
    Ok(verdict(question, rep_index, raw_text, parsed, grade, cfg))
}

/// Grades short-answer and purpose questions: every expected value must occur.
pub fn grade_value(question: &Question, rep_index: u32, raw_text: &str, cfg: SampleConfig) -> Result<Verdict, QuizError> {
    let Expected::Answers(specs) = &question.expected else {
        return Err(QuizError::KindMismatch(question.kind));
    };
    if question.kind.is_tf() {
        return Err(QuizError::KindMismatch(question.kind));
    }
    let trimmed = raw_text.trim();
    let (parsed, grade) = if trimmed.is_empty() {
        (Parsed::Unparseable, Grade::Unparseable)
    } else {
        let ok = !specs.is_empty() && specs.iter().all(|s| answer_present(raw_text, s));
        (Parsed::Text(trimmed.to_string()), if ok { Grade::Correct } else { Grade::Incorrect })
    };
    Ok(verdict(question, rep_index, raw_text, parsed, grade, cfg))
}

/// Dispatches on the question kind.
pub fn grade(question: &Question, rep_index: u32, raw_text: &str, cfg: SampleConfig) -> Verdict {
    let r = if question.kind.is_tf() {
        grade_tf(question, rep_index, raw_text, cfg)
    } else {
        grade_value(question, rep_index, raw_text, cfg)
    };
    r.expect("question kind and expected answer agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CFG: SampleConfig = SampleConfig { temperature: 0.0, top_p: 1.0, randomization_rate: None };

    fn tf(kind: QuestionKind, expected: bool) -> Question {
        Question {
            question_id: "i/PID1".into(),
            instance_id: "i".into(),
            label: "PID1".into(),
            kind,
            text: String::new(),
            expected: Expected::Bool(expected),
            capability_id: Some("PID1".into()),
            fact_id: None,
            fact_kind: None,
        }
    }

    fn short(specs: Vec<AnswerSpec>) -> Question {
        Question {
            question_id: "i/f".into(),
            instance_id: "i".into(),
            label: "f".into(),
            kind: QuestionKind::ShortAnswer,
            text: String::new(),
            expected: Expected::Answers(specs),
            capability_id: None,
            fact_id: Some("f".into()),
            fact_kind: None,
        }
    }

    fn num(v: f64) -> AnswerSpec {
        AnswerSpec::Numeric { value: Number::Float(v), lexeme: v.to_string() }
    }

    #[test]
    fn tf_parsing() {
        assert_eq!(parse_tf("False. The above code implements a PID controller."), Parsed::Tf(false));
        assert_eq!(parse_tf("True"), Parsed::Tf(true));
        assert_eq!(parse_tf(" True."), Parsed::Tf(true));
        assert_eq!(parse_tf("Yes, the function FUN_001012c9 will delete files."), Parsed::Tf(true));
        assert_eq!(parse_tf("no"), Parsed::Tf(false));
        assert_eq!(parse_tf("The code is a server."), Parsed::Unparseable);
        assert_eq!(parse_tf(""), Parsed::Unparseable);
        assert_eq!(parse_tf("Truey"), Parsed::Unparseable);
    }

    #[test]
    fn tf_grading() {
        let v = grade_tf(&tf(QuestionKind::TfNeg, false), 0, "False. The above code implements a PID controller.", CFG)
            .unwrap();
        assert_eq!(v.grade, Grade::Correct);
        let v = grade_tf(&tf(QuestionKind::TfPos, true), 0, "False", CFG).unwrap();
        assert_eq!(v.grade, Grade::Incorrect);
        let v = grade_tf(&tf(QuestionKind::TfPos, true), 0, "Maybe.", CFG).unwrap();
        assert_eq!(v.grade, Grade::Unparseable);
        assert!(grade_tf(&short(vec![]), 0, "True", CFG).is_err());
    }

    #[test]
    fn keyword_grading() {
        assert!(grade_keyword("It is a server that can delete files in a directory.", "delete"));
        assert!(grade_keyword("To calculate the output of a PID controller.", "PID"));
        assert!(!grade_keyword("To remove files in a directory.", "delete"));
    }

    #[test]
    fn numeric_normalization() {
        assert_eq!(normalize_numeric("0x1f90").unwrap().value, Number::Int(8080));
        assert!(normalize_numeric("0x3f333333").unwrap().matches(Number::Float(0.7)));
        assert!(normalize_numeric("0x3dcccccd").unwrap().matches(Number::Float(0.1)));
        assert!(normalize_numeric("0x3e4ccccd").unwrap().matches(Number::Float(0.2)));
        assert!(normalize_numeric("3f333333").unwrap().matches(Number::Float(0.7)));
        assert_eq!(normalize_numeric("banana"), None);
        assert_eq!(normalize_numeric("-0.5").unwrap().value, Number::Float(-0.5));
        assert!(normalize_numeric("8080.0").unwrap().matches(Number::Int(8080)));
    }

    #[test]
    fn number_extraction() {
        let ns: Vec<Number> =
            extract_numbers("Kp = -0.4830721663176343, Ki = -0.6301845685786949, Kd = -0.96529298213277.")
                .into_iter()
                .map(|n| n.value)
                .collect();
        assert_eq!(
            ns,
            vec![Number::Float(-0.4830721663176343), Number::Float(-0.6301845685786949), Number::Float(-0.96529298213277)]
        );
        let ns: Vec<Number> = extract_numbers("param_1 is x-1 and FUN_00101394").into_iter().map(|n| n.value).collect();
        assert_eq!(ns, vec![Number::Int(1)]);
        let ns: Vec<Number> = extract_numbers("ip 192.168.0.1 port 8080").into_iter().map(|n| n.value).collect();
        assert_eq!(ns, vec![Number::Int(8080)]);
        let ns: Vec<Number> = extract_numbers("port 0x1f90, 1e3 and 3f333333").into_iter().map(|n| n.value).collect();
        assert_eq!(ns, vec![Number::Int(8080), Number::Float(1000.0), Number::Int(0x3f333333)]);
    }

    #[test]
    fn value_grading_examples() {
        let q = short(vec![AnswerSpec::Identifier { token: "param_1".into() }]);
        assert_eq!(grade_value(&q, 0, "param\\_1", CFG).unwrap().grade, Grade::Correct);
        let q = short(vec![num(0.7), num(0.1), num(0.2)]);
        assert_eq!(grade_value(&q, 0, "Kp = 0.7, Ki = 0.1, Kd = 0.2.", CFG).unwrap().grade, Grade::Correct);
        assert_eq!(grade_value(&q, 0, "Kp = 0.1, Ki = 0.1, Kd = 0.1", CFG).unwrap().grade, Grade::Incorrect);
        assert_eq!(
            grade_value(&q, 0, "Kp = 0x3f333333, Ki = 0x3dcccccd, Kd = 0x3e4ccccd", CFG).unwrap().grade,
            Grade::Correct
        );
        let q = short(vec![
            AnswerSpec::StringLiteral { text: "192.168.0.1".into() },
            AnswerSpec::Numeric { value: Number::Int(8080), lexeme: "8080".into() },
        ]);
        assert_eq!(grade_value(&q, 0, "ip=\"127.0.0.1\" port=8888", CFG).unwrap().grade, Grade::Incorrect);
        assert_eq!(
            grade_value(&q, 0, "The server listens on port 0x1f90 on the IP address 192.168.0.1.", CFG).unwrap().grade,
            Grade::Correct
        );
        assert_eq!(
            grade_value(&q, 0, "The server listens on the IP address 192.168.0.1 and port 8080.", CFG).unwrap().grade,
            Grade::Correct
        );
        let q = short(vec![AnswerSpec::Identifier { token: "in".into() }]);
        assert_eq!(grade_value(&q, 0, "integral", CFG).unwrap().grade, Grade::Incorrect);
        assert_eq!(grade_value(&q, 0, "  ", CFG).unwrap().grade, Grade::Unparseable);
    }

    #[test]
    fn bias_pair_property() {
        for truth in [true, false] {
            let pos = tf(QuestionKind::TfPos, truth);
            let neg = tf(QuestionKind::TfNeg, !truth);
            let honest = |q: &Question| if q.expected == Expected::Bool(true) { "True" } else { "False" };
            assert!(grade(&pos, 0, honest(&pos), CFG).is_correct());
            assert!(grade(&neg, 0, honest(&neg), CFG).is_correct());
            let n = [&pos, &neg].iter().filter(|q| grade(q, 0, "True", CFG).is_correct()).count();
            assert_eq!(n, 1);
        }
    }

    proptest! {
        #[test]
        fn parse_tf_ignores_case(s in "\\PC{0,40}") {
            prop_assert_eq!(parse_tf(&s), parse_tf(&s.to_lowercase()));
        }

        #[test]
        fn extract_never_panics(s in "\\PC{0,80}") {
            let _ = extract_numbers(&s);
        }

        #[test]
        fn decimal_ints_round_trip(n in -1_000_000i64..1_000_000) {
            let found = extract_numbers(&format!("value is {n}."));
            prop_assert_eq!(found.len(), 1);
            prop_assert!(found[0].matches(Number::Int(n)));
        }
    }
}
