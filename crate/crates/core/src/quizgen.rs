//! Question generation and prompt assembly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{render_question, AnswerSpec, Capability, FactKind};
use crate::ctransform::ProgramInstance;

pub const PURPOSE_QUESTION: &str = "In one sentence define the purpose of the above code.";
pub const PRIMING_QUESTION: &str = "What language is the above code written in?";
pub const PRIMING_ANSWER: &str = "C.";
pub const LANGUAGE_HINT: &str = "//c";
pub const SECTION_BREAK: &str = "\"\"\"";
pub const STOP_SEQUENCE: &str = "Q.";
pub const DEFAULT_TOKEN_LIMIT: usize = 4098;
pub const DEFAULT_MAX_TOKENS: u32 = 256;
pub const DEFAULT_REPS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    TfPos,
    TfNeg,
    ShortAnswer,
    Purpose,
}

impl QuestionKind {
    pub fn is_tf(self) -> bool {
        matches!(self, QuestionKind::TfPos | QuestionKind::TfNeg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Expected {
    Bool(bool),
    Answers(Vec<AnswerSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    /// `<instance_id>/<label>`.
    pub question_id: String,
    pub instance_id: String,
    /// Short label used in report tables: capability id, `n`-prefixed
    /// capability id for negatives, fact id, or `Purpose`.
    pub label: String,
    pub kind: QuestionKind,
    pub text: String,
    pub expected: Expected,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capability_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact_kind: Option<FactKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub n_reps: u32,
    pub model_id: String,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            n_reps: DEFAULT_REPS,
            model_id: "code-davinci-001".into(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), QuizError> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.temperature) {
            return Err(QuizError::InvalidParams(format!("temperature {} outside [0, 1]", self.temperature)));
        }
        if !unit.contains(&self.top_p) {
            return Err(QuizError::InvalidParams(format!("top_p {} outside [0, 1]", self.top_p)));
        }
        if self.max_tokens == 0 || self.n_reps == 0 {
            return Err(QuizError::InvalidParams("max_tokens and n_reps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub stop_sequences: Vec<String>,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    /// Estimated-token ceiling for the prompt.
    pub token_limit: usize,
    /// Include the fixed priming Q&A pair.
    pub priming: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions { token_limit: DEFAULT_TOKEN_LIMIT, priming: true }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuizError {
    #[error("instance {instance} has no truth value for capability {capability}")]
    MissingTruth { instance: String, capability: String },
    #[error("instance {instance} has no purpose keyword")]
    NoKeyword { instance: String },
    #[error("prompt needs about {estimated} tokens, limit is {limit}")]
    TokenBudgetExceeded { estimated: usize, limit: usize },
    #[error("question kind {0:?} does not match the requested operation")]
    KindMismatch(QuestionKind),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
}

/// One positive and one negative question per capability.
pub fn gen_tf_questions(instance: &ProgramInstance, capabilities: &[Capability]) -> Result<Vec<Question>, QuizError> {
    let mut out = Vec::with_capacity(capabilities.len() * 2);
    for cap in capabilities {
        let truth = *instance.capability_truth.get(&cap.short_id).ok_or_else(|| QuizError::MissingTruth {
            instance: instance.instance_id.clone(),
            capability: cap.short_id.clone(),
        })?;
        let neg_label = format!("n{}", cap.short_id);
        out.push(Question {
            question_id: format!("{}/{}", instance.instance_id, cap.short_id),
            instance_id: instance.instance_id.clone(),
            label: cap.short_id.clone(),
            kind: QuestionKind::TfPos,
            text: format!("True or False: The code above does {}.", cap.phrase),
            expected: Expected::Bool(truth),
            capability_id: Some(cap.short_id.clone()),
            fact_id: None,
            fact_kind: None,
        });
        out.push(Question {
            question_id: format!("{}/{}", instance.instance_id, neg_label),
            instance_id: instance.instance_id.clone(),
            label: neg_label,
            kind: QuestionKind::TfNeg,
            text: format!("True or False: The code above does not {}.", cap.phrase),
            expected: Expected::Bool(!truth),
            capability_id: Some(cap.short_id.clone()),
            fact_id: None,
            fact_kind: None,
        });
    }
    Ok(out)
}

/// One short-answer question per resolvable fact. Returns the questions and
/// the number of facts skipped as unresolvable.
pub fn gen_short_questions(instance: &ProgramInstance) -> (Vec<Question>, usize) {
    // Placeholders name functions as they appear in the instance; decompiled
    // instances call them by their decompiler names.
    let to_shown: BTreeMap<&str, &str> =
        instance.function_map.iter().map(|(shown, orig)| (orig.as_str(), shown.as_str())).collect();
    let mut skipped = 0;
    let mut out = Vec::new();
    for rf in &instance.resolved_facts {
        if rf.unresolvable.is_some() || rf.fact.kind == FactKind::PurposeKeyword {
            skipped += usize::from(rf.unresolvable.is_some());
            continue;
        }
        let text = render_question(&rf.fact.question, |n| to_shown.get(n).copied().unwrap_or(n).to_string());
        out.push(Question {
            question_id: format!("{}/{}", instance.instance_id, rf.fact.fact_id),
            instance_id: instance.instance_id.clone(),
            label: rf.fact.fact_id.clone(),
            kind: QuestionKind::ShortAnswer,
            text,
            expected: Expected::Answers(rf.fact.expected.clone()),
            capability_id: None,
            fact_id: Some(rf.fact.fact_id.clone()),
            fact_kind: Some(rf.fact.kind),
        });
    }
    (out, skipped)
}

pub fn gen_purpose_question(instance: &ProgramInstance) -> Result<Question, QuizError> {
    let keyword = instance
        .purpose_keyword
        .clone()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| QuizError::NoKeyword { instance: instance.instance_id.clone() })?;
    Ok(Question {
        question_id: format!("{}/Purpose", instance.instance_id),
        instance_id: instance.instance_id.clone(),
        label: "Purpose".into(),
        kind: QuestionKind::Purpose,
        text: PURPOSE_QUESTION.into(),
        expected: Expected::Answers(vec![AnswerSpec::Keyword { text: keyword }]),
        capability_id: None,
        fact_id: None,
        fact_kind: Some(FactKind::PurposeKeyword),
    })
}

/// Conservative token estimate: one token per four bytes, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

/// Builds the prompt text for one question. The grammar is
/// `//c\n<SOURCE>\n"""\n Q. <priming>\n A. C.\n Q. <QUESTION>\n A.`
/// with trailing newlines of the source removed.
pub fn assemble_prompt(
    instance: &ProgramInstance,
    question: &Question,
    params: &GenerationParams,
    options: &PromptOptions,
) -> Result<Prompt, QuizError> {
    let source = instance.source_text.trim_end_matches(['\n', '\r']);
    let mut text = String::with_capacity(source.len() + question.text.len() + 96);
    text.push_str(LANGUAGE_HINT);
    text.push('\n');
    text.push_str(source);
    text.push('\n');
    text.push_str(SECTION_BREAK);
    text.push('\n');
    if options.priming {
        text.push_str(&format!(" Q. {PRIMING_QUESTION}\n A. {PRIMING_ANSWER}\n"));
    }
    text.push_str(&format!(" Q. {}\n A.", question.text));
    let estimated = estimate_tokens(&text);
    if estimated > options.token_limit {
        return Err(QuizError::TokenBudgetExceeded { estimated, limit: options.token_limit });
    }
    Ok(Prompt { text, stop_sequences: vec![STOP_SEQUENCE.into()], params: params.clone() })
}
