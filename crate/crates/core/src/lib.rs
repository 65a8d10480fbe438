//! Reverse-engineering quiz harness: builds program instances with known
//! answers, asks a language model about them and scores the replies.

pub mod buildpipe;
pub mod corpus;
pub mod ctransform;
pub mod embedsim;
pub mod grader;
pub mod metrics;
pub mod pipeline;
pub mod provider;
pub mod quizgen;

pub use buildpipe::{BuildConfig, BuildError, DecompiledArtifact, Toolchain};
pub use corpus::{AnswerSpec, Capability, Category, CorpusError, Domain, Fact, FactKind, Issue, Number, ProgramTemplate};
pub use ctransform::{Derivation, ProgramInstance};
pub use embedsim::{DiagonalScore, EmbeddingMatrix};
pub use grader::{Grade, Parsed, Verdict};
pub use metrics::{ConfusionTally, MetricsRow, Report};
pub use pipeline::{PipelineError, RunManifest};
pub use provider::{Backend, Completion, ProviderConfig, ProviderError};
pub use quizgen::{GenerationParams, Prompt, Question, QuestionKind};
