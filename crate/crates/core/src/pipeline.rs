//! Run manifests and the end-to-end workflows: instantiate, derive, run,
//! sweep, report and embed. Every output is a pure function of the manifest,
//! the corpus and the completion cache.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::buildpipe::{
    build_and_decompile, build_and_decompile_source, compile_source, derive_decompiled_instance, run_capa, BuildConfig,
    BuildError, Toolchain,
};
use crate::corpus::{
    builtin_capabilities, default_domains, load_corpus_dir, merge_capa_truth, validate_corpus_for, CorpusError, Domain,
    FactKind, Issue, ProgramTemplate,
};
use crate::ctransform::{randomize, Derivation, ProgramInstance, RandomizeError};
use crate::embedsim::{
    confusion_matrix, diagonal_score, embed_functions, matrix_csv, matrix_sidecar, pair_by_name, split_functions,
    DiagonalScore, EmbedError, EmbeddingBackend, HttpBackend, Origin, StubBackend,
};
use crate::grader::{grade, SampleConfig, Verdict};
use crate::metrics::{
    aggregate_report, metrics_table_csv, per_question_csv, rate_curve_csv, sweep_grid, MetricsError, Report, Totals,
};
use crate::provider::{BatchItem, Provider, ProviderConfig, ProviderError};
use crate::quizgen::{
    assemble_prompt, gen_purpose_question, gen_short_questions, gen_tf_questions, GenerationParams, PromptOptions,
    QuizError, Question, DEFAULT_MAX_TOKENS, DEFAULT_REPS,
};

pub const INSTANCES_DIR: &str = "instances";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const COMPLETION_CACHE: &str = "cache/completions.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("corpus has {} issue(s)", .0.len())]
    InvalidCorpus(Vec<Issue>),
    #[error(transparent)]
    Randomize(#[from] RandomizeError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Quiz(#[from] QuizError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("no instances under {0}; run instantiate first")]
    NoInstances(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivationSpec {
    /// Include each template unchanged.
    #[serde(default = "yes")]
    pub original: bool,
    /// Randomization rates in [0, 1].
    #[serde(default)]
    pub rates: Vec<f64>,
    #[serde(default = "one")]
    pub seeds_per_rate: u32,
    /// Build labels such as `-o1 -g`, `-o1`, `-o1 -s`.
    #[serde(default)]
    pub build_configs: Vec<String>,
}

fn one() -> u32 {
    1
}

impl Default for DerivationSpec {
    fn default() -> Self {
        DerivationSpec { original: true, rates: Vec::new(), seeds_per_rate: 1, build_configs: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionSet {
    #[serde(default = "yes")]
    pub true_false: bool,
    #[serde(default = "yes")]
    pub short_answer: bool,
    #[serde(default = "yes")]
    pub purpose: bool,
}

impl Default for QuestionSet {
    fn default() -> Self {
        QuestionSet { true_false: true, short_answer: true, purpose: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_reps")]
    pub n_reps: u32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_model")]
    pub model_id: String,
}

fn default_temperature() -> f64 {
    0.4
}

fn default_top_p() -> f64 {
    1.0
}

fn default_reps() -> u32 {
    DEFAULT_REPS
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

fn default_model() -> String {
    GenerationParams::default().model_id
}

impl Default for ParamSpec {
    fn default() -> Self {
        ParamSpec {
            temperature: default_temperature(),
            top_p: default_top_p(),
            n_reps: default_reps(),
            max_tokens: default_max_tokens(),
            model_id: default_model(),
        }
    }
}

impl ParamSpec {
    pub fn generation(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            n_reps: self.n_reps,
            model_id: self.model_id.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub lo: f64,
    #[serde(default = "default_top_p")]
    pub hi: f64,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_step() -> f64 {
    0.2
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { lo: 0.0, hi: 1.0, step: default_step() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedSpec {
    Stub {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default = "default_embed_key")]
        api_key_env: String,
        #[serde(default = "default_embed_timeout")]
        timeout_secs: u64,
    },
}

fn default_dim() -> usize {
    64
}

fn default_embed_key() -> String {
    crate::provider::DEFAULT_API_KEY_ENV.to_string()
}

fn default_embed_timeout() -> u64 {
    60
}

impl Default for EmbedSpec {
    fn default() -> Self {
        EmbedSpec::Stub { dim: default_dim() }
    }
}

impl EmbedSpec {
    pub fn backend(&self) -> Box<dyn EmbeddingBackend> {
        match self {
            EmbedSpec::Stub { dim } => Box::new(StubBackend { dim: *dim }),
            EmbedSpec::Http { endpoint, model, api_key_env, timeout_secs } => {
                Box::new(HttpBackend::new(endpoint, model, api_key_env, *timeout_secs))
            }
        }
    }
}

/// Everything a run needs, normally read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default = "default_corpus")]
    pub corpus: PathBuf,
    /// Template ids to use; empty means the whole corpus.
    #[serde(default)]
    pub templates: Vec<String>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Master seed; every randomized instance seed derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_domains")]
    pub domains: BTreeSet<Domain>,
    #[serde(default)]
    pub derivations: DerivationSpec,
    #[serde(default)]
    pub questions: QuestionSet,
    #[serde(default)]
    pub params: ParamSpec,
    #[serde(default)]
    pub prompt: PromptOptions,
    #[serde(default)]
    pub provider: Option<ProviderConfig>,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub tools: Toolchain,
    #[serde(default)]
    pub embed: EmbedSpec,
}

fn default_corpus() -> PathBuf {
    PathBuf::from("corpus")
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            corpus: default_corpus(),
            templates: Vec::new(),
            output_dir: default_output(),
            seed: 0,
            domains: default_domains(),
            derivations: DerivationSpec::default(),
            questions: QuestionSet::default(),
            params: ParamSpec::default(),
            prompt: PromptOptions::default(),
            provider: None,
            sweep: SweepSpec::default(),
            tools: Toolchain::default(),
            embed: EmbedSpec::default(),
        }
    }
}

impl RunManifest {
    /// Parses a TOML manifest; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<RunManifest, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut m: RunManifest =
            toml::from_str(&text).map_err(|e| PipelineError::Format { path: path.to_path_buf(), message: e.to_string() })?;
        m.resolve_paths(path.parent().unwrap_or_else(|| Path::new(".")));
        m.validate()?;
        Ok(m)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.corpus);
        join(&mut self.output_dir);
        join(&mut self.tools.cache_dir);
        // A bare compiler name is looked up on PATH.
        if self.tools.compiler_path.components().count() > 1 {
            join(&mut self.tools.compiler_path);
        }
        for p in [&mut self.tools.decompiler_headless_path, &mut self.tools.decompile_script, &mut self.tools.capa_path]
            .into_iter()
            .flatten()
        {
            join(p);
        }
        if let Some(ProviderConfig { backend: crate::provider::Backend::Replay { transcript }, .. }) = &mut self.provider {
            join(transcript);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidManifest(m));
        let mut pcts = BTreeSet::new();
        for &r in &self.derivations.rates {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("rate {r} outside [0, 1]"));
            }
            if !pcts.insert(rate_percent(r)) {
                return bad(format!("rate {r} duplicates another rate"));
            }
        }
        if !self.derivations.rates.is_empty() && self.derivations.seeds_per_rate == 0 {
            return bad("seeds_per_rate must be at least 1".into());
        }
        self.build_configs()?;
        self.params.generation().validate()?;
        sweep_grid(self.sweep.lo, self.sweep.hi, self.sweep.step)?;
        if self.tools.max_processes == 0 {
            return bad("tools.max_processes must be at least 1".into());
        }
        Ok(())
    }

    pub fn build_configs(&self) -> Result<Vec<BuildConfig>, PipelineError> {
        let mut out: Vec<BuildConfig> = Vec::new();
        for label in &self.derivations.build_configs {
            let cfg = BuildConfig::from_label(label)?;
            if !out.contains(&cfg) {
                out.push(cfg);
            }
        }
        Ok(out)
    }

    pub fn instances_dir(&self) -> PathBuf {
        self.output_dir.join(INSTANCES_DIR)
    }

    /// Loads the corpus, restricted to `templates` when given.
    pub fn load_templates(&self) -> Result<Vec<ProgramTemplate>, PipelineError> {
        let all = load_corpus_dir(&self.corpus)?;
        if self.templates.is_empty() {
            return Ok(all);
        }
        self.templates
            .iter()
            .map(|id| all.iter().find(|t| &t.id == id).cloned().ok_or_else(|| PipelineError::UnknownTemplate(id.clone())))
            .collect()
    }
}

fn rate_percent(rate: f64) -> u32 {
    (rate * 100.0).round() as u32
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the `counter`-th randomized copy of a template. The same counter
/// yields the same seed at every rate.
pub fn instance_seed(master: u64, template_id: &str, counter: u32) -> u64 {
    let digest = Sha256::digest(template_id.as_bytes());
    let tag = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    splitmix64(splitmix64(master ^ tag).wrapping_add(u64::from(counter)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlannedDerivation {
    Original,
    Randomized { rate: f64, counter: u32, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedInstance {
    pub template_id: String,
    pub instance_id: String,
    pub derivation: PlannedDerivation,
}

/// Source-level instances requested by the manifest, in a stable order.
pub fn plan_instances(m: &RunManifest, templates: &[ProgramTemplate]) -> Vec<PlannedInstance> {
    let mut out = Vec::new();
    for t in templates {
        if m.derivations.original {
            out.push(PlannedInstance {
                template_id: t.id.clone(),
                instance_id: format!("{}@orig", t.id),
                derivation: PlannedDerivation::Original,
            });
        }
        for &rate in &m.derivations.rates {
            for counter in 0..m.derivations.seeds_per_rate {
                out.push(PlannedInstance {
                    template_id: t.id.clone(),
                    instance_id: format!("{}@p{:03}-s{:02}", t.id, rate_percent(rate), counter),
                    derivation: PlannedDerivation::Randomized {
                        rate,
                        counter,
                        seed: instance_seed(m.seed, &t.id, counter),
                    },
                });
            }
        }
    }
    out
}

pub fn realize(plan: &PlannedInstance, template: &ProgramTemplate) -> Result<ProgramInstance, PipelineError> {
    let mut inst = match plan.derivation {
        PlannedDerivation::Original => ProgramInstance::original(template),
        PlannedDerivation::Randomized { rate, seed, .. } => randomize(template, rate, seed)?,
    };
    inst.instance_id = plan.instance_id.clone();
    Ok(inst)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes `<dir>/<id>/instance.c` and `instance.meta.json`.
pub fn write_instance(dir: &Path, inst: &ProgramInstance) -> Result<PathBuf, PipelineError> {
    let idir = dir.join(&inst.instance_id);
    let mut meta = serde_json::to_value(inst).expect("instance serializes");
    meta.as_object_mut().expect("object").remove("source_text");
    write_atomic(&idir.join("instance.c"), inst.source_text.as_bytes())?;
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    text.push('\n');
    write_atomic(&idir.join("instance.meta.json"), text.as_bytes())?;
    Ok(idir)
}

pub fn read_instance(idir: &Path) -> Result<ProgramInstance, PipelineError> {
    let meta_path = idir.join("instance.meta.json");
    let src_path = idir.join("instance.c");
    let meta = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let source = fs::read_to_string(&src_path).map_err(io_err(&src_path))?;
    let mut v: serde_json::Value = serde_json::from_str(&meta)
        .map_err(|e| PipelineError::Format { path: meta_path.clone(), message: e.to_string() })?;
    v.as_object_mut()
        .ok_or_else(|| PipelineError::Format { path: meta_path.clone(), message: "not an object".into() })?
        .insert("source_text".into(), source.into());
    serde_json::from_value(v).map_err(|e| PipelineError::Format { path: meta_path, message: e.to_string() })
}

/// All instances under `dir`, sorted by id.
pub fn load_instances(dir: &Path) -> Result<Vec<ProgramInstance>, PipelineError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("instance.meta.json").exists())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_instance(d)).collect()
}

/// Fails with every corpus issue when the corpus is not well-formed.
pub fn validate(m: &RunManifest) -> Result<Vec<Issue>, PipelineError> {
    let templates = m.load_templates()?;
    Ok(validate_corpus_for(&templates, &m.domains))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InstantiateSummary {
    pub written: Vec<String>,
    /// Conflicts between asserted and scanned capa capabilities.
    pub warnings: Vec<Issue>,
}

/// Writes every source-level instance the manifest requests.
pub fn instantiate(m: &RunManifest) -> Result<InstantiateSummary, PipelineError> {
    let mut templates = m.load_templates()?;
    let mut warnings = Vec::new();
    if m.domains.contains(&Domain::Capa) && m.tools.capa_path.is_some() {
        for t in &mut templates {
            let binary = compile_source(&t.source_text, &BuildConfig::plain(), &m.tools)?;
            let scanned = run_capa(&binary, &m.tools)?;
            warnings.extend(merge_capa_truth(t, &scanned));
        }
    }
    let issues = validate_corpus_for(&templates, &m.domains);
    if !issues.is_empty() {
        return Err(PipelineError::InvalidCorpus(issues));
    }
    let by_id: HashMap<&str, &ProgramTemplate> = templates.iter().map(|t| (t.id.as_str(), t)).collect();
    let dir = m.instances_dir();
    let mut written = Vec::new();
    for plan in plan_instances(m, &templates) {
        let inst = realize(&plan, by_id[plan.template_id.as_str()])?;
        write_instance(&dir, &inst)?;
        written.push(inst.instance_id);
    }
    Ok(InstantiateSummary { written, warnings })
}

#[derive(Debug, Default)]
pub struct DeriveSummary {
    pub derived: Vec<String>,
    pub failures: Vec<(String, BuildError)>,
}

/// Compiles and decompiles every source-level instance under each requested
/// build configuration. Jobs run on up to `tools.max_processes` threads.
pub fn derive(m: &RunManifest) -> Result<DeriveSummary, PipelineError> {
    let configs = m.build_configs()?;
    let templates: HashMap<String, ProgramTemplate> =
        m.load_templates()?.into_iter().map(|t| (t.id.clone(), t)).collect();
    let dir = m.instances_dir();
    let bases: Vec<ProgramInstance> = load_instances(&dir)?
        .into_iter()
        .filter(|i| !matches!(i.derivation, Derivation::Decompiled { .. }) && templates.contains_key(&i.template_id))
        .collect();
    let jobs: Vec<(&ProgramInstance, &BuildConfig)> =
        bases.iter().flat_map(|b| configs.iter().map(move |c| (b, c))).collect();
    let scan_capa = m.domains.contains(&Domain::Capa) && m.tools.capa_path.is_some();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<ProgramInstance, BuildError>)>> = Mutex::new(Vec::new());
    thread::scope(|s| {
        for _ in 0..m.tools.max_processes.min(jobs.len()) {
            s.spawn(|| loop {
                let n = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(inst, cfg)) = jobs.get(n) else { break };
                let template = &templates[&inst.template_id];
                let r = build_and_decompile(inst, cfg, &m.tools).and_then(|art| {
                    let mut dec = derive_decompiled_instance(template, inst, &art, cfg);
                    if scan_capa {
                        for (id, v) in run_capa(&art.binary, &m.tools)? {
                            dec.capability_truth.entry(id).or_insert(v);
                        }
                    }
                    Ok(dec)
                });
                results.lock().expect("results lock").push((n, r));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(n, _)| *n);
    let mut summary = DeriveSummary::default();
    for (n, r) in results {
        let (inst, cfg) = jobs[n];
        match r {
            Ok(dec) => {
                write_instance(&dir, &dec)?;
                summary.derived.push(dec.instance_id);
            }
            Err(e) => {
                log::error!("{} {}: {e}", inst.instance_id, cfg.label);
                summary.failures.push((format!("{}-{}", inst.instance_id, cfg.slug()), e));
            }
        }
    }
    Ok(summary)
}

/// The randomization rate an instance descends from, if any.
pub fn instance_rate(d: &Derivation) -> Option<f64> {
    match d {
        Derivation::Original => None,
        Derivation::Randomized { rate, .. } => Some(*rate),
        Derivation::Decompiled { from, .. } => instance_rate(from),
    }
}

/// Build label of an instance id, or `source` for undecompiled instances.
pub fn config_label(instance_id: &str) -> String {
    let slug = instance_id.rsplit_once('-').map(|(_, s)| s);
    BuildConfig::all()
        .into_iter()
        .find(|c| Some(c.slug().as_str()) == slug)
        .map_or_else(|| "source".to_string(), |c| c.label)
}

/// Questions for one instance according to the question set.
pub fn questions_for(
    instance: &ProgramInstance,
    set: QuestionSet,
    domains: &BTreeSet<Domain>,
) -> Result<Vec<Question>, PipelineError> {
    let mut qs = Vec::new();
    if set.true_false {
        qs.extend(gen_tf_questions(instance, &builtin_capabilities(domains))?);
    }
    if set.short_answer {
        qs.extend(gen_short_questions(instance).0);
    }
    if set.purpose && instance.purpose_keyword.is_some() {
        qs.push(gen_purpose_question(instance)?);
    }
    Ok(qs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: String,
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rep_index: Option<u32>,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    pub verdicts: Vec<Verdict>,
    pub errors: Vec<ErrorRecord>,
}

impl RunOutcome {
    pub fn provider_errors(&self) -> usize {
        self.errors.iter().filter(|e| e.stage == "provider").count()
    }
}

struct Prepared {
    question: Question,
    instance: ProgramInstance,
}

fn prepare(m: &RunManifest, instances: &[ProgramInstance]) -> Result<Vec<Prepared>, PipelineError> {
    let mut out = Vec::new();
    for inst in instances {
        for q in questions_for(inst, m.questions, &m.domains)? {
            out.push(Prepared { question: q, instance: inst.clone() });
        }
    }
    Ok(out)
}

fn open_provider(m: &RunManifest) -> Result<Provider, PipelineError> {
    let cfg = m.provider.clone().ok_or_else(|| PipelineError::InvalidManifest("no [provider] configured".into()))?;
    Ok(Provider::new(cfg)?.with_cache_file(&m.output_dir.join(COMPLETION_CACHE))?)
}

fn run_prepared(
    provider: &Provider,
    prepared: &[Prepared],
    params: &GenerationParams,
    options: PromptOptions,
) -> RunOutcome {
    let mut outcome = RunOutcome::default();
    let mut items = Vec::new();
    let mut by_id: HashMap<&str, &Prepared> = HashMap::new();
    for p in prepared {
        match assemble_prompt(&p.instance, &p.question, params, &options) {
            Ok(prompt) => {
                items.push(BatchItem { question_id: p.question.question_id.clone(), prompt });
                by_id.insert(&p.question.question_id, p);
            }
            Err(e) => outcome.errors.push(ErrorRecord {
                stage: "prompt".into(),
                question_id: p.question.question_id.clone(),
                rep_index: None,
                error: e.to_string(),
            }),
        }
    }
    for r in provider.run_batch(&items, params.n_reps) {
        match r.outcome {
            Ok(c) => {
                let p = by_id[r.question_id.as_str()];
                let cfg = SampleConfig {
                    temperature: params.temperature,
                    top_p: params.top_p,
                    randomization_rate: instance_rate(&p.instance.derivation),
                };
                outcome.verdicts.push(grade(&p.question, r.rep_index, &c.raw_text, cfg));
            }
            Err(e) => outcome.errors.push(ErrorRecord {
                stage: "provider".into(),
                question_id: r.question_id,
                rep_index: Some(r.rep_index),
                error: e.to_string(),
            }),
        }
    }
    outcome
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).expect("row serializes"));
        s.push('\n');
    }
    s
}

fn write_outcome(dir: &Path, outcome: &RunOutcome) -> Result<(), PipelineError> {
    write_atomic(&dir.join(VERDICTS_FILE), jsonl(&outcome.verdicts).as_bytes())?;
    write_atomic(&dir.join(ERRORS_FILE), jsonl(&outcome.errors).as_bytes())
}

/// Asks every question of every instance `n_reps` times and grades the
/// answers into `<output_dir>/verdicts.jsonl`.
pub fn run(m: &RunManifest) -> Result<RunOutcome, PipelineError> {
    let instances = load_instances(&m.instances_dir())?;
    if instances.is_empty() {
        return Err(PipelineError::NoInstances(m.instances_dir()));
    }
    let prepared = prepare(m, &instances)?;
    let provider = open_provider(m)?;
    let outcome = run_prepared(&provider, &prepared, &m.params.generation(), m.prompt);
    write_outcome(&m.output_dir, &outcome)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPlan {
    pub grid: Vec<(f64, f64)>,
    /// (instance id, questions asked of it).
    pub instances: Vec<(String, usize)>,
    pub n_reps: u32,
    pub total_completions: u64,
}

fn planned_question_count(t: &ProgramTemplate, m: &RunManifest, decompiled: bool) -> usize {
    let mut n = 0;
    if m.questions.true_false {
        n += 2 * builtin_capabilities(&m.domains).len();
    }
    if m.questions.short_answer {
        // Decompilation renames locals, so variable questions drop out.
        n += t.facts.iter().filter(|f| !(decompiled && f.kind == FactKind::VariableName)).count();
    }
    if m.questions.purpose && t.purpose_keyword.is_some() {
        n += 1;
    }
    n
}

/// Counts the completions a sweep schedules without building or calling
/// anything. Short-answer counts are upper bounds for decompiled instances.
pub fn plan_sweep(m: &RunManifest, templates: &[ProgramTemplate]) -> Result<SweepPlan, PipelineError> {
    let grid = sweep_grid(m.sweep.lo, m.sweep.hi, m.sweep.step)?;
    let configs = m.build_configs()?;
    let by_id: HashMap<&str, &ProgramTemplate> = templates.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut instances = Vec::new();
    for plan in plan_instances(m, templates) {
        let t = by_id[plan.template_id.as_str()];
        instances.push((plan.instance_id.clone(), planned_question_count(t, m, false)));
        for c in &configs {
            instances.push((format!("{}-{}", plan.instance_id, c.slug()), planned_question_count(t, m, true)));
        }
    }
    let per_point: u64 = instances.iter().map(|(_, n)| *n as u64).sum();
    let total_completions = grid.len() as u64 * per_point * u64::from(m.params.n_reps);
    Ok(SweepPlan { grid, instances, n_reps: m.params.n_reps, total_completions })
}

pub fn sweep_point_dir(m: &RunManifest, t: f64, top_p: f64) -> PathBuf {
    m.output_dir.join("sweep").join(format!("t{t:.1}-p{top_p:.1}"))
}

/// Runs every grid point, then writes the combined verdicts and report
/// under `<output_dir>/sweep`.
pub fn sweep(m: &RunManifest) -> Result<(RunOutcome, Report), PipelineError> {
    let grid = sweep_grid(m.sweep.lo, m.sweep.hi, m.sweep.step)?;
    let instances = load_instances(&m.instances_dir())?;
    if instances.is_empty() {
        return Err(PipelineError::NoInstances(m.instances_dir()));
    }
    let prepared = prepare(m, &instances)?;
    let provider = open_provider(m)?;
    let mut all = RunOutcome::default();
    for (t, top_p) in grid {
        let params = GenerationParams { temperature: t, top_p, ..m.params.generation() };
        let outcome = run_prepared(&provider, &prepared, &params, m.prompt);
        write_outcome(&sweep_point_dir(m, t, top_p), &outcome)?;
        all.verdicts.extend(outcome.verdicts);
        all.errors.extend(outcome.errors);
    }
    let dir = m.output_dir.join("sweep");
    write_outcome(&dir, &all)?;
    let report = report(&dir)?;
    Ok((all, report))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Format { path: path.to_path_buf(), message: format!("line {}: {e}", i + 1) })
        })
        .collect()
}

/// Accuracy per (build config, temperature, top_p): the sweep table.
pub fn config_summary_csv(verdicts: &[Verdict]) -> String {
    let mut cells: BTreeMap<(String, u64, u64), (u64, u64)> = BTreeMap::new();
    for v in verdicts {
        let key = (config_label(&v.instance_id), v.temperature.to_bits(), v.top_p.to_bits());
        let e = cells.entry(key).or_default();
        e.0 += 1;
        e.1 += u64::from(v.is_correct());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config", "temperature", "top_p", "asked", "correct", "percent"]).expect("csv to memory");
    for ((cfg, t, p), (asked, correct)) in cells {
        let pct = Totals::new(asked, correct).percent.map_or_else(String::new, |x| format!("{x:.2}"));
        w.write_record([
            cfg,
            format!("{:.1}", f64::from_bits(t)),
            format!("{:.1}", f64::from_bits(p)),
            asked.to_string(),
            correct.to_string(),
            pct,
        ])
        .expect("csv to memory");
    }
    String::from_utf8(w.into_inner().expect("flush csv")).expect("csv is utf-8")
}

/// Aggregates `<dir>/verdicts.jsonl` and writes the report tables beside it.
pub fn report(dir: &Path) -> Result<Report, PipelineError> {
    let verdicts: Vec<Verdict> = read_jsonl(&dir.join(VERDICTS_FILE))?;
    let errors: Vec<ErrorRecord> = read_jsonl(&dir.join(ERRORS_FILE))?;
    let mut report = aggregate_report(&verdicts);
    report.totals.provider_errors = errors.iter().filter(|e| e.stage == "provider").count() as u64;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_atomic(&dir.join("report.json"), json.as_bytes())?;
    write_atomic(&dir.join("per_question.csv"), per_question_csv(&report).as_bytes())?;
    write_atomic(&dir.join("metrics.csv"), metrics_table_csv(&report).as_bytes())?;
    write_atomic(&dir.join("rate_curve.csv"), rate_curve_csv(&report).as_bytes())?;
    write_atomic(&dir.join("config_summary.csv"), config_summary_csv(&verdicts).as_bytes())?;
    Ok(report)
}

/// Where the decompiled side of an embedding comparison comes from.
pub enum DecompiledSource<'a> {
    /// Build and decompile with the configured tools.
    Decompiler(&'a BuildConfig),
    /// Decompiled text supplied by the caller, with an optional
    /// source-to-decompiled function pairing.
    Text { label: &'a str, text: &'a str, pairing: Option<BTreeMap<String, String>> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbedOutcome {
    pub label: String,
    pub dir: PathBuf,
    pub score: Option<DiagonalScore>,
}

/// Embeds source and decompiled functions and writes the distance matrix
/// to `<output_dir>/embed/<name>/<slug>/`.
pub fn embed(
    m: &RunManifest,
    name: &str,
    source_text: &str,
    decompiled: DecompiledSource<'_>,
    backend: &dyn EmbeddingBackend,
) -> Result<EmbedOutcome, PipelineError> {
    let src_fns = split_functions(source_text, Origin::Source)?;
    let (label, dec_text, pairing) = match decompiled {
        DecompiledSource::Decompiler(cfg) => {
            let art = build_and_decompile_source(source_text, cfg, &m.tools)?;
            (cfg.label.clone(), art.source_text, Some(art.function_name_map))
        }
        DecompiledSource::Text { label, text, pairing } => (label.to_string(), text.to_string(), pairing),
    };
    let dec_fns = split_functions(&dec_text, Origin::Decompiled)?;
    let pairing = match pairing {
        Some(p) => p
            .into_iter()
            .filter(|(s, d)| src_fns.iter().any(|f| &f.fn_id == s) && dec_fns.iter().any(|f| &f.fn_id == d))
            .collect(),
        None => pair_by_name(&src_fns, &dec_fns),
    };
    if pairing.is_empty() {
        return Err(EmbedError::InvalidPairing(
            "no source function matches a decompiled function by name; supply a pairing file".into(),
        )
        .into());
    }
    let src = embed_functions(backend, &src_fns)?;
    let dec = embed_functions(backend, &dec_fns)?;
    let matrix = confusion_matrix(&src, &dec, &pairing)?;
    let slug = label.replace(['-', ' '], "");
    let dir = m.output_dir.join("embed").join(name).join(if slug.is_empty() { "decompiled".into() } else { slug });
    write_atomic(&dir.join("matrix.csv"), matrix_csv(&matrix).as_bytes())?;
    let mut sidecar = matrix_sidecar(&matrix);
    sidecar["config"] = json!(label);
    let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    text.push('\n');
    write_atomic(&dir.join("matrix.json"), text.as_bytes())?;
    Ok(EmbedOutcome { label, dir, score: diagonal_score(&matrix) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Category, Fact};

    fn template() -> ProgramTemplate {
        ProgramTemplate {
            id: "tiny".into(),
            category: Category::Cybersecurity,
            source_text: "int add(int a, int b) { return a + b; }\nint main(void) { int x = 4; return add(x, 2); }\n".into(),
            facts: Vec::<Fact>::new(),
            capability_truth: Default::default(),
            purpose_keyword: None,
        }
    }

    #[test]
    fn manifest_defaults_and_validation() {
        let m: RunManifest = toml::from_str("").unwrap();
        assert_eq!(m.params.temperature, 0.4);
        assert_eq!(m.params.top_p, 1.0);
        assert_eq!(m.params.n_reps, 10);
        assert!(m.validate().is_ok());
        let bad: RunManifest = toml::from_str("[derivations]\nrates = [0.5, 1.5]\n").unwrap();
        assert!(matches!(bad.validate(), Err(PipelineError::InvalidManifest(_))));
        let dup: RunManifest = toml::from_str("[derivations]\nrates = [0.5, 0.5]\n").unwrap();
        assert!(dup.validate().is_err());
        let zero: RunManifest = toml::from_str("[params]\nn_reps = 0\n").unwrap();
        assert!(zero.validate().is_err());
        assert!(toml::from_str::<RunManifest>("bogus = 1\n").is_err());
    }

    #[test]
    fn provider_and_tools_sections_parse() {
        let m: RunManifest = toml::from_str(
            r#"
            [provider]
            max_inflight = 2
            [provider.backend]
            type = "replay"
            transcript = "t.jsonl"
            [tools]
            compiler_path = "gcc"
            capa_path = "bin/capa"
            timeout_seconds = 30
            [embed]
            backend = "stub"
            dim = 8
            "#,
        )
        .unwrap();
        let mut m = m;
        m.resolve_paths(Path::new("/base"));
        assert_eq!(m.tools.compiler_path, PathBuf::from("gcc"));
        assert_eq!(m.tools.capa_path, Some(PathBuf::from("/base/bin/capa")));
        assert_eq!(m.corpus, PathBuf::from("/base/corpus"));
        match &m.provider.as_ref().unwrap().backend {
            crate::provider::Backend::Replay { transcript } => assert_eq!(transcript, Path::new("/base/t.jsonl")),
            b => panic!("{b:?}"),
        }
        assert_eq!(m.embed, EmbedSpec::Stub { dim: 8 });
    }

    #[test]
    fn seeds_and_plan() {
        let m = RunManifest {
            derivations: DerivationSpec {
                original: false,
                rates: (0..=10).map(|i| f64::from(i) / 10.0).collect(),
                seeds_per_rate: 10,
                build_configs: vec![],
            },
            ..RunManifest::default()
        };
        let plan = plan_instances(&m, &[template()]);
        assert_eq!(plan.len(), 110);
        assert_eq!(plan[0].instance_id, "tiny@p000-s00");
        assert_eq!(plan[109].instance_id, "tiny@p100-s09");
        let ids: BTreeSet<_> = plan.iter().map(|p| &p.instance_id).collect();
        assert_eq!(ids.len(), 110);
        assert_eq!(instance_seed(1, "a", 0), instance_seed(1, "a", 0));
        assert_ne!(instance_seed(1, "a", 0), instance_seed(1, "a", 1));
        assert_ne!(instance_seed(1, "a", 0), instance_seed(1, "b", 0));
        assert_ne!(instance_seed(1, "a", 0), instance_seed(2, "a", 0));
    }

    #[test]
    fn config_labels() {
        assert_eq!(config_label("pid_d@orig"), "source");
        assert_eq!(config_label("pid_d@orig-o1g"), "-o1 -g");
        assert_eq!(config_label("pid_d@p050-s03-o1s"), "-o1 -s");
        assert_eq!(config_label("pid_d@p050-s03"), "source");
    }

    #[test]
    fn instance_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = template();
        let inst = randomize(&t, 1.0, 3).unwrap();
        write_instance(dir.path(), &inst).unwrap();
        let back = load_instances(dir.path()).unwrap();
        assert_eq!(back, vec![inst]);
    }
}
