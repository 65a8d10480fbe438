use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use requiz_core::buildpipe::BuildConfig;
use requiz_core::corpus::{load_corpus_dir, Domain};
use requiz_core::pipeline::{self, DecompiledSource, PipelineError, QuestionSet, RunManifest};
use requiz_core::provider::{Backend, ProviderConfig};

#[derive(Parser)]
#[command(name = "requiz", version, about = "Quiz language models on C programs with known answers")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override fields of the run manifest.
#[derive(Args)]
struct Overrides {
    /// TOML run manifest; relative paths inside it resolve against its directory.
    #[arg(short, long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Restrict to these template ids (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    templates: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Capability domains: cybersecurity, ics, capa (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    domains: Vec<String>,
    /// Randomization rates (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    rates: Vec<f64>,
    #[arg(long, global = true)]
    seeds_per_rate: Option<u32>,
    /// Skip the unmodified templates.
    #[arg(long, global = true)]
    no_original: bool,
    /// Build configuration labels such as "-o1 -s" (repeatable).
    #[arg(long = "build-config", global = true, allow_hyphen_values = true)]
    build_configs: Vec<String>,
    /// Question kinds to ask: tf, short, purpose (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    questions: Vec<String>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    top_p: Option<f64>,
    #[arg(long, global = true)]
    n_reps: Option<u32>,
    /// Answer from this JSONL transcript instead of a live endpoint.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
    /// Completion endpoint URL; the bearer token comes from the environment.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    max_inflight: Option<usize>,
    #[arg(long, global = true)]
    compiler: Option<PathBuf>,
    #[arg(long, global = true)]
    decompiler: Option<PathBuf>,
    #[arg(long, global = true)]
    decompile_script: Option<PathBuf>,
    #[arg(long, global = true)]
    capa: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the corpus manifests against their sources.
    Validate,
    /// Write original and randomized program instances.
    Instantiate,
    /// Compile and decompile instances for each build configuration.
    Derive,
    /// Ask every question and grade the answers.
    Run,
    /// Run the temperature / top_p grid.
    Sweep {
        /// Print the schedule without building or calling the provider.
        #[arg(long)]
        dry_run: bool,
    },
    /// Aggregate a verdict directory into CSV and JSON tables.
    Report {
        /// Directory holding verdicts.jsonl (defaults to the output dir).
        dir: Option<PathBuf>,
    },
    /// Compare source and decompiled functions by embedding distance.
    Embed {
        /// Template id from the corpus.
        #[arg(long, conflicts_with = "source")]
        template: Option<String>,
        /// A C source file instead of a template.
        #[arg(long)]
        source: Option<PathBuf>,
        /// Decompiled text to compare against instead of running the decompiler.
        #[arg(long)]
        decompiled: Option<PathBuf>,
        /// JSON object mapping source function names to decompiled names.
        #[arg(long)]
        pairing: Option<PathBuf>,
    },
}

fn load_manifest(o: &Overrides) -> Result<RunManifest> {
    let mut m = match &o.manifest {
        Some(p) => RunManifest::load(p)?,
        None => RunManifest::default(),
    };
    if let Some(v) = &o.corpus {
        m.corpus = v.clone();
    }
    if let Some(v) = &o.output_dir {
        m.output_dir = v.clone();
        if o.manifest.is_none() {
            m.tools.cache_dir = v.join("build-cache");
        }
    }
    if !o.templates.is_empty() {
        m.templates = o.templates.clone();
    }
    if let Some(v) = o.seed {
        m.seed = v;
    }
    if !o.domains.is_empty() {
        m.domains = o
            .domains
            .iter()
            .map(|d| match d.to_ascii_lowercase().as_str() {
                "cybersecurity" | "cyber" => Ok(Domain::Cybersecurity),
                "ics" => Ok(Domain::Ics),
                "capa" => Ok(Domain::Capa),
                other => bail!("unknown domain {other:?}"),
            })
            .collect::<Result<_>>()?;
    }
    if !o.rates.is_empty() {
        m.derivations.rates = o.rates.clone();
    }
    if let Some(v) = o.seeds_per_rate {
        m.derivations.seeds_per_rate = v;
    }
    if o.no_original {
        m.derivations.original = false;
    }
    if !o.build_configs.is_empty() {
        m.derivations.build_configs = o.build_configs.clone();
    }
    if !o.questions.is_empty() {
        let mut set = QuestionSet { true_false: false, short_answer: false, purpose: false };
        for q in &o.questions {
            match q.to_ascii_lowercase().as_str() {
                "tf" => set.true_false = true,
                "short" => set.short_answer = true,
                "purpose" => set.purpose = true,
                other => bail!("unknown question kind {other:?}"),
            }
        }
        m.questions = set;
    }
    if let Some(v) = o.temperature {
        m.params.temperature = v;
    }
    if let Some(v) = o.top_p {
        m.params.top_p = v;
    }
    if let Some(v) = o.n_reps {
        m.params.n_reps = v;
    }
    let backend = match (&o.replay, &o.endpoint) {
        (Some(_), Some(_)) => bail!("--replay and --endpoint are mutually exclusive"),
        (Some(t), None) => Some(Backend::Replay { transcript: t.clone() }),
        (None, Some(e)) => Some(Backend::HttpCompletionApi {
            endpoint: e.clone(),
            api_key_env: requiz_core::provider::DEFAULT_API_KEY_ENV.into(),
        }),
        (None, None) => None,
    };
    if let Some(b) = backend {
        match &mut m.provider {
            Some(p) => p.backend = b,
            None => m.provider = Some(ProviderConfig::new(b)),
        }
    }
    if let (Some(v), Some(p)) = (o.max_inflight, &mut m.provider) {
        p.max_inflight = v;
    }
    if let Some(v) = &o.compiler {
        m.tools.compiler_path = v.clone();
    }
    if let Some(v) = &o.decompiler {
        m.tools.decompiler_headless_path = Some(v.clone());
    }
    if let Some(v) = &o.decompile_script {
        m.tools.decompile_script = Some(v.clone());
    }
    if let Some(v) = &o.capa {
        m.tools.capa_path = Some(v.clone());
    }
    m.validate()?;
    Ok(m)
}

fn print_issues(issues: &[requiz_core::corpus::Issue]) {
    for i in issues {
        eprintln!("issue: {i}");
    }
}

/// Returns whether the command finished without errors.
fn execute(cli: &Cli) -> Result<bool> {
    let m = load_manifest(&cli.overrides)?;
    match &cli.command {
        Command::Validate => {
            let issues = pipeline::validate(&m)?;
            print_issues(&issues);
            if issues.is_empty() {
                println!("corpus ok: {}", m.corpus.display());
            }
            Ok(issues.is_empty())
        }
        Command::Instantiate => match pipeline::instantiate(&m) {
            Ok(s) => {
                print_issues(&s.warnings);
                println!("wrote {} instance(s) to {}", s.written.len(), m.instances_dir().display());
                Ok(true)
            }
            Err(PipelineError::InvalidCorpus(issues)) => {
                print_issues(&issues);
                Ok(false)
            }
            Err(e) => Err(e.into()),
        },
        Command::Derive => {
            let s = pipeline::derive(&m)?;
            for (id, e) in &s.failures {
                eprintln!("failed: {id}: {e}");
            }
            println!("derived {} instance(s), {} failure(s)", s.derived.len(), s.failures.len());
            Ok(s.failures.is_empty())
        }
        Command::Run => {
            let out = pipeline::run(&m)?;
            pipeline::report(&m.output_dir)?;
            summarize(&out);
            Ok(out.provider_errors() == 0)
        }
        Command::Sweep { dry_run: true } => {
            let templates = load_corpus_dir(&m.corpus)?;
            let templates = if m.templates.is_empty() {
                templates
            } else {
                templates.into_iter().filter(|t| m.templates.contains(&t.id)).collect()
            };
            let plan = pipeline::plan_sweep(&m, &templates)?;
            println!("grid points: {}", plan.grid.len());
            for (id, n) in &plan.instances {
                println!("  {id}: {n} question(s)");
            }
            println!("repetitions: {}", plan.n_reps);
            println!("scheduled completions: {}", plan.total_completions);
            Ok(true)
        }
        Command::Sweep { dry_run: false } => {
            let (out, report) = pipeline::sweep(&m)?;
            summarize(&out);
            if let Some(p) = report.totals.percent {
                println!("sweep accuracy: {p:.2}%");
            }
            Ok(out.provider_errors() == 0)
        }
        Command::Report { dir } => {
            let dir = dir.clone().unwrap_or_else(|| m.output_dir.clone());
            let r = pipeline::report(&dir)?;
            let pct = r.totals.percent.map_or_else(|| "-".to_string(), |p| format!("{p:.2}%"));
            println!("{} of {} correct ({pct}); {} provider error(s)", r.totals.correct, r.totals.asked, r.totals.provider_errors);
            println!("tables written to {}", dir.display());
            Ok(true)
        }
        Command::Embed { template, source, decompiled, pairing } => embed(&m, template, source, decompiled, pairing),
    }
}

fn embed(
    m: &RunManifest,
    template: &Option<String>,
    source: &Option<PathBuf>,
    decompiled: &Option<PathBuf>,
    pairing: &Option<PathBuf>,
) -> Result<bool> {
    let (name, text) = match (template, source) {
        (Some(id), None) => {
            let t = load_corpus_dir(&m.corpus)?
                .into_iter()
                .find(|t| &t.id == id)
                .with_context(|| format!("unknown template {id}"))?;
            (t.id, t.source_text)
        }
        (None, Some(p)) => {
            let name = p.file_stem().map_or_else(|| "source".into(), |s| s.to_string_lossy().into_owned());
            (name, fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
        }
        _ => bail!("embed needs --template or --source"),
    };
    let backend = m.embed.backend();
    let pairing = pairing.as_deref().map(read_pairing).transpose()?;
    let mut outcomes = Vec::new();
    if let Some(path) = decompiled {
        let dec = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let label = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let src = DecompiledSource::Text { label: &label, text: &dec, pairing };
        outcomes.push(pipeline::embed(m, &name, &text, src, backend.as_ref())?);
    } else {
        let configs = m.build_configs()?;
        let configs = if configs.is_empty() { BuildConfig::all().to_vec() } else { configs };
        for cfg in &configs {
            outcomes.push(pipeline::embed(m, &name, &text, DecompiledSource::Decompiler(cfg), backend.as_ref())?);
        }
    }
    for o in &outcomes {
        match o.score {
            Some(s) => println!(
                "{:8} top-1 {:.3}  mean rank {:.3}  pairs {}  -> {}",
                o.label,
                s.top1_accuracy,
                s.mean_rank,
                s.pairs,
                o.dir.display()
            ),
            None => println!("{:8} no pairs -> {}", o.label, o.dir.display()),
        }
    }
    Ok(true)
}

fn read_pairing(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing pairing file {}", path.display()))
}

fn summarize(out: &pipeline::RunOutcome) {
    let correct = out.verdicts.iter().filter(|v| v.is_correct()).count();
    println!("{} verdict(s), {} correct, {} error(s)", out.verdicts.len(), correct, out.errors.len());
    for e in out.errors.iter().take(10) {
        eprintln!("{} {} {:?}: {}", e.stage, e.question_id, e.rep_index, e.error);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
