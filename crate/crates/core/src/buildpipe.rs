//! Compile, decompile and capability-scan orchestration over external tools.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{ErrorKind, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread;
use std::time::Duration;

use object::{Object, ObjectSymbol, SymbolKind};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::corpus::{builtin_capabilities, AnswerSpec, Domain, FactKind, ProgramTemplate};
use crate::ctransform::{tokenize_c, Derivation, ProgramInstance, ResolvedFact, TokenKind};
use crate::embedsim::{split_functions, Origin};

/// Ghidra loads x86-64 PIE images at this base, so `FUN_0010143a` is the
/// function at file address 0x143a.
pub const DECOMPILER_IMAGE_BASE: u64 = 0x10_0000;

/// Marker line the bundled export script writes before each function.
pub const FUNCTION_MARKER: &str = "/* @function ";

/// Functions the C runtime adds to every executable.
const RUNTIME_FUNCTIONS: &[&str] = &[
    "_start", "_init", "_fini", "entry", "deregister_tm_clones", "register_tm_clones",
    "__do_global_dtors_aux", "frame_dummy", "__libc_csu_init", "__libc_csu_fini", "_INIT_0", "_FINI_0",
    "__cxa_finalize", "__stack_chk_fail", "__gmon_start__", "_dl_relocate_static_pie",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptLevel {
    O1,
}

impl OptLevel {
    pub fn flag(self) -> &'static str {
        match self {
            OptLevel::O1 => "-O1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BuildConfig {
    pub opt_level: OptLevel,
    pub debug_symbols: bool,
    pub stripped: bool,
    /// Display label, e.g. `-o1 -s`.
    pub label: String,
}

impl BuildConfig {
    pub fn new(debug_symbols: bool, stripped: bool) -> Result<BuildConfig, BuildError> {
        if debug_symbols && stripped {
            return Err(BuildError::InvalidConfig("a stripped build cannot keep debug symbols".into()));
        }
        let label = match (debug_symbols, stripped) {
            (true, _) => "-o1 -g",
            (false, true) => "-o1 -s",
            (false, false) => "-o1",
        };
        Ok(BuildConfig { opt_level: OptLevel::O1, debug_symbols, stripped, label: label.into() })
    }

    pub fn debug() -> BuildConfig {
        BuildConfig::new(true, false).expect("valid")
    }

    pub fn plain() -> BuildConfig {
        BuildConfig::new(false, false).expect("valid")
    }

    pub fn stripped() -> BuildConfig {
        BuildConfig::new(false, true).expect("valid")
    }

    /// The three decompiled configurations: `-o1 -g`, `-o1`, `-o1 -s`.
    pub fn all() -> [BuildConfig; 3] {
        [BuildConfig::debug(), BuildConfig::plain(), BuildConfig::stripped()]
    }

    pub fn from_label(label: &str) -> Result<BuildConfig, BuildError> {
        let words: BTreeSet<String> = label.split_whitespace().map(str::to_ascii_lowercase).collect();
        if !words.contains("-o1") || words.iter().any(|w| !matches!(w.as_str(), "-o1" | "-g" | "-s")) {
            return Err(BuildError::InvalidConfig(format!("unsupported build label {label:?}")));
        }
        BuildConfig::new(words.contains("-g"), words.contains("-s"))
    }

    pub fn compiler_flags(&self) -> Vec<&'static str> {
        let mut flags = vec![self.opt_level.flag()];
        if self.debug_symbols {
            flags.push("-g");
        }
        if self.stripped {
            flags.push("-s");
        }
        flags
    }

    /// Short form for instance ids: `o1g`, `o1`, `o1s`.
    pub fn slug(&self) -> String {
        self.label.replace(['-', ' '], "")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toolchain {
    #[serde(default = "default_compiler")]
    pub compiler_path: PathBuf,
    #[serde(default)]
    pub decompiler_headless_path: Option<PathBuf>,
    #[serde(default)]
    pub decompile_script: Option<PathBuf>,
    #[serde(default)]
    pub capa_path: Option<PathBuf>,
    #[serde(default = "default_tool_timeout")]
    pub timeout_seconds: u64,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_processes")]
    pub max_processes: usize,
}

fn default_compiler() -> PathBuf {
    PathBuf::from("gcc")
}

fn default_tool_timeout() -> u64 {
    600
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}

fn default_processes() -> usize {
    thread::available_parallelism().map_or(2, |n| n.get())
}

impl Default for Toolchain {
    fn default() -> Self {
        Toolchain {
            compiler_path: default_compiler(),
            decompiler_headless_path: None,
            decompile_script: None,
            capa_path: None,
            timeout_seconds: default_tool_timeout(),
            cache_dir: default_cache_dir(),
            max_processes: default_processes(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{tool} not found ({path})")]
    ToolMissing { tool: String, path: String },
    #[error("compilation failed:\n{stderr}")]
    CompileFailed { stderr: String },
    #[error("decompilation failed: {0}")]
    DecompileFailed(String),
    #[error("{tool} timed out after {seconds}s")]
    Timeout { tool: String, seconds: u64 },
    #[error("capability scan failed: {0}")]
    ScanFailed(String),
    #[error("invalid build configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BuildError + '_ {
    move |source| BuildError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompiledArtifact {
    pub binary: PathBuf,
    pub source_text: String,
    /// Original function name to decompiled name.
    pub function_name_map: BTreeMap<String, String>,
    /// Decompiled functions whose original name could not be recovered.
    pub unknown_functions: Vec<String>,
    #[serde(default)]
    pub cache_hit: bool,
}

struct ToolOutput {
    success: bool,
    stdout: String,
    stderr: String,
}

fn run_tool(tool: &str, cmd: &mut Command, timeout: Duration) -> Result<ToolOutput, BuildError> {
    let program = cmd.get_program().to_string_lossy().into_owned();
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| match e.kind() {
            ErrorKind::NotFound | ErrorKind::PermissionDenied => BuildError::ToolMissing { tool: tool.into(), path: program.clone() },
            _ => BuildError::Io { path: PathBuf::from(&program), source: e },
        })?;
    let mut out_pipe = child.stdout.take().expect("piped stdout");
    let mut err_pipe = child.stderr.take().expect("piped stderr");
    let out_reader = thread::spawn(move || {
        let mut s = Vec::new();
        let _ = out_pipe.read_to_end(&mut s);
        s
    });
    let err_reader = thread::spawn(move || {
        let mut s = Vec::new();
        let _ = err_pipe.read_to_end(&mut s);
        s
    });
    let status = child.wait_timeout(timeout).map_err(io_err(Path::new(&program)))?;
    let status = match status {
        Some(s) => s,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(BuildError::Timeout { tool: tool.into(), seconds: timeout.as_secs() });
        }
    };
    let stdout = String::from_utf8_lossy(&out_reader.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    Ok(ToolOutput { success: status.success(), stdout, stderr })
}

fn tool_version(path: &Path) -> String {
    static VERSIONS: OnceLock<Mutex<HashMap<PathBuf, String>>> = OnceLock::new();
    let cache = VERSIONS.get_or_init(Default::default);
    if let Some(v) = cache.lock().expect("version lock").get(path) {
        return v.clone();
    }
    let v = run_tool("compiler", Command::new(path).arg("--version"), Duration::from_secs(30))
        .ok()
        .and_then(|o| o.stdout.lines().next().map(str::to_string))
        .unwrap_or_else(|| "unknown".into());
    cache.lock().expect("version lock").insert(path.to_path_buf(), v.clone());
    v
}

fn file_sha(path: &Path) -> String {
    fs::read(path).map(|b| hex::encode(Sha256::digest(&b))).unwrap_or_else(|_| "absent".into())
}

fn tool_versions(toolchain: &Toolchain) -> serde_json::Value {
    json!({
        "compiler": tool_version(&toolchain.compiler_path),
        "decompiler": toolchain.decompiler_headless_path.as_ref().map(|p| p.display().to_string()),
        "decompile_script_sha256": toolchain.decompile_script.as_deref().map(file_sha),
    })
}

/// Content hash of the source, build configuration and tool identities.
pub fn build_cache_key(source_text: &str, cfg: &BuildConfig, toolchain: &Toolchain) -> String {
    let material = json!({
        "source": source_text,
        "flags": cfg.compiler_flags(),
        "tools": tool_versions(toolchain),
    });
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

/// Serializes writers that share a cache key.
fn key_lock(key: &str) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> = OnceLock::new();
    LOCKS.get_or_init(Default::default).lock().expect("lock table").entry(key.to_string()).or_default().clone()
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), BuildError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn run_compiler(toolchain: &Toolchain, flags: &[&str], source: &Path, output: &Path) -> Result<(), BuildError> {
    let tmp = output.with_extension("partial");
    let out = run_tool(
        "compiler",
        Command::new(&toolchain.compiler_path).args(flags).arg("-o").arg(&tmp).arg(source),
        Duration::from_secs(toolchain.timeout_seconds),
    )?;
    if !out.success {
        let _ = fs::remove_file(&tmp);
        return Err(BuildError::CompileFailed { stderr: out.stderr });
    }
    fs::rename(&tmp, output).map_err(io_err(output))
}

/// Compiles the instance into the artifact cache and returns the binary path.
/// Stripped builds also get an unstripped twin (`binary.syms`) so function
/// addresses can be mapped back to names.
pub fn compile(instance: &ProgramInstance, cfg: &BuildConfig, toolchain: &Toolchain) -> Result<PathBuf, BuildError> {
    compile_source(&instance.source_text, cfg, toolchain)
}

pub fn compile_source(source_text: &str, cfg: &BuildConfig, toolchain: &Toolchain) -> Result<PathBuf, BuildError> {
    let key = build_cache_key(source_text, cfg, toolchain);
    let lock = key_lock(&key);
    let _guard = lock.lock().expect("key lock");
    compile_locked(source_text, cfg, toolchain, &key)
}

fn compile_locked(source_text: &str, cfg: &BuildConfig, toolchain: &Toolchain, key: &str) -> Result<PathBuf, BuildError> {
    let dir = toolchain.cache_dir.join(key);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let binary = dir.join("binary");
    let twin = dir.join("binary.syms");
    if binary.exists() && (!cfg.stripped || twin.exists()) {
        return Ok(binary);
    }
    let source = dir.join("source.c");
    write_atomic(&source, source_text.as_bytes())?;
    run_compiler(toolchain, &cfg.compiler_flags(), &source, &binary)?;
    if cfg.stripped {
        run_compiler(toolchain, &[cfg.opt_level.flag()], &source, &twin)?;
    }
    Ok(binary)
}

/// Function symbols (name, address) of an ELF file. Empty for stripped files.
pub fn function_symbols(binary: &Path) -> Result<BTreeMap<u64, String>, BuildError> {
    let data = fs::read(binary).map_err(io_err(binary))?;
    let file = object::File::parse(&*data).map_err(|e| BuildError::DecompileFailed(format!("{}: {e}", binary.display())))?;
    let mut out = BTreeMap::new();
    for sym in file.symbols() {
        if sym.kind() == SymbolKind::Text && sym.address() != 0 {
            if let Ok(name) = sym.name() {
                if !name.is_empty() {
                    out.insert(sym.address(), name.to_string());
                }
            }
        }
    }
    Ok(out)
}

/// One function section of the export script's output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompiledFunction {
    pub name: String,
    pub address: Option<u64>,
    pub text: String,
}

/// Splits decompiler output on `/* @function NAME 0xADDR */` markers.
pub fn parse_decompiler_output(text: &str) -> Vec<DecompiledFunction> {
    let mut out: Vec<DecompiledFunction> = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.trim_start().strip_prefix(FUNCTION_MARKER) {
            let rest = rest.trim_end().trim_end_matches("*/").trim();
            let mut parts = rest.split_whitespace();
            let name = parts.next().unwrap_or_default().to_string();
            let address = parts.next().and_then(|a| u64::from_str_radix(a.trim_start_matches("0x"), 16).ok());
            out.push(DecompiledFunction { name, address, text: String::new() });
        } else if let Some(cur) = out.last_mut() {
            cur.text.push_str(line);
            cur.text.push('\n');
        }
    }
    out
}

/// Trims trailing whitespace on each line and collapses runs of blank lines.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut blank_run = 0;
    for line in text.lines() {
        let line = line.trim_end();
        if line.is_empty() {
            blank_run += 1;
            continue;
        }
        if blank_run > 0 && !out.is_empty() {
            out.push('\n');
        }
        blank_run = 0;
        out.push_str(line);
        out.push('\n');
    }
    out
}

fn fun_address(name: &str) -> Option<u64> {
    name.strip_prefix("FUN_").and_then(|h| u64::from_str_radix(h, 16).ok())
}

/// Recovers the original name of a decompiled function from the symbol table.
fn original_name(f: &DecompiledFunction, symbols: &BTreeMap<u64, String>) -> Option<String> {
    let addr = f.address.or_else(|| fun_address(&f.name));
    if let Some(a) = addr {
        for candidate in [a, a.wrapping_sub(DECOMPILER_IMAGE_BASE)] {
            if let Some(n) = symbols.get(&candidate) {
                return Some(n.clone());
            }
        }
    }
    (fun_address(&f.name).is_none()).then(|| f.name.clone())
}

/// Assembles an artifact from raw decompiler output and the binary's symbols.
pub fn assemble_artifact(binary: &Path, raw_output: &str, symbols: &BTreeMap<u64, String>) -> DecompiledArtifact {
    let mut sections = parse_decompiler_output(raw_output);
    if sections.is_empty() {
        // Output without markers: treat it as one block and recover names by splitting.
        let text = normalize_whitespace(raw_output);
        let names = split_functions(&text, Origin::Decompiled).unwrap_or_default();
        sections = names
            .into_iter()
            .map(|f| DecompiledFunction { name: f.fn_id, address: None, text: f.text + "\n" })
            .collect();
    }
    let mut map = BTreeMap::new();
    let mut unknown = Vec::new();
    let mut blocks = Vec::new();
    for f in &sections {
        match original_name(f, symbols) {
            Some(orig) if RUNTIME_FUNCTIONS.contains(&orig.as_str()) => continue,
            Some(orig) => {
                map.insert(orig, f.name.clone());
            }
            None => unknown.push(f.name.clone()),
        }
        blocks.push(normalize_whitespace(&f.text));
    }
    DecompiledArtifact {
        binary: binary.to_path_buf(),
        source_text: blocks.join("\n"),
        function_name_map: map,
        unknown_functions: unknown,
        cache_hit: false,
    }
}

/// Runs the headless decompiler with the export script on `binary`.
pub fn decompile(binary: &Path, toolchain: &Toolchain) -> Result<DecompiledArtifact, BuildError> {
    let headless = toolchain
        .decompiler_headless_path
        .as_ref()
        .ok_or_else(|| BuildError::ToolMissing { tool: "decompiler".into(), path: "not configured".into() })?;
    if !headless.exists() {
        return Err(BuildError::ToolMissing { tool: "decompiler".into(), path: headless.display().to_string() });
    }
    let script = toolchain
        .decompile_script
        .as_ref()
        .ok_or_else(|| BuildError::ToolMissing { tool: "decompile script".into(), path: "not configured".into() })?;
    if !script.exists() {
        return Err(BuildError::ToolMissing { tool: "decompile script".into(), path: script.display().to_string() });
    }
    let dir = binary.parent().unwrap_or_else(|| Path::new("."));
    let project_dir = dir.join("project");
    fs::create_dir_all(&project_dir).map_err(io_err(&project_dir))?;
    let out_file = dir.join("decompiled.raw.c");
    let _ = fs::remove_file(&out_file);
    let script_dir = script.parent().unwrap_or_else(|| Path::new("."));
    let script_name = script.file_name().unwrap_or_default();
    let result = run_tool(
        "decompiler",
        Command::new(headless)
            .arg(&project_dir)
            .arg("requiz")
            .arg("-import")
            .arg(binary)
            .arg("-scriptPath")
            .arg(script_dir)
            .arg("-postScript")
            .arg(script_name)
            .arg(&out_file)
            .arg("-deleteProject"),
        Duration::from_secs(toolchain.timeout_seconds),
    );
    let _ = fs::remove_dir_all(&project_dir);
    let out = result?;
    if !out.success {
        return Err(BuildError::DecompileFailed(tail(&out.stderr, 20)));
    }
    let raw = fs::read_to_string(&out_file)
        .map_err(|e| BuildError::DecompileFailed(format!("no output at {}: {e}; {}", out_file.display(), tail(&out.stderr, 5))))?;
    let mut symbols = function_symbols(binary)?;
    let twin = binary.with_extension("syms");
    if symbols.is_empty() && twin.exists() {
        symbols = function_symbols(&twin)?;
    }
    let artifact = assemble_artifact(binary, &raw, &symbols);
    if let Err(e) = tokenize_c(&artifact.source_text) {
        return Err(BuildError::DecompileFailed(format!("decompiled text does not lex: {e}")));
    }
    Ok(artifact)
}

fn tail(s: &str, n: usize) -> String {
    let lines: Vec<&str> = s.lines().collect();
    lines[lines.len().saturating_sub(n)..].join("\n")
}

/// Compiles and decompiles an instance, reusing cached artifacts.
pub fn build_and_decompile(
    instance: &ProgramInstance,
    cfg: &BuildConfig,
    toolchain: &Toolchain,
) -> Result<DecompiledArtifact, BuildError> {
    build_and_decompile_source(&instance.source_text, cfg, toolchain)
}

pub fn build_and_decompile_source(
    source_text: &str,
    cfg: &BuildConfig,
    toolchain: &Toolchain,
) -> Result<DecompiledArtifact, BuildError> {
    let key = build_cache_key(source_text, cfg, toolchain);
    let lock = key_lock(&key);
    let _guard = lock.lock().expect("key lock");
    let dir = toolchain.cache_dir.join(&key);
    let meta_path = dir.join("meta.json");
    let text_path = dir.join("decompiled.c");
    if let (Ok(meta), Ok(text)) = (fs::read_to_string(&meta_path), fs::read_to_string(&text_path)) {
        if let Ok(meta) = serde_json::from_str::<serde_json::Value>(&meta) {
            if let Ok(mut artifact) = serde_json::from_value::<DecompiledArtifact>(meta["artifact"].clone()) {
                artifact.source_text = text;
                artifact.cache_hit = true;
                return Ok(artifact);
            }
        }
    }
    let binary = compile_locked(source_text, cfg, toolchain, &key)?;
    let artifact = decompile(&binary, toolchain)?;
    write_atomic(&text_path, artifact.source_text.as_bytes())?;
    let meta = json!({
        "source_sha256": hex::encode(Sha256::digest(source_text.as_bytes())),
        "config": cfg,
        "flags": cfg.compiler_flags(),
        "tool_versions": tool_versions(toolchain),
        "artifact": DecompiledArtifact { source_text: String::new(), ..artifact.clone() },
    });
    write_atomic(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes").as_bytes())?;
    Ok(artifact)
}

/// Builds the decompiled instance: new source text, function facts routed
/// through the name map, variable facts marked unresolvable.
pub fn derive_decompiled_instance(
    template: &ProgramTemplate,
    instance: &ProgramInstance,
    artifact: &DecompiledArtifact,
    cfg: &BuildConfig,
) -> ProgramInstance {
    let idents: BTreeSet<String> = tokenize_c(&artifact.source_text)
        .map(|ts| ts.into_iter().filter(|t| t.kind == TokenKind::Identifier).map(|t| t.lexeme).collect())
        .unwrap_or_default();
    let resolved_facts = instance
        .resolved_facts
        .iter()
        .map(|rf| {
            if rf.unresolvable.is_some() {
                return rf.clone();
            }
            let mut fact = rf.fact.clone();
            let mut unresolvable = None;
            match fact.kind {
                FactKind::VariableName => {
                    unresolvable = Some("the decompiler assigns its own variable names".to_string());
                }
                FactKind::FunctionName => {
                    for spec in &mut fact.expected {
                        if let AnswerSpec::Identifier { token } = spec {
                            match artifact.function_name_map.get(token.as_str()) {
                                Some(new) => *token = new.clone(),
                                None => unresolvable = Some(format!("function {token} not found in the decompiled output")),
                            }
                        }
                    }
                }
                FactKind::ConstantValue | FactKind::PurposeKeyword => {}
            }
            if unresolvable.is_none() {
                for spec in &fact.expected {
                    if let AnswerSpec::Identifier { token } = spec {
                        if !idents.contains(token) {
                            unresolvable = Some(format!("identifier {token} does not occur in the decompiled output"));
                        }
                    }
                }
            }
            ResolvedFact { fact, unresolvable }
        })
        .collect();
    ProgramInstance {
        instance_id: format!("{}-{}", instance.instance_id, cfg.slug()),
        template_id: template.id.clone(),
        category: instance.category,
        derivation: Derivation::Decompiled {
            opt_flags: cfg.label.clone(),
            debug: cfg.debug_symbols,
            stripped: cfg.stripped,
            from: Box::new(instance.derivation.clone()),
        },
        source_text: artifact.source_text.clone(),
        rename_map: BTreeMap::new(),
        value_map: Vec::new(),
        resolved_facts,
        capability_truth: instance.capability_truth.clone(),
        purpose_keyword: instance.purpose_keyword.clone(),
        function_map: artifact.function_name_map.iter().map(|(o, d)| (d.clone(), o.clone())).collect(),
        site_count: instance.site_count,
    }
}

/// Maps capa rule names (case-insensitive) onto the capa-domain catalog.
pub fn capa_rules_to_capabilities<'a>(rule_names: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, bool> {
    let matched: BTreeSet<String> = rule_names.into_iter().map(str::to_lowercase).collect();
    builtin_capabilities(&[Domain::Capa].into_iter().collect())
        .into_iter()
        .map(|c| {
            let hit = matched.contains(&c.phrase.to_lowercase());
            (c.short_id, hit)
        })
        .collect()
}

/// Runs `capa -j` on a binary and maps matched rules onto the catalog.
pub fn run_capa(binary: &Path, toolchain: &Toolchain) -> Result<BTreeMap<String, bool>, BuildError> {
    let capa = toolchain
        .capa_path
        .as_ref()
        .ok_or_else(|| BuildError::ToolMissing { tool: "capa".into(), path: "not configured".into() })?;
    let out = run_tool("capa", Command::new(capa).arg("-j").arg(binary), Duration::from_secs(toolchain.timeout_seconds))?;
    if !out.success {
        return Err(BuildError::ScanFailed(tail(&out.stderr, 10)));
    }
    let v: serde_json::Value =
        serde_json::from_str(&out.stdout).map_err(|e| BuildError::ScanFailed(format!("unreadable capa output: {e}")))?;
    let rules = v["rules"].as_object().ok_or_else(|| BuildError::ScanFailed("capa output has no rules object".into()))?;
    Ok(capa_rules_to_capabilities(rules.keys().map(String::as_str)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configs_and_flags() {
        assert_eq!(BuildConfig::debug().compiler_flags(), vec!["-O1", "-g"]);
        assert_eq!(BuildConfig::plain().compiler_flags(), vec!["-O1"]);
        assert_eq!(BuildConfig::stripped().compiler_flags(), vec!["-O1", "-s"]);
        assert!(BuildConfig::new(true, true).is_err());
        let labels: Vec<String> = BuildConfig::all().iter().map(|c| c.label.clone()).collect();
        assert_eq!(labels, vec!["-o1 -g", "-o1", "-o1 -s"]);
        assert_eq!(BuildConfig::from_label("-o1 -s").unwrap(), BuildConfig::stripped());
        assert!(BuildConfig::from_label("-O3").is_err());
        assert_eq!(BuildConfig::stripped().slug(), "o1s");
    }

    #[test]
    fn marker_parsing_and_mapping() {
        let raw = "/* @function FUN_001011c0 0x001011c0 */\nvoid FUN_001011c0(void) {}\n\
                   /* @function FUN_001012a9 001012a9 */\nvoid FUN_001012a9(char *param_1)  \n{\n\n\n  return;\n}\n\
                   /* @function FUN_00109999 00109999 */\nint FUN_00109999(void) { return 1; }\n";
        let secs = parse_decompiler_output(raw);
        assert_eq!(secs.len(), 3);
        assert_eq!(secs[1].address, Some(0x1012a9));
        let symbols: BTreeMap<u64, String> = [(0x11c0, "_start".to_string()), (0x12a9, "del_in_dir".to_string())].into();
        let a = assemble_artifact(Path::new("b"), raw, &symbols);
        assert_eq!(a.function_name_map, [("del_in_dir".to_string(), "FUN_001012a9".to_string())].into());
        assert_eq!(a.unknown_functions, vec!["FUN_00109999"]);
        assert!(!a.source_text.contains("FUN_001011c0"));
        assert!(a.source_text.contains("void FUN_001012a9(char *param_1)\n{\n\n  return;\n}\n"));
    }

    #[test]
    fn named_functions_map_to_themselves() {
        let raw = "/* @function main 0x001013d5 */\nint main(void) { return 0; }\n";
        let a = assemble_artifact(Path::new("b"), raw, &BTreeMap::new());
        assert_eq!(a.function_name_map, [("main".to_string(), "main".to_string())].into());
    }

    #[test]
    fn whitespace_normalization() {
        assert_eq!(normalize_whitespace("a  \n\n\n\nb\t\n\n"), "a\n\nb\n");
        assert_eq!(normalize_whitespace("\n\nx\n"), "x\n");
    }

    #[test]
    fn capa_mapping() {
        let m = capa_rules_to_capabilities(["Start TCP Server", "contain obfuscated stackstrings"]);
        assert_eq!(m.len(), 9);
        assert!(m["TCPServer"]);
        assert!(!m["DNS"]);
        assert!(capa_rules_to_capabilities([]).values().all(|v| !v));
    }

    #[test]
    fn missing_tools() {
        let tc = Toolchain::default();
        assert!(matches!(decompile(Path::new("/nonexistent"), &tc), Err(BuildError::ToolMissing { .. })));
        assert!(matches!(run_capa(Path::new("/nonexistent"), &tc), Err(BuildError::ToolMissing { .. })));
        let tc = Toolchain { capa_path: Some("/definitely/not/capa".into()), ..Toolchain::default() };
        assert!(matches!(run_capa(Path::new("/nonexistent"), &tc), Err(BuildError::ToolMissing { .. })));
    }
}
