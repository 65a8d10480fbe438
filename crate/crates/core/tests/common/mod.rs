#![allow(dead_code)]

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use requiz_core::corpus::{load_corpus_dir, load_template, ProgramTemplate};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn template(id: &str) -> ProgramTemplate {
    load_template(&corpus_dir().join(format!("{id}.json"))).expect("template loads")
}

pub fn all_templates() -> Vec<ProgramTemplate> {
    load_corpus_dir(&corpus_dir()).expect("corpus loads")
}

pub fn write_script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

/// Stand-in for the headless decompiler. Emits one marker section per text
/// symbol; stripped inputs get `FUN_` names resolved through the twin binary.
pub const FAKE_HEADLESS: &str = r#"#!/bin/bash
bin=""; out=""
while [ $# -gt 0 ]; do
  case "$1" in
    -import) bin="$2"; shift 2;;
    -postScript) out="$3"; shift 3;;
    *) shift;;
  esac
done
list() { nm --defined-only "$1" 2>/dev/null | awk '$2=="T"||$2=="t"{print $1, $3}'; }
syms=$(list "$bin"); stripped=0
if [ -z "$syms" ]; then stripped=1; syms=$(list "$bin.syms"); fi
: > "$out"
echo "$syms" | while read addr name; do
  a=$((16#$addr + 0x100000))
  if [ $stripped = 1 ]; then n=$(printf 'FUN_%08x' $a); else n=$name; fi
  printf '/* @function %s 0x%08x */\nundefined8 %s(undefined8 param_1)\n\n{\n  return 0;   \n}\n\n' "$n" $a "$n" >> "$out"
done
"#;

pub const FAKE_CAPA: &str = r#"#!/bin/bash
cat <<'JSON'
{"meta": {}, "rules": {"start TCP server": {}, "delete file": {}, "some unrelated rule": {}}}
JSON
"#;
