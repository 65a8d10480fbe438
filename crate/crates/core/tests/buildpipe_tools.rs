mod common;

use requiz_core::buildpipe::{
    build_and_decompile, compile, derive_decompiled_instance, function_symbols, run_capa, BuildConfig, BuildError,
    Toolchain,
};
use requiz_core::corpus::FactKind;
use requiz_core::ctransform::{Derivation, ProgramInstance};

use common::{template, write_script, FAKE_CAPA, FAKE_HEADLESS};

fn toolchain(dir: &std::path::Path) -> Toolchain {
    Toolchain {
        decompiler_headless_path: Some(write_script(dir, "analyzeHeadless", FAKE_HEADLESS)),
        decompile_script: Some(write_script(dir, "Export.java", "// export\n")),
        capa_path: Some(write_script(dir, "capa", FAKE_CAPA)),
        timeout_seconds: 60,
        cache_dir: dir.join("cache"),
        ..Toolchain::default()
    }
}

#[test]
fn debug_build_keeps_names() {
    let dir = tempfile::tempdir().unwrap();
    let tc = toolchain(dir.path());
    let t = template("delete_listen");
    let inst = ProgramInstance::original(&t);
    let cfg = BuildConfig::debug();
    let art = build_and_decompile(&inst, &cfg, &tc).unwrap();
    assert!(!art.cache_hit);
    assert_eq!(art.function_name_map.get("del_in_dir").map(String::as_str), Some("del_in_dir"));
    assert!(!art.source_text.contains("_start"));
    assert!(!art.source_text.contains("@function"));
    let dec = derive_decompiled_instance(&t, &inst, &art, &cfg);
    assert_eq!(dec.instance_id, "delete_listen@orig-o1g");
    assert!(matches!(dec.derivation, Derivation::Decompiled { debug: true, stripped: false, .. }));
    for rf in &dec.resolved_facts {
        match rf.fact.kind {
            FactKind::VariableName => assert!(rf.unresolvable.is_some()),
            FactKind::FunctionName => assert!(rf.unresolvable.is_none(), "{rf:?}"),
            _ => {}
        }
    }
    let again = build_and_decompile(&inst, &cfg, &tc).unwrap();
    assert!(again.cache_hit);
    assert_eq!(again.source_text, art.source_text);
    assert_eq!(again.function_name_map, art.function_name_map);
}

#[test]
fn stripped_build_maps_through_twin() {
    let dir = tempfile::tempdir().unwrap();
    let tc = toolchain(dir.path());
    let t = template("delete_listen");
    let inst = ProgramInstance::original(&t);
    let cfg = BuildConfig::stripped();
    let bin = compile(&inst, &cfg, &tc).unwrap();
    assert!(function_symbols(&bin).unwrap().is_empty());
    assert!(!function_symbols(&bin.with_extension("syms")).unwrap().is_empty());
    let art = build_and_decompile(&inst, &cfg, &tc).unwrap();
    let fun = &art.function_name_map["del_in_dir"];
    assert!(fun.starts_with("FUN_00"), "{fun}");
    assert!(art.unknown_functions.is_empty());
    let dec = derive_decompiled_instance(&t, &inst, &art, &cfg);
    assert_eq!(dec.function_map[fun], "del_in_dir");
    let f = dec.resolved_facts.iter().find(|rf| rf.fact.fact_id == "delete_fn").unwrap();
    assert!(f.unresolvable.is_none());
    assert_eq!(f.fact.expected[0], requiz_core::corpus::AnswerSpec::Identifier { token: fun.clone() });
}

#[test]
fn randomized_instance_compiles_and_maps() {
    let dir = tempfile::tempdir().unwrap();
    let tc = toolchain(dir.path());
    let t = template("delete_listen");
    let inst = requiz_core::ctransform::randomize(&t, 1.0, 7).unwrap();
    let art = build_and_decompile(&inst, &BuildConfig::plain(), &tc).unwrap();
    let new_fn = &inst.rename_map["del_in_dir"];
    assert!(art.function_name_map.contains_key(new_fn));
}

#[test]
fn tool_failures_are_typed() {
    let dir = tempfile::tempdir().unwrap();
    let t = template("delete_listen");
    let inst = ProgramInstance::original(&t);

    let mut bad = t.clone();
    bad.source_text = "int main( {".into();
    let tc = toolchain(dir.path());
    assert!(matches!(compile(&ProgramInstance::original(&bad), &BuildConfig::plain(), &tc), Err(BuildError::CompileFailed { .. })));

    let slow = Toolchain {
        decompiler_headless_path: Some(write_script(dir.path(), "slow", "#!/bin/bash\nsleep 30\n")),
        timeout_seconds: 1,
        cache_dir: dir.path().join("slow-cache"),
        ..tc.clone()
    };
    let started = std::time::Instant::now();
    let err = build_and_decompile(&inst, &BuildConfig::plain(), &slow).unwrap_err();
    assert!(matches!(err, BuildError::Timeout { .. }), "{err}");
    assert!(started.elapsed().as_secs() < 20);

    let failing = Toolchain {
        decompiler_headless_path: Some(write_script(dir.path(), "fail", "#!/bin/bash\necho boom >&2\nexit 3\n")),
        cache_dir: dir.path().join("fail-cache"),
        ..tc.clone()
    };
    let err = build_and_decompile(&inst, &BuildConfig::plain(), &failing).unwrap_err();
    assert!(matches!(&err, BuildError::DecompileFailed(m) if m.contains("boom")), "{err}");

    let missing = Toolchain { compiler_path: "/no/such/cc".into(), cache_dir: dir.path().join("m"), ..tc };
    assert!(matches!(compile(&inst, &BuildConfig::plain(), &missing), Err(BuildError::ToolMissing { .. })));
}

#[test]
fn capa_scan_maps_rules() {
    let dir = tempfile::tempdir().unwrap();
    let tc = toolchain(dir.path());
    let t = template("delete_listen");
    let bin = compile(&ProgramInstance::original(&t), &BuildConfig::plain(), &tc).unwrap();
    let caps = run_capa(&bin, &tc).unwrap();
    assert!(caps["TCPServer"]);
    assert!(caps.values().filter(|v| **v).count() >= 1);
    assert!(!caps["DNS"]);
}
