mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use shadercorpus::image::read_raw;

const BIN: &str = env!("CARGO_BIN_EXE_shadercorpus");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(["--workers", "1"]).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Ingest, validate and dedup a small corpus; returns the manifest path.
fn corpus(dir: &Path) -> std::path::PathBuf {
    let mut snippets: Vec<_> = (0..6).map(|i| (format!("d{i}"), common::dynamic_snippet(i))).collect();
    snippets.push(("v0".into(), common::variant_snippet(0)));
    snippets.push(("s0".into(), common::static_snippet(0)));
    snippets.push(("bad".into(), "o=vec4(undefined_thing);".into()));
    common::write_snippets(&dir.join("src"), &snippets);
    let manifest = dir.join("corpus/manifest.jsonl");
    ok(&["ingest", "--manifest", s(&manifest), s(&dir.join("src"))]);
    ok(&["validate", "--manifest", s(&manifest)]);
    let out = ok(&["dedup", "--manifest", s(&manifest), "--resolution", "16"]);
    assert!(out.contains("6 kept"), "{out}");
    manifest
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    assert_eq!(run(&["mix", "--count"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    let out = run(&["stats", "--manifest", "/nonexistent/manifest.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: corpus: ") && err.trim_end().lines().count() == 1, "{err}");
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn pipeline_echoes_config_and_leaves_manifest_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = corpus(tmp.path());
    let dir = manifest.parent().unwrap();
    for name in ["ingest", "validate", "dedup"] {
        let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}.config.json"))).unwrap()).unwrap();
        assert_eq!(cfg["subcommand"], name);
        assert_eq!(cfg["workers"], 1);
    }
    let before = fs::read(&manifest).unwrap();

    let frames = tmp.path().join("frames");
    ok(&["render", "--manifest", s(&manifest), "--count", "3", "--resolution", "8", "--format", "both", "--out", s(&frames)]);
    let (res, raw) = read_raw(fs::File::open(frames.join("d0.raw")).unwrap()).unwrap();
    assert_eq!((res, raw.len()), (common::res(8), 3));
    assert_eq!(fs::read_to_string(frames.join("frames.jsonl")).unwrap().lines().count(), 3 * 6);
    assert!(frames.join("d0/0002.jpg").exists());
    assert!(frames.join("render.config.json").exists());

    let mixed = tmp.path().join("mixed");
    ok(&["mix", "--manifest", s(&manifest), "--count", "5", "--n", "2", "--resolution", "16", "--out", s(&mixed)]);
    assert!(mixed.join("images/0000004.jpg").exists());
    assert!(mixed.join("mix.config.json").exists());

    let stats = tmp.path().join("stats.jsonl");
    ok(&["stats", "--manifest", s(&manifest), "--samples", "10", "--resolution", "16", "--self-sim-images", "2", "--out", s(&stats)]);
    let table = tmp.path().join("summary.txt");
    ok(&["summarize", "--manifest", s(&manifest), "--stats", s(&stats), "--out", s(&table)]);
    let text = fs::read_to_string(&table).unwrap();
    assert!(text.contains("twigl"), "{text}");

    assert_eq!(fs::read(&manifest).unwrap(), before);
}

#[test]
fn mix_is_reproducible_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = corpus(tmp.path());
    let prov = |seed: &str, out: &str| {
        let dir = tmp.path().join(out);
        ok(&["--seed", seed, "mix", "--manifest", s(&manifest), "--count", "12", "--mode", "cutmix", "--n", "3", "--resolution", "16", "--out", s(&dir)]);
        (fs::read(dir.join("provenance.manifest")).unwrap(), fs::read(dir.join("images/0000011.jpg")).unwrap())
    };
    let a = prov("7", "a");
    assert_eq!(a, prov("7", "b"));
    assert_ne!(a.0, prov("8", "c").0);
}

#[test]
fn select_writes_top_k() {
    let tmp = tempfile::tempdir().unwrap();
    let scores = tmp.path().join("scores.csv");
    fs::write(&scores, "id,score\na,0.1\nb,0.9\nc,0.5\n").unwrap();
    let out = tmp.path().join("top.txt");
    ok(&["select", "--scores", s(&scores), "--k", "2", "--out", s(&out)]);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().collect::<Vec<_>>(), vec!["b", "c"]);
    assert_eq!(run(&["select", "--scores", s(&scores), "--k", "9", "--out", s(&out)]).status.code(), Some(1));
}
