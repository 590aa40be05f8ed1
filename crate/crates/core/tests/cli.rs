use std::path::Path;
use std::process::Command;

use dualguard::scenarios::cli::cli_main;

/// Runs the command line in-process; returns (status, stdout, stderr).
fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("dualguard").chain(args.iter().copied());
    let code = cli_main(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dualguard"))
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = walk(dir)
        .into_iter()
        .map(|p| p.strip_prefix(dir).unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn keygen_prints_a_usable_key() {
    let (code, out, _) = run(&["keygen", "--label", "principal:zoe", "--key-seed", "1"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["modulus_bits"], 2048);
    assert_eq!(v["role"], "user");
    assert!(v["key_id"].as_str().is_some_and(|s| !s.is_empty()));
    let (_, again, _) = run(&["keygen", "--label", "principal:zoe", "--key-seed", "1"]);
    assert_eq!(out, again);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.json");
    let (code, out, _) = run(&["keygen", "--role", "data", "--key-seed", "1", "--label", "data:x", "--out", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.starts_with("wrote "));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["role"], "data");
}

#[test]
fn run_writes_only_the_selected_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let (code, out, err) = run(&["run", "--scenario", "S6", "--strategies", "5", "--out", out_dir]);
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.starts_with("S6   PASS"), "{out}");
    assert!(out.ends_with("1/1 scenarios passed\n"));
    assert_eq!(
        files(dir.path()),
        [
            "audit/S6.jsonl",
            "report.json",
            "report.txt",
            "stores/S6.cloud.jsonl",
            "stores/S6.vault",
            "transcripts/S6.jsonl",
            "verdicts/S6.json",
        ]
    );
    let (code, text, _) = run(&["report", out_dir]);
    assert_eq!(code, 0);
    assert!(text.contains("S6"));
    // One scenario cannot cover the whole matrix.
    let (code, _, err) = run(&["report", out_dir, "--require-coverage"]);
    assert_eq!(code, 1);
    assert!(err.contains("maps to no passing scenario"), "{err}");
}

#[test]
fn bad_arguments_print_usage_and_fail() {
    let (code, _, err) = run(&["run", "--bogus"]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"), "{err}");
    let (code, _, err) = run(&[]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"));
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    for sub in ["keygen", "run", "verify-audit", "report"] {
        assert!(out.contains(sub), "{sub} missing from help");
    }

    let status = bin().args(["run", "--seed", "x"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("invalid value 'x'"));
}

#[test]
fn unknown_scenario_lists_the_valid_ids() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["run", "--scenario", "S13", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("unknown scenario \"S13\""), "{err}");
    assert!(err.contains("S1, S2, S3, S4, S5, S6, S7, S8, S9, S10, S11, S12"), "{err}");
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn report_rejects_unknown_format_and_empty_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let (code, _, err) = run(&["report", d, "--format", "yaml"]);
    assert_eq!(code, 2);
    assert!(err.contains("unknown report format \"yaml\""), "{err}");
    let (code, _, err) = run(&["report", d]);
    assert_eq!(code, 1);
    assert!(err.contains("no verdict files"), "{err}");
}

#[test]
fn verify_audit_names_the_broken_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(run(&["run", "--scenario", "S1", "--out", d]).0, 0);
    let log = dir.path().join("audit/S1.jsonl");
    let (code, out, _) = run(&["verify-audit", log.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.contains("chain intact"));

    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    assert!(lines.len() >= 3);
    lines[1] = lines[1].replacen("\"tick\":", "\"tick\":1", 1);
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();
    let out = bin().arg("verify-audit").arg(&log).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains("line 2"), "{err}");

    let missing = dir.path().join("nope.jsonl");
    let (code, _, err) = run(&["verify-audit", missing.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("nope.jsonl"));
}
