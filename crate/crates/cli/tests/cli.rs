use std::path::Path;
use std::process::{Command, Output};

fn langlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_langlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = langlab(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn gen_langs_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["gen-langs", "--seed", "7", "--out", a.to_str().unwrap()]);
    ok(&["gen-langs", "--seed", "7", "--out", b.to_str().unwrap()]);
    let (x, y) = (dir_contents(&a), dir_contents(&b));
    assert_eq!(x.len(), 10);
    assert_eq!(x, y);
}

#[test]
fn train_on_missing_file_names_the_path() {
    let out = langlab(&["train", "--langs", "/no/such/lang00.lang", "--agents", "2", "--rounds", "1"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/no/such/lang00.lang"), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = langlab(&["train", "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));
}

#[test]
fn toy_run_trains_evaluates_and_analyzes() {
    let tmp = tempfile::tempdir().unwrap();
    let langs = tmp.path().join("langs");
    let run = tmp.path().join("run");
    let (l, r) = (langs.to_str().unwrap(), run.to_str().unwrap());
    ok(&["gen-langs", "--seed", "1", "--targets", "0.3,0.9", "--out", l]);
    let common = ["--seed", "3", "--agents", "3", "--rounds", "5", "--workers", "2"];
    let mut args = vec!["train", "--langs", l, "--hidden", "12", "--out", r];
    args.extend(common);
    let stdout = ok(&args);
    assert!(stdout.starts_with("30 records"), "{stdout}");

    let stdout = ok(&["eval", "--run", r]);
    assert!(stdout.contains("checked 30 records, 0 mismatches"), "{stdout}");

    let analysis = tmp.path().join("analysis");
    let a = analysis.to_str().unwrap();
    let stdout = ok(&["analyze", "--run", r, "--resamples", "200", "--out", a, "--reference-run", r]);
    assert!(stdout.contains("summary: 10 rows"), "{stdout}");
    let summary = std::fs::read_to_string(analysis.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 11);
    assert!(analysis.join("error_analysis.csv").is_file());
    assert!(analysis.join("reference.csv").is_file());

    // tampering with a stored metric is caught
    let records = run.join("records.jsonl");
    let text = std::fs::read_to_string(&records).unwrap();
    let tampered = text.replacen("\"production_similarity\":", "\"production_similarity\":0.5,\"x\":", 1);
    std::fs::write(&records, tampered).unwrap();
    let out = langlab(&["eval", "--run", r]);
    assert!(!out.status.success());
}

#[test]
fn icl_with_mock_backends() {
    let tmp = tempfile::tempdir().unwrap();
    let langs = tmp.path().join("langs");
    let l = langs.to_str().unwrap();
    ok(&["gen-langs", "--targets", "0.5", "--out", l]);
    let out = tmp.path().join("icl");
    let stdout = ok(&["icl", "--langs", l, "--backend", "gold-echo", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("error rate 0.0000"), "{stdout}");
    assert_eq!(
        std::fs::read_to_string(out.join("icl_records.jsonl")).unwrap().lines().count(),
        36
    );
    let stdout = ok(&["icl", "--langs", l, "--backend", "constant", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("generalization 0.0000"), "{stdout}");
}

#[test]
fn http_backend_requires_an_endpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let langs = tmp.path().join("langs");
    let l = langs.to_str().unwrap();
    ok(&["gen-langs", "--targets", "0.5", "--out", l]);
    let out = Command::new(env!("CARGO_BIN_EXE_langlab"))
        .args(["icl", "--langs", l, "--backend", "http"])
        .env_remove("LANGLAB_COMPLETION_URL")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("LANGLAB_COMPLETION_URL"));
}
