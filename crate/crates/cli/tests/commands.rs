use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn situmatch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_situmatch"))
        .current_dir(dir)
        .args(["--config", "run.toml"])
        .args(args)
        .output()
        .unwrap()
}

const CONFIG: &str = r#"
seed = 3
output_dir = "out"

[paths]
submissions = "synth/submissions.jsonl"
comments = "synth/comments.jsonl"
bots = "synth/bots.txt"

[synth]
out_dir = "synth"
n_docs = 500

[study.topics]
k_candidates = [2]

[study.topics.lda]
iterations = 50
burn_in = 10
samples = 5

[study.matching.bootstrap]
b = 100
"#;

#[test]
fn unknown_key_fails_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "output_dir = \"o\"\n[study.propensity]\nepochz = 3\n",
    )
    .unwrap();
    let out = situmatch(dir.path(), &["check"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("study.propensity.epochz"), "{err}");
}

#[test]
fn synth_then_all_then_report_is_up_to_date() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();

    let out = situmatch(dir.path(), &["run", "match"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("run stage `ingest` first") || err.contains("paths.submissions"),
        "{err}"
    );

    assert!(situmatch(dir.path(), &["run", "synth"]).status.success());
    let out = situmatch(dir.path(), &["all"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/report/sweep.csv").exists());

    let out = situmatch(dir.path(), &["run", "report"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("up to date"));

    let out = situmatch(dir.path(), &["run", "bogus"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown stage"));
}
